// Shared evaluation metrics.
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace ritw {

struct MetricReport {
  std::string name;
  double value = 0.0;
  std::size_t n = 0;
  std::map<std::string, std::string> metadata;

  nlohmann::json to_json() const;
};

double rmse(const std::vector<double>& estimates, const std::vector<double>& truth);

// Pairwise concordance probability with half credit for ties; requires both
// classes present. O(n log n).
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

// Pearson correlation of mid-ranks (average ranks for ties); errors on zero
// rank variance.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace ritw
