#include "ritw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ritw/error.hpp"

namespace ritw {

nlohmann::json MetricReport::to_json() const {
  return {{"name", name}, {"value", value}, {"n", n}, {"metadata", metadata}};
}

double rmse(const std::vector<double>& estimates, const std::vector<double>& truth) {
  require(estimates.size() == truth.size(), "rmse: length mismatch ", estimates.size(),
          " vs ", truth.size());
  require(!estimates.empty(), "rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    double d = estimates[i] - truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(estimates.size()));
}

// Mid-ranks (1-based), averaging over ties.
static std::vector<double> mid_ranks(const std::vector<double>& v) {
  std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "auc: length mismatch ", scores.size(), " vs ",
          labels.size());
  std::size_t pos = 0, neg = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, "auc: labels must be 0/1, got ", l);
    if (l == 1) ++pos;
    else ++neg;
  }
  require(pos > 0 && neg > 0, "auc: both classes must be present (", pos, " positives, ",
          neg, " negatives)");
  // Rank-sum form: AUC = (sum of positive mid-ranks - pos*(pos+1)/2) / (pos*neg);
  // mid-ranks give ties exactly half credit.
  std::vector<double> ranks = mid_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) rank_sum += ranks[i];
  }
  double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), "spearman: length mismatch ", x.size(), " vs ", y.size());
  require(x.size() >= 2, "spearman: need at least 2 points");
  std::vector<double> rx = mid_ranks(x), ry = mid_ranks(y);
  double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  require(sxx > 0.0 && syy > 0.0, "spearman: zero rank variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ritw
