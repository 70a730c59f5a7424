#include "ritw/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "ritw/error.hpp"
#include "ritw/rng.hpp"

namespace ritw {

SplitIndices split_cohort(std::size_t n, double train_fraction, std::uint64_t seed) {
  require(n > 0, "split: empty cohort");
  require(train_fraction > 0.0 && train_fraction <= 1.0, "split: bad train fraction ",
          train_fraction);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, "split");
  for (std::size_t i = n - 1; i > 0; --i) {
    std::size_t j = rng.uniform_int(i + 1);
    std::swap(order[i], order[j]);
  }
  std::size_t n_train = std::max<std::size_t>(1, static_cast<std::size_t>(n * train_fraction));
  n_train = std::min(n_train, n);
  SplitIndices split;
  split.train.assign(order.begin(), order.begin() + n_train);
  split.val.assign(order.begin() + n_train, order.end());
  if (split.val.empty()) split.val = split.train;  // tiny cohorts validate in-sample
  return split;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& e : entries)
    steps.push_back({{"step", e.step}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  return {{"entries", steps},
          {"best_val_loss", best_val_loss},
          {"steps_used", steps_used},
          {"first_step_at_threshold", first_step_at_threshold}};
}

TrainLog TrainLog::from_json(const nlohmann::json& j) {
  TrainLog log;
  for (const auto& e : j.at("entries")) {
    log.entries.push_back({e.at("step").get<int>(), e.at("train_loss").get<double>(),
                           e.at("val_loss").get<double>()});
  }
  log.best_val_loss = j.at("best_val_loss").get<double>();
  log.steps_used = j.at("steps_used").get<int>();
  log.first_step_at_threshold = j.at("first_step_at_threshold").get<int>();
  return log;
}

namespace batch {

Array baseline_matrix(const Cohort& cohort, const std::vector<int>& idx) {
  std::size_t d = cohort.schema.baseline_dim;
  Array out = Array::zeros(idx.size(), d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& rec = cohort.records[idx[r]];
    for (std::size_t j = 0; j < d; ++j) out.at(r, j) = rec.baseline[j];
  }
  return out;
}

Array step_input(const Cohort& cohort, const std::vector<int>& idx, int t,
                 const std::vector<int>* override_treatments, bool zero_covariates) {
  std::size_t d = cohort.schema.baseline_dim;
  Array out = Array::zeros(idx.size(), d + 1);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& rec = cohort.records[idx[r]];
    if (!zero_covariates) {
      for (std::size_t j = 0; j < d; ++j) out.at(r, j) = rec.covariates[t][j];
    }
    int a = override_treatments ? (*override_treatments)[t] : rec.treatments[t];
    out.at(r, d) = static_cast<double>(a);
  }
  return out;
}

Array outcome_matrix(const Cohort& cohort, const std::vector<int>& idx) {
  std::size_t k = cohort.schema.tasks;
  Array out = Array::zeros(idx.size(), k);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& rec = cohort.records[idx[r]];
    for (std::size_t j = 0; j < k; ++j) out.at(r, j) = rec.outcomes[j];
  }
  return out;
}

}  // namespace batch

}  // namespace ritw
