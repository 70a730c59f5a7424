// Shared training-loop machinery: deterministic splits, batch sampling and
// the loss trajectory that checkpoints carry around.
#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ritw/cohort.hpp"
#include "ritw/tape.hpp"

namespace ritw {

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
};

// Shuffled split; fraction is the training share.
SplitIndices split_cohort(std::size_t n, double train_fraction, std::uint64_t seed);

struct TrainLogEntry {
  int step = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  double best_val_loss = 0.0;
  int steps_used = 0;
  int first_step_at_threshold = -1;  // -1 when the threshold was never reached

  nlohmann::json to_json() const;
  static TrainLog from_json(const nlohmann::json& j);
};

namespace batch {

// Rows of the baseline matrix for the given record indices.
Array baseline_matrix(const Cohort& cohort, const std::vector<int>& idx);

// [x_t ; a_t] rows for step t (0-based). An override sequence replaces the
// treatment channel for every record; zero_covariates blanks the x block.
Array step_input(const Cohort& cohort, const std::vector<int>& idx, int t,
                 const std::vector<int>* override_treatments = nullptr,
                 bool zero_covariates = false);

Array outcome_matrix(const Cohort& cohort, const std::vector<int>& idx);

}  // namespace batch

}  // namespace ritw
