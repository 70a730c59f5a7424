// Weighted outcome progression on the reweighted cohort, counterfactual
// prediction under imposed treatment sequences, and the alternating
// single-encoder trainer for the pipeline-vs-end-to-end comparison.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ritw/checkpoint.hpp"
#include "ritw/cohort.hpp"
#include "ritw/nets.hpp"
#include "ritw/phase1.hpp"

namespace ritw {

enum class TaskLoss { kBinaryCrossEntropy, kMeanSquaredError };

// Outcome task layout; each logistic task pairs with binary cross entropy and
// each identity task with mean squared error.
struct TaskSpec {
  std::vector<Link> links;
  std::vector<TaskLoss> losses;

  static TaskSpec continuous(int tasks = 1);
  static TaskSpec binary(int tasks = 1);
  void validate() const;
  int size() const { return static_cast<int>(links.size()); }

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
};

// A treatment history to impose when predicting potential outcomes.
struct InterventionQuery {
  std::optional<int> initiation_step;  // 0-based step index; empty = never treat
  bool use_observed_covariates = true;

  static InterventionQuery never();
  static InterventionQuery initiate_at(int step);
  // Validates length and the absorbing 0...01...1 form.
  static InterventionQuery from_sequence(const std::vector<int>& seq, int horizon);

  std::vector<int> sequence(int horizon) const;
  std::string label() const;
};

struct Phase2Hyper {
  int max_steps = 2000;  // N2, counted in batches
  int batch_size = 128;
  double learning_rate = 1e-3;
  double l2 = 0.0;
  int hidden_size = 32;
  int layers = 1;
  bool bidirectional = false;
  double dropout = 0.0;
  double clip_norm = 5.0;
  double adam_epsilon = 1e-8;
  int eval_every = 25;
  int patience = 20;
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
  bool normalize_batch_weights = false;  // divide batch weights by their mean
  bool use_covariates = true;            // feed x_t into the encoder
  bool use_baseline = true;              // feed b into the head
  bool e2e_outcome_updates = true;       // alternation can run one-sided
  // Validation-loss target used for steps-to-threshold reporting; NaN disables.
  double val_loss_threshold = std::numeric_limits<double>::quiet_NaN();

  nlohmann::json to_json() const;
  static Phase2Hyper from_json(const nlohmann::json& j);
};

// Minimizes the weight-scaled multi-task loss; weights are fixed constants
// supplied by Phase I and must cover every record (positive values only).
ModelCheckpoint train_phase2(const Cohort& cohort, const StabilizedWeightSet& weights,
                             const TaskSpec& tasks, const Phase2Hyper& hyper);

// The exact training loss as a tape node, for gradient checking. The tape
// must be bound to a store initialized by phase2_initial_params.
ParameterStore phase2_initial_params(const Cohort& cohort, const TaskSpec& tasks,
                                     const Phase2Hyper& hyper);
Tape::Var phase2_loss(Tape& tape, const Cohort& cohort, const std::vector<int>& idx,
                      const std::vector<double>& record_weights, const TaskSpec& tasks,
                      const Phase2Hyper& hyper);

TrainLog phase2_train_log(const ModelCheckpoint& ckpt);

// Per-record predictions with the treatment channel (and the head's a_T
// input) replaced by the query sequence. Covariates and baseline stay
// observed unless the query says otherwise.
std::vector<std::vector<double>> predict_potential_outcomes(
    const ModelCheckpoint& ckpt, const Cohort& cohort, const InterventionQuery& query);

// Factual predictions: every record keeps its own observed treatments.
std::vector<std::vector<double>> predict_factual(const ModelCheckpoint& ckpt,
                                                 const Cohort& cohort);

// One shared encoder with both heads, alternating one propensity batch with
// one outcome batch whose weights come from the current propensity head
// (recomputed per step, treated as constants).
ModelCheckpoint train_end_to_end(const Cohort& cohort, const TaskSpec& tasks,
                                 const Phase2Hyper& hyper);

struct ModeReport {
  std::string mode;  // "pipeline" or "end_to_end"
  int steps_to_threshold = -1;
  std::string threshold_metric;
  double threshold_value = 0.0;
  double final_metric = 0.0;

  nlohmann::json to_json() const;
};

}  // namespace ritw
