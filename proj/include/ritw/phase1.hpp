// Cohort reweighting: empirical numerator probabilities, the recurrent
// propensity model, and stabilized-weight assembly in log space.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ritw/checkpoint.hpp"
#include "ritw/cohort.hpp"
#include "ritw/trainer.hpp"

namespace ritw {

// Empirical conditional probabilities Pr(a_m | treatment prefix), kept as
// exact counts. Keys are the step m (1-based) and the realized prefix of
// treatments before m.
class NumeratorTable {
 public:
  struct Entry {
    int step = 0;                 // m
    std::vector<int> prefix;      // a_1 .. a_{m-1}
    std::map<int, std::int64_t> action_counts;
    std::int64_t prefix_count = 0;
  };

  static NumeratorTable estimate(const Cohort& cohort);

  // Exact count ratio; errors when the prefix was never observed.
  double probability(int step, const std::vector<int>& prefix, int action) const;

  // Log probability with an add-one floor over actions, applied only when the
  // (prefix, action) pair has zero count (held-out sequences).
  double log_probability(int step, const std::vector<int>& prefix, int action) const;

  const std::vector<Entry>& entries() const { return entries_; }
  int horizon() const { return horizon_; }
  int num_actions() const { return num_actions_; }

 private:
  const Entry* find(int step, const std::vector<int>& prefix) const;

  std::vector<Entry> entries_;
  std::map<std::pair<int, std::string>, std::size_t> index_;
  int horizon_ = 0;
  int num_actions_ = 2;
};

struct Phase1Hyper {
  int max_steps = 2000;  // N1, counted in batches
  int batch_size = 128;
  double learning_rate = 1e-3;
  double l2 = 0.0;  // smoothing coefficient on the head weights
  int hidden_size = 32;
  int layers = 1;
  double dropout = 0.0;
  double clip_norm = 5.0;  // 0 disables clipping
  int eval_every = 25;
  int patience = 20;  // evaluations without improvement before stopping
  double train_fraction = 0.75;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static Phase1Hyper from_json(const nlohmann::json& j);
};

// Minimizes the propensity cross entropy over at-risk steps (the treatment is
// deterministic after initiation, so those steps carry no information).
// The returned checkpoint stores dims, hyperparameters and the loss log.
ModelCheckpoint train_phase1(const Cohort& cohort, const Phase1Hyper& hyper);

// The exact training loss as a tape node, for gradient checking. The tape
// must be bound to a store initialized by phase1_initial_params.
ParameterStore phase1_initial_params(const Cohort& cohort, const Phase1Hyper& hyper);
Tape::Var phase1_loss(Tape& tape, const Cohort& cohort, const std::vector<int>& idx,
                      const Phase1Hyper& hyper);

TrainLog phase1_train_log(const ModelCheckpoint& ckpt);

// Pr(a_m = 1 | h_{m-1}, b) for every record and step m = 1..T, clamped away
// from 0/1 before any logs are taken downstream.
std::vector<std::vector<double>> emit_propensities(const Cohort& cohort,
                                                   const ModelCheckpoint& ckpt);

struct WeightEntry {
  int id = 0;
  double weight = 0.0;
  std::vector<double> log_numerators;
  std::vector<double> log_denominators;
};

struct StabilizedWeightSet {
  std::vector<WeightEntry> entries;  // cohort order
  bool smoothed = false;
  double smoothing_l2 = 0.0;
  bool truncated = false;
  double q_lo = 0.0, q_hi = 1.0;

  std::string flag() const;
  std::vector<double> values() const;
  const WeightEntry& by_id(int id) const;
  bool has_id(int id) const;
};

// Log-space accumulation of numerator and denominator probabilities up to and
// including the initiation step (controls run the full horizon), then one exp.
StabilizedWeightSet compute_stabilized_weights(
    const NumeratorTable& numerators,
    const std::vector<std::vector<double>>& propensities, const Cohort& cohort,
    double smoothing_l2 = 0.0);

// Clamp to the nearest-rank [q_lo, q_hi] quantiles of the current values.
StabilizedWeightSet truncate_weights(const StabilizedWeightSet& weights, double q_lo,
                                     double q_hi);

struct WeightDiagnostics {
  double q01 = 0.0;
  double mean = 0.0;
  double q99 = 0.0;
  double min = 0.0;
  double max = 0.0;

  nlohmann::json to_json() const;
};

// Exact order statistics (nearest-rank quantiles) of any value list.
WeightDiagnostics weight_diagnostics(const std::vector<double>& values);

// Nearest-rank quantile on a copy of the data.
double nearest_rank_quantile(std::vector<double> values, double q);

void save_weights_csv(const StabilizedWeightSet& weights, const std::string& path);
StabilizedWeightSet load_weights_csv(const std::string& path);

}  // namespace ritw
