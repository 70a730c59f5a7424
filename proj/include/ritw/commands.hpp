// Command implementations behind the CLI. Each command is a pure function of
// (config, input files, seed): it reads what the config points at, writes its
// declared outputs under out_dir, and prints a short summary. Errors throw
// ritw::Error; the CLI maps them to non-zero exits.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ritw/config.hpp"
#include "ritw/msm.hpp"

namespace ritw {

void cmd_simulate(const RunConfig& cfg);
void cmd_train_iptw(const RunConfig& cfg);
void cmd_train_outcome(const RunConfig& cfg);
void cmd_train_e2e(const RunConfig& cfg);
void cmd_estimate_ate(const RunConfig& cfg);
void cmd_estimate_hte(const RunConfig& cfg);
void cmd_diagnostics(const RunConfig& cfg);

// Effect estimates on one cohort: the unweighted and weighted difference of
// group means, and the weighted baseline-adjusted regression estimate.
struct AteEstimates {
  std::map<int, double> unadjusted;
  std::map<int, double> weighted;
  std::map<int, double> adjusted;
  std::optional<double> rmse_unadjusted;
  std::optional<double> rmse_weighted;
  std::optional<double> rmse_adjusted;
};
AteEstimates estimate_effects(const Cohort& cohort, const StabilizedWeightSet& weights);

struct SweepCell {
  double lambda = 0.0;
  double rho = 1.0;
  double rmse_unadjusted = 0.0;
  double rmse_weighted = 0.0;
  double rmse_adjusted = 0.0;
  double treated_count = 0.0;
  std::string error;  // non-empty when the cell failed
};

struct SweepResult {
  std::vector<double> lambdas;
  std::vector<double> rhos;
  int seeds = 3;
  std::vector<SweepCell> cells;     // seed-averaged, ordered by (lambda, rho)
  std::vector<SweepCell> raw;       // per-seed cells; SweepCell.error unused
  std::vector<int> raw_seed_index;  // parallel to raw
};

// Re-biases one shared randomized cohort per repeat, runs Phase I and the
// effect estimators per (lambda, rho) cell, and averages over repeats.
SweepResult run_sweep(const RunConfig& cfg, const std::vector<double>& lambdas,
                      const std::vector<double>& rhos, int seeds);

void cmd_sweep(const RunConfig& cfg, const std::vector<double>& lambdas,
               const std::vector<double>& rhos, int seeds);

}  // namespace ritw
