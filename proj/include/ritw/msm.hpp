// Marginal structural models over predicted potential-outcome likelihoods,
// plus the plain and regression-adjusted cohort-level effect estimators.
//
// The pooled design has one row per (patient, treatment query); never-treat
// rows carry the horizon as their time index and no initiation indicator
// (the reference category).
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ritw/cohort.hpp"
#include "ritw/phase1.hpp"

namespace ritw {

struct MsmRow {
  int id = 0;
  double time = 0.0;              // m
  int arm = -1;                   // 0-based initiation index, -1 = never treated
  int group = -1;                 // HTE group indicator, -1 when absent
  std::vector<double> baseline;   // h(b); identity summary by default
  double target = 0.0;            // likelihood in [0,1] (or real-valued outcome)
  double weight = 1.0;            // W_s
};

// Fully materialized regression problem.
struct DesignMatrix {
  std::size_t n = 0, p = 0;
  std::vector<double> x;  // row-major n x p
  std::vector<double> y;
  std::vector<double> w;
  std::vector<std::string> columns;

  double at(std::size_t r, std::size_t c) const { return x[r * p + c]; }
};

struct MsmFit {
  std::vector<double> beta;
  std::vector<std::string> columns;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  std::string solver;

  double coefficient(const std::string& column) const;
  bool has_column(const std::string& column) const;
};

struct MsmOptions {
  double l2 = 0.0;
  bool force_gradient_descent = false;  // skip IRLS (used by equivalence tests)
  int max_iterations = 100;             // Newton steps
  int max_gd_iterations = 200000;
};

// One row per (patient, query) for queries {initiate at 0..T-1, never}.
// Predictions are per-record per-task; `task` picks the outcome column.
std::vector<MsmRow> build_ate_design(
    const Cohort& cohort,
    const std::map<std::string, std::vector<std::vector<double>>>& predictions_by_query,
    const StabilizedWeightSet& weights, int task = 0);

DesignMatrix ate_design_matrix(const std::vector<MsmRow>& rows, int horizon);
DesignMatrix hte_design_matrix(const std::vector<MsmRow>& rows);

// Weighted logistic regression with soft targets in [0,1]: iteratively
// reweighted least squares with step halving, falling back to gradient
// descent with backtracking when the normal equations go non-positive.
// Non-convergence is flagged on the fit, never silently dropped.
MsmFit fit_weighted_logistic(const DesignMatrix& design, const MsmOptions& options = {});

// exp(beta_m) per initiation time, ordered by m. Requires a converged fit.
std::vector<std::pair<int, double>> ate_odds_ratios(const MsmFit& fit);

// True when the odds-ratio step function weakly increases with m.
bool odds_ratios_monotone(const std::vector<std::pair<int, double>>& ors);

// Eq-3-style fit over rows carrying a group indicator; both groups required.
MsmFit fit_hte(const std::vector<MsmRow>& rows, const MsmOptions& options = {});

// exp(beta_a) for group 0, exp(beta_a + beta_ag) for group 1.
double conditional_or(const MsmFit& fit, int group);

// Difference of (weighted) group means: treated-at-t minus never-treated,
// keyed by 1-based initiation time.
std::map<int, double> empirical_ate(const Cohort& cohort,
                                    const StabilizedWeightSet* weights = nullptr);

// Weighted least squares of the observed outcome on arm indicators and the
// baseline, with Phase I weights: the pipeline's covariate-adjusted effect
// estimate for real-valued outcomes. Keyed by 1-based initiation time.
struct LinearAteFit {
  std::map<int, double> ate_by_time;
  std::vector<double> beta;
  std::vector<std::string> columns;
};
LinearAteFit weighted_linear_ate(const Cohort& cohort, const StabilizedWeightSet& weights,
                                 double ridge = 1e-9);

}  // namespace ritw
