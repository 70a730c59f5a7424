// Synthetic longitudinal benchmark with known time-varying treatment effects.
//
// Baselines are multivariate normal; untreated covariates decay at a fixed
// rate; initiating treatment at time t adds (C - t) * beta to every later
// covariate vector, which makes the true effect of initiation at t exactly
// C - t on the final outcome. Selection bias is injected afterwards by
// removing treated records, controls are always kept.
#pragma once

#include <cstdint>
#include <limits>

#include "ritw/cohort.hpp"
#include "ritw/rng.hpp"

namespace ritw {

struct SimConfig {
  int samples = 10000;       // n
  int baseline_dim = 20;     // d
  int horizon = 3;           // T
  double effect_constant = 4.0;  // C, must exceed T so all true effects are positive
  double lambda = -std::numeric_limits<double>::infinity();  // time-invariant cut
  double rho = 1.0;          // time-varying removal divisor, >= 1 (may be +inf)
  double decay_rate = 0.1;
  double outcome_noise_sd = 1.0;
  bool binary_outcome = false;
  double binary_scale = 5.0;  // logit scale when binarizing the linear outcome
  std::uint64_t seed = 0;

  void validate() const;
};

// Coefficient pool {0,1,2,3,4} with probabilities (.3,.25,.2,.15,.1);
// beta_covariate is L2-normalized (all-zero draws are redrawn).
GroundTruth sample_coefficients(int baseline_dim, int horizon, double effect_constant,
                                std::uint64_t seed);

// Treatment initiation uniform over {time 1..T, never}; outcome
// Normal(beta_b . b + beta . x_T, noise_sd^2).
Cohort generate_randomized_cohort(const SimConfig& config, const GroundTruth& truth);

// Removes treated records with beta_b . b < lambda, then the survivors with
// probability (t-1)/(rho*T) by initiation time t. Controls are untouched.
// Uses a bias RNG stream keyed by record id, separate from generation, so the
// same cohort re-biases reproducibly at any (lambda, rho).
Cohort apply_selection_bias(const Cohort& cohort, const GroundTruth& truth,
                            double lambda, double rho, std::uint64_t seed);

// C - t, the true average effect of initiating treatment at time t >= 1.
double ground_truth_ate(double effect_constant, int time);

// Outcome mean for a given baseline and initiation time (-1 = never); the
// noise-free part of the generator, exposed for oracle tests.
double outcome_mean(const std::vector<double>& baseline, int initiation_step,
                    const SimConfig& config, const GroundTruth& truth);

}  // namespace ritw
