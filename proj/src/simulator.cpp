#include "ritw/simulator.hpp"

#include <cmath>

#include "ritw/error.hpp"

namespace ritw {

namespace {

double draw_coefficient(Rng& rng) {
  static const double values[5] = {0, 1, 2, 3, 4};
  static const double cum[5] = {0.30, 0.55, 0.75, 0.90, 1.0};
  double u = rng.uniform();
  for (int i = 0; i < 5; ++i) {
    if (u < cum[i]) return values[i];
  }
  return values[4];
}

// Sigma = G G^T / d + 0.1 I with G standard normal: positive definite and
// unit-scale. Returns the lower Cholesky factor.
std::vector<double> baseline_cholesky(int d, std::uint64_t seed) {
  Rng rng(seed, "covariance");
  std::vector<double> g(static_cast<std::size_t>(d) * d);
  for (double& v : g) v = rng.normal();
  std::vector<double> sigma(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += g[i * d + k] * g[j * d + k];
      acc /= d;
      if (i == j) acc += 0.1;
      sigma[i * d + j] = acc;
      sigma[j * d + i] = acc;
    }
  std::vector<double> chol(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      double acc = sigma[i * d + j];
      for (int k = 0; k < j; ++k) acc -= chol[i * d + k] * chol[j * d + k];
      if (i == j) {
        require(acc > 0.0, "simulator: covariance factorization failed");
        chol[i * d + i] = std::sqrt(acc);
      } else {
        chol[i * d + j] = acc / chol[j * d + j];
      }
    }
  }
  return chol;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

void SimConfig::validate() const {
  require(samples > 0, "sim config: n must be positive");
  require(baseline_dim > 0, "sim config: d must be positive");
  require(horizon >= 1, "sim config: T must be at least 1");
  require(effect_constant > horizon, "sim config: C (", effect_constant,
          ") must exceed T (", horizon, ") so all true effects stay positive");
  require(rho >= 1.0, "sim config: rho must be >= 1");
  require(decay_rate >= 0.0, "sim config: decay rate must be non-negative");
  require(outcome_noise_sd >= 0.0, "sim config: outcome noise must be non-negative");
}

GroundTruth sample_coefficients(int baseline_dim, int horizon, double effect_constant,
                                std::uint64_t seed) {
  require(baseline_dim > 0, "sample_coefficients: d must be positive");
  Rng rng(seed, "coefficients");
  GroundTruth truth;
  truth.beta_baseline.resize(baseline_dim);
  for (double& v : truth.beta_baseline) v = draw_coefficient(rng);
  truth.beta_covariate.resize(baseline_dim);
  double norm = 0.0;
  while (norm == 0.0) {
    for (double& v : truth.beta_covariate) v = draw_coefficient(rng);
    norm = std::sqrt(dot(truth.beta_covariate, truth.beta_covariate));
  }
  for (double& v : truth.beta_covariate) v /= norm;
  truth.ate_by_time.resize(horizon);
  for (int t = 1; t <= horizon; ++t)
    truth.ate_by_time[t - 1] = ground_truth_ate(effect_constant, t);
  return truth;
}

double outcome_mean(const std::vector<double>& baseline, int initiation_step,
                    const SimConfig& config, const GroundTruth& truth) {
  int T = config.horizon;
  double beta_dot_b = dot(truth.beta_covariate, baseline);
  // x_T = b - decay*T*1 (+ boost); only its projection on beta matters.
  double ones_dot_beta = 0.0;
  for (double v : truth.beta_covariate) ones_dot_beta += v;
  double x_term = beta_dot_b - config.decay_rate * T * ones_dot_beta;
  if (initiation_step >= 0) {
    int t = initiation_step + 1;
    // boost (C - t) * beta projected on beta: ||beta|| = 1.
    x_term += config.effect_constant - t;
  }
  return dot(truth.beta_baseline, baseline) + x_term;
}

Cohort generate_randomized_cohort(const SimConfig& config, const GroundTruth& truth) {
  config.validate();
  int d = config.baseline_dim, T = config.horizon;
  std::vector<double> chol = baseline_cholesky(d, config.seed);

  Cohort cohort;
  cohort.schema.baseline_dim = d;
  cohort.schema.horizon = T;
  cohort.schema.tasks = 1;
  cohort.schema.binary_outcome = config.binary_outcome;
  cohort.schema.truth = truth;
  cohort.records.resize(config.samples);

  for (int i = 0; i < config.samples; ++i) {
    Rng rng(config.seed, "record", static_cast<std::uint64_t>(i));
    PatientRecord& r = cohort.records[i];
    r.id = i;
    std::vector<double> z(d);
    for (double& v : z) v = rng.normal();
    r.baseline.assign(d, 0.0);
    for (int row = 0; row < d; ++row) {
      double acc = 0.0;
      for (int k = 0; k <= row; ++k) acc += chol[row * d + k] * z[k];
      r.baseline[row] = acc;
    }

    // Equal probabilities over initiation at time 1..T or never.
    std::uint64_t arm = rng.uniform_int(static_cast<std::uint64_t>(T) + 1);
    int init_step = arm == static_cast<std::uint64_t>(T) ? -1 : static_cast<int>(arm);

    r.treatments.assign(T, 0);
    r.covariates.assign(T, std::vector<double>(d, 0.0));
    for (int t = 0; t < T; ++t) {
      double decay = config.decay_rate * (t + 1);
      for (int j = 0; j < d; ++j) r.covariates[t][j] = r.baseline[j] - decay;
      if (init_step >= 0 && t >= init_step) {
        r.treatments[t] = 1;
        double boost = config.effect_constant - (init_step + 1);
        for (int j = 0; j < d; ++j) r.covariates[t][j] += boost * truth.beta_covariate[j];
      }
    }

    double mean = outcome_mean(r.baseline, init_step, config, truth);
    double linear = mean + config.outcome_noise_sd * rng.normal();
    if (config.binary_outcome) {
      double p = 1.0 / (1.0 + std::exp(-linear / config.binary_scale));
      r.outcomes = {rng.uniform() < p ? 1.0 : 0.0};
    } else {
      r.outcomes = {linear};
    }
  }
  return cohort;
}

Cohort apply_selection_bias(const Cohort& cohort, const GroundTruth& truth,
                            double lambda, double rho, std::uint64_t seed) {
  require(rho >= 1.0, "apply_selection_bias: rho must be >= 1");
  int T = cohort.schema.horizon;
  Cohort biased;
  biased.schema = cohort.schema;
  biased.records.reserve(cohort.records.size());
  for (const auto& r : cohort.records) {
    int init = r.initiation_step();
    if (init < 0) {
      biased.records.push_back(r);  // controls always survive
      continue;
    }
    double score = 0.0;
    for (std::size_t j = 0; j < r.baseline.size(); ++j)
      score += truth.beta_baseline[j] * r.baseline[j];
    if (score < lambda) continue;
    int t = init + 1;
    double removal = std::isinf(rho) ? 0.0 : (t - 1) / (rho * T);
    // One uniform per record id, shared across (lambda, rho) settings, so
    // growing either bias knob removes a superset of records.
    double u = Rng(seed, "bias", static_cast<std::uint64_t>(r.id)).uniform();
    if (u < removal) continue;
    biased.records.push_back(r);
  }
  if (biased.treated_count() == 0) {
    biased.warning = "selection bias removed every treated record";
  }
  return biased;
}

double ground_truth_ate(double effect_constant, int time) {
  require(time >= 1, "ground_truth_ate: time must be >= 1, got ", time);
  return effect_constant - time;
}

}  // namespace ritw
