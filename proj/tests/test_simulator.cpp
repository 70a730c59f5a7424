#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ritw/error.hpp"
#include "ritw/metrics.hpp"
#include "ritw/msm.hpp"
#include "ritw/simulator.hpp"

using namespace ritw;

namespace {

SimConfig small_config(std::uint64_t seed, int n = 2000) {
  SimConfig cfg;
  cfg.samples = n;
  cfg.baseline_dim = 20;
  cfg.horizon = 3;
  cfg.effect_constant = 4.0;
  cfg.seed = seed;
  return cfg;
}

double score(const GroundTruth& truth, const PatientRecord& rec) {
  double s = 0.0;
  for (std::size_t j = 0; j < rec.baseline.size(); ++j)
    s += truth.beta_baseline[j] * rec.baseline[j];
  return s;
}

}  // namespace

TEST_CASE("coefficient pool frequencies and normalization") {
  // Pool {0,1,2,3,4} with probabilities (.3,.25,.2,.15,.1); beta normalized.
  int zeros = 0, fours = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 5000; ++seed) {
    GroundTruth t = sample_coefficients(20, 3, 4.0, seed);
    for (double v : t.beta_baseline) {
      zeros += v == 0.0 ? 1 : 0;
      fours += v == 4.0 ? 1 : 0;
      ++total;
    }
    double norm = 0.0;
    for (double v : t.beta_covariate) norm += v * v;
    CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-12);
  }
  CHECK(total == 100000);
  CHECK(std::fabs(static_cast<double>(zeros) / total - 0.30) < 0.01);
  CHECK(std::fabs(static_cast<double>(fours) / total - 0.10) < 0.01);

  GroundTruth a = sample_coefficients(20, 3, 4.0, 99);
  GroundTruth b = sample_coefficients(20, 3, 4.0, 99);
  CHECK(a.beta_baseline == b.beta_baseline);
  CHECK(a.beta_covariate == b.beta_covariate);
  CHECK(a.ate_by_time == std::vector<double>{3.0, 2.0, 1.0});
}

TEST_CASE("initiation times are uniform over {1..T, never}") {
  SimConfig cfg = small_config(7, 100000);
  cfg.baseline_dim = 4;  // frequency check only needs the arm draw
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  std::vector<int> counts(cfg.horizon + 1, 0);
  for (const auto& rec : cohort.records) {
    int init = rec.initiation_step();
    counts[init < 0 ? cfg.horizon : init] += 1;
  }
  for (int arm = 0; arm <= cfg.horizon; ++arm) {
    double freq = static_cast<double>(counts[arm]) / cfg.samples;
    CHECK(std::fabs(freq - 0.25) < 0.01);
  }
}

TEST_CASE("noise-free, decay-free effects are exact per baseline") {
  SimConfig cfg = small_config(11, 10);
  cfg.outcome_noise_sd = 0.0;
  cfg.decay_rate = 0.0;
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  for (const auto& rec : cohort.records) {
    for (int t = 1; t <= cfg.horizon; ++t) {
      double treated = outcome_mean(rec.baseline, t - 1, cfg, truth);
      double never = outcome_mean(rec.baseline, -1, cfg, truth);
      CHECK(treated - never == doctest::Approx(cfg.effect_constant - t).epsilon(1e-12));
    }
  }
}

TEST_CASE("covariate process: boost is exactly (C - t) * beta after initiation") {
  SimConfig cfg = small_config(13, 500);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  for (const auto& rec : cohort.records) {
    int init = rec.initiation_step();
    for (int t = 0; t < cfg.horizon; ++t) {
      for (int j = 0; j < cfg.baseline_dim; ++j) {
        double decayed = rec.baseline[j] - cfg.decay_rate * (t + 1);
        double expected = decayed;
        if (init >= 0 && t >= init)
          expected += (cfg.effect_constant - (init + 1)) * truth.beta_covariate[j];
        CHECK(rec.covariates[t][j] == doctest::Approx(expected).epsilon(1e-12));
      }
    }
    if (init >= 0) {
      for (int t = 0; t < init; ++t) CHECK(rec.treatments[t] == 0);
      for (int t = init; t < cfg.horizon; ++t) CHECK(rec.treatments[t] == 1);
    }
  }
}

TEST_CASE("randomized cohort: treated and control baselines overlap") {
  SimConfig cfg = small_config(17, 10000);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  double treated_sum = 0, control_sum = 0, treated_sq = 0, control_sq = 0;
  std::size_t nt = 0, nc = 0;
  for (const auto& rec : cohort.records) {
    double s = score(truth, rec);
    if (rec.treated()) {
      treated_sum += s;
      treated_sq += s * s;
      ++nt;
    } else {
      control_sum += s;
      control_sq += s * s;
      ++nc;
    }
  }
  double mt = treated_sum / nt, mc = control_sum / nc;
  double vt = treated_sq / nt - mt * mt, vc = control_sq / nc - mc * mc;
  double se = std::sqrt(vt / nt + vc / nc);
  CHECK(std::fabs(mt - mc) < 3.0 * se);
}

TEST_CASE("empirical effect on the randomized cohort is close to truth") {
  SimConfig cfg = small_config(20, 10000);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  std::map<int, double> est = empirical_ate(cohort);
  std::vector<double> got = {est[1], est[2], est[3]};
  CHECK(std::fabs(rmse(got, truth.ate_by_time) - 0.21) <= 0.15);
}

TEST_CASE("selection bias: no-op settings keep the cohort unchanged") {
  SimConfig cfg = small_config(23, 3000);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  Cohort biased = apply_selection_bias(
      cohort, truth, -std::numeric_limits<double>::infinity(),
      std::numeric_limits<double>::infinity(), cfg.seed);
  CHECK(biased.size() == cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i)
    CHECK(biased.records[i].id == cohort.records[i].id);
}

TEST_CASE("selection bias: hard threshold, first-arm immunity, survival rate") {
  SimConfig cfg = small_config(29, 100000);
  cfg.baseline_dim = 6;
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  Cohort biased = apply_selection_bias(cohort, truth, 0.0, 1.0, cfg.seed);

  std::size_t controls_before = cohort.size() - cohort.treated_count();
  std::size_t controls_after = biased.size() - biased.treated_count();
  CHECK(controls_before == controls_after);

  for (const auto& rec : biased.records) {
    if (rec.treated()) CHECK(score(truth, rec) >= 0.0);
  }

  // Treated-at-1 records never hit the time-varying removal; treated-at-3
  // records that pass the threshold survive with probability 1 - 2/3.
  std::size_t pass_t1 = 0, kept_t1 = 0, pass_t3 = 0, kept_t3 = 0;
  std::map<int, bool> kept;
  for (const auto& rec : biased.records) kept[rec.id] = true;
  for (const auto& rec : cohort.records) {
    int init = rec.initiation_step();
    if (init < 0 || score(truth, rec) < 0.0) continue;
    if (init == 0) {
      ++pass_t1;
      kept_t1 += kept.count(rec.id) ? 1 : 0;
    } else if (init == 2) {
      ++pass_t3;
      kept_t3 += kept.count(rec.id) ? 1 : 0;
    }
  }
  CHECK(static_cast<double>(kept_t1) / pass_t1 == doctest::Approx(1.0));
  CHECK(static_cast<double>(kept_t3) / pass_t3 == doctest::Approx(1.0 / 3.0).epsilon(0.06));
}

TEST_CASE("selection bias: removal is monotone in lambda and rho") {
  SimConfig cfg = small_config(31, 5000);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  std::size_t last = cohort.treated_count() + 1;
  for (double lambda : {-1e300, -5.0, 0.0, 5.0}) {
    Cohort b = apply_selection_bias(cohort, truth, lambda, 2.0, cfg.seed);
    CHECK(b.treated_count() <= last);
    last = b.treated_count();
  }
  last = 0;
  for (double rho : {1.0, 2.0, 4.0, 8.0}) {  // larger rho removes less
    Cohort b = apply_selection_bias(cohort, truth, 0.0, rho, cfg.seed);
    CHECK(b.treated_count() >= last);
    last = b.treated_count();
  }
}

TEST_CASE("selection bias: emptied treated group sets the warning") {
  SimConfig cfg = small_config(37, 200);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  Cohort biased = apply_selection_bias(cohort, truth, 1e9, 1.0, cfg.seed);
  CHECK(biased.treated_count() == 0);
  CHECK(biased.warning.has_value());
}

TEST_CASE("ground truth effect values") {
  CHECK(ground_truth_ate(4.0, 1) == 3.0);
  CHECK(ground_truth_ate(4.0, 3) == 1.0);
  CHECK(ground_truth_ate(4.0, 4) == 0.0);  // boundary: t = C
  CHECK_THROWS_AS(ground_truth_ate(4.0, 0), Error);
}

TEST_CASE("config validation") {
  SimConfig cfg = small_config(1);
  cfg.effect_constant = 3.0;  // C must exceed T
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_config(1);
  cfg.rho = 0.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("cohort jsonl round trip preserves records and truth") {
  SimConfig cfg = small_config(41, 50);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort cohort = generate_randomized_cohort(cfg, truth);
  std::string path = (std::filesystem::temp_directory_path() / "ritw_cohort_test.jsonl").string();
  save_cohort(cohort, path);
  Cohort loaded = load_cohort(path);
  REQUIRE(loaded.size() == cohort.size());
  CHECK(loaded.schema.truth.has_value());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    CHECK(loaded.records[i].id == cohort.records[i].id);
    CHECK(loaded.records[i].baseline == cohort.records[i].baseline);
    CHECK(loaded.records[i].covariates == cohort.records[i].covariates);
    CHECK(loaded.records[i].treatments == cohort.records[i].treatments);
    CHECK(loaded.records[i].outcomes == cohort.records[i].outcomes);
  }
  std::filesystem::remove(path);
}

TEST_CASE("generation is reproducible per record index") {
  SimConfig cfg = small_config(43, 100);
  GroundTruth truth = sample_coefficients(cfg.baseline_dim, cfg.horizon,
                                          cfg.effect_constant, cfg.seed);
  Cohort a = generate_randomized_cohort(cfg, truth);
  Cohort b = generate_randomized_cohort(cfg, truth);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.records[i].baseline == b.records[i].baseline);
    CHECK(a.records[i].outcomes == b.records[i].outcomes);
  }
}
