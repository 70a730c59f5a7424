// Acceptance suite: one pass/fail line per criterion, non-zero exit on any
// failure. Every tolerance is pinned here, not in configuration.
//
//  C1  benchmark reproduction at (lambda=0, rho=1), n=10,000, truth [3,2,1]
//  C2  4x4 bias-grid sweep, 3 repeats averaged
//  C3  stabilized weights center on 1 over the randomized cohort
//  C4  L2 smoothing tightens the weight and propensity tails
//  C5  finite-difference gradient checks, ops and full training losses
//  C6  exact oracle equivalences (counting, concordance, log-space weights)
//  C7  effect-model recovery and group-ordering rank correlation
//  C8  pipeline and end-to-end training both converge; comparison emitted
//  C9  byte-identical reruns for every command

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "ritw/commands.hpp"
#include "ritw/grad_check.hpp"
#include "ritw/metrics.hpp"
#include "ritw/phase2.hpp"

using namespace ritw;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kSeed = 424242;

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void run_criterion(const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

double elapsed(clock_type::time_point start) {
  return std::chrono::duration<double>(clock_type::now() - start).count();
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("ritw_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SimConfig benchmark_sim(std::uint64_t seed) {
  SimConfig cfg;
  cfg.samples = 10000;
  cfg.baseline_dim = 20;
  cfg.horizon = 3;
  cfg.effect_constant = 4.0;
  cfg.seed = seed;
  return cfg;
}

Phase1Hyper benchmark_phase1(std::uint64_t seed, double l2 = 0.0, int max_steps = 1500) {
  Phase1Hyper h;
  h.max_steps = max_steps;
  h.batch_size = 256;
  h.learning_rate = 3e-3;
  h.hidden_size = 16;
  h.layers = 1;
  h.eval_every = 25;
  h.patience = 10;
  h.l2 = l2;
  h.seed = seed;
  return h;
}

std::vector<double> ate_vector(const std::map<int, double>& by_time, int horizon) {
  std::vector<double> v;
  for (int t = 1; t <= horizon; ++t) v.push_back(by_time.at(t));
  return v;
}

StabilizedWeightSet pipeline_weights(const Cohort& cohort, const Phase1Hyper& hyper) {
  ModelCheckpoint ckpt = train_phase1(cohort, hyper);
  return compute_stabilized_weights(NumeratorTable::estimate(cohort),
                                    emit_propensities(cohort, ckpt), cohort, hyper.l2);
}

// ---------------------------------------------------------------------------

void criterion_1_and_3_and_4() {
  auto start = clock_type::now();
  SimConfig sim = benchmark_sim(kSeed);
  sim.lambda = 0.0;
  sim.rho = 1.0;
  GroundTruth truth = sample_coefficients(sim.baseline_dim, sim.horizon,
                                          sim.effect_constant, sim.seed);
  Cohort randomized = generate_randomized_cohort(sim, truth);
  Cohort biased = apply_selection_bias(randomized, truth, sim.lambda, sim.rho, sim.seed);

  double rmse_randomized =
      rmse(ate_vector(empirical_ate(randomized), 3), truth.ate_by_time);

  StabilizedWeightSet raw = pipeline_weights(biased, benchmark_phase1(kSeed));
  AteEstimates est = estimate_effects(biased, raw);
  double runtime = elapsed(start);

  double ratio = *est.rmse_adjusted / *est.rmse_unadjusted;
  bool pass = rmse_randomized <= 0.5 && *est.rmse_unadjusted >= 5.0 &&
              *est.rmse_adjusted <= 1.0 && ratio <= 0.10 && runtime <= 900.0;
  report("C1", pass,
         "randomized rmse " + fmt(rmse_randomized) + " <= 0.5, unadjusted " +
             fmt(*est.rmse_unadjusted) + " >= 5, adjusted " + fmt(*est.rmse_adjusted) +
             " <= 1.0, ratio " + fmt(ratio) + " <= 0.10, runtime " + fmt(runtime, 0) +
             "s <= 900s");

  // C3 uses the same generator on the unbiased cohort.
  run_criterion("C3", [&] {
    StabilizedWeightSet ws =
        pipeline_weights(randomized, benchmark_phase1(derive_seed(kSeed, "c3"), 0.0, 1200));
    double mean = weight_diagnostics(ws.values()).mean;
    report("C3", std::fabs(mean - 1.0) < 0.1,
           "randomized-cohort mean weight " + fmt(mean) + ", |mean - 1| < 0.1");
  });

  // C4 compares the raw run against the smoothed variant on the same cohort.
  run_criterion("C4", [&] {
    Phase1Hyper smooth_hyper = benchmark_phase1(kSeed, 1.0);
    ModelCheckpoint raw_ckpt = train_phase1(biased, benchmark_phase1(kSeed));
    ModelCheckpoint smooth_ckpt = train_phase1(biased, smooth_hyper);
    auto raw_props = emit_propensities(biased, raw_ckpt);
    auto smooth_props = emit_propensities(biased, smooth_ckpt);
    auto at_risk = [&](const std::vector<std::vector<double>>& props) {
      std::vector<double> flat;
      for (std::size_t i = 0; i < biased.size(); ++i) {
        int init = biased.records[i].initiation_step();
        int last = init < 0 ? 3 : init + 1;
        for (int m = 0; m < last; ++m) flat.push_back(props[i][m]);
      }
      return flat;
    };
    NumeratorTable table = NumeratorTable::estimate(biased);
    double raw_max =
        weight_diagnostics(compute_stabilized_weights(table, raw_props, biased).values()).max;
    double smooth_max =
        weight_diagnostics(compute_stabilized_weights(table, smooth_props, biased, 1.0).values())
            .max;
    double raw_q99 = weight_diagnostics(at_risk(raw_props)).q99;
    double smooth_q99 = weight_diagnostics(at_risk(smooth_props)).q99;
    bool pass4 = smooth_max < raw_max && smooth_q99 < raw_q99;
    report("C4", pass4,
           "max weight " + fmt(raw_max) + " -> " + fmt(smooth_max) +
               " (strictly lower), propensity q99 " + fmt(raw_q99) + " -> " +
               fmt(smooth_q99) + " (lower)");
  });
}

void criterion_2() {
  auto start = clock_type::now();
  nlohmann::json j = {
      {"seed", kSeed},
      {"out_dir", fresh_dir("sweep").string()},
      {"sim", {{"n", 10000}, {"d", 20}, {"T", 3}, {"C", 4.0}}},
      {"phase1",
       {{"max_steps", 1000}, {"batch_size", 256}, {"learning_rate", 3e-3},
        {"hidden_size", 16}, {"eval_every", 25}, {"patience", 10}}},
  };
  RunConfig cfg = RunConfig::from_json(j);
  std::vector<double> lambdas = {-std::numeric_limits<double>::infinity(), 0.0, 5.0, 10.0};
  std::vector<double> rhos = {1.0, 2.0, 4.0, 8.0};
  SweepResult result = run_sweep(cfg, lambdas, rhos, 3);

  int improved = 0, total = 0;
  for (const auto& cell : result.cells) {
    if (!cell.error.empty()) continue;
    ++total;
    if (cell.rmse_adjusted <= cell.rmse_unadjusted) ++improved;
  }

  // Per-axis monotonicity of the unadjusted error, read along the slice where
  // the other bias source is weakest. The time-varying bias index is the
  // removal intensity 1/rho.
  auto cell_at = [&](std::size_t li, std::size_t ri) -> const SweepCell& {
    return result.cells[li * rhos.size() + ri];
  };
  std::vector<double> lambda_rank = {0, 1, 2, 3}, lambda_rmse;
  for (std::size_t li = 0; li < lambdas.size(); ++li)
    lambda_rmse.push_back(cell_at(li, rhos.size() - 1).rmse_unadjusted);
  std::vector<double> rho_intensity, rho_rmse;
  for (std::size_t ri = 0; ri < rhos.size(); ++ri) {
    rho_intensity.push_back(1.0 / rhos[ri]);
    rho_rmse.push_back(cell_at(0, ri).rmse_unadjusted);
  }
  double lambda_rho = spearman_rho(lambda_rank, lambda_rmse);
  double rho_rho = spearman_rho(rho_intensity, rho_rmse);

  bool pass = total == 16 && improved >= 15 &&  // >= 90% of 16 cells
              lambda_rho >= 0.8 && rho_rho >= 0.8;
  report("C2", pass,
         "adjusted <= unadjusted in " + std::to_string(improved) + "/" +
             std::to_string(total) + " cells (>= 15), lambda-axis spearman " +
             fmt(lambda_rho, 2) + " >= 0.8, rho-axis spearman " + fmt(rho_rho, 2) +
             " >= 0.8, " + fmt(elapsed(start), 0) + "s");
}

void criterion_5() {
  int configs = 0;
  double worst = 0.0;
  auto check = [&](double err) {
    worst = std::max(worst, err);
    ++configs;
  };

  // Single-op compositions over random shapes and values (step 1e-5).
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, "acc-ops");
    auto fresh = [&](std::size_t r, std::size_t c, double s = 1.0) {
      Array a = Array::zeros(r, c);
      for (double& v : a.data()) v = s * rng.normal();
      return a;
    };
    {
      ParameterStore p;
      p.create("a", fresh(3, 4));
      p.create("b", fresh(3, 4));
      check(grad_check([&](Tape& t) {
        return t.sum(t.mul(t.add(t.param("a"), t.param("b")), t.param("b")));
      }, p));
    }
    {
      ParameterStore p;
      p.create("a", fresh(2, 3));
      p.create("b", fresh(3, 4));
      check(grad_check([&](Tape& t) {
        return t.mean(t.tanh(t.matmul(t.param("a"), t.param("b"))));
      }, p));
    }
    {
      ParameterStore p;
      p.create("a", fresh(2, 3));
      p.create("b", fresh(2, 2));
      check(grad_check([&](Tape& t) {
        return t.sum(t.sigmoid(t.concat_cols(t.param("a"), t.param("b"))));
      }, p));
    }
    {
      ParameterStore p;
      p.create("z", fresh(3, 5, 1.5));
      Array direction = fresh(3, 5);
      check(grad_check([&](Tape& t) {
        return t.sum(t.mul(t.softmax(t.param("z")), t.input(direction)));
      }, p));
    }
    {
      ParameterStore p;
      Array positive = fresh(2, 3);
      for (double& v : positive.data()) v = std::exp(v) + 0.3;
      p.create("a", positive);
      check(grad_check([&](Tape& t) { return t.mean(t.log(t.param("a"))); }, p));
    }
    {
      ParameterStore p;
      p.create("a", fresh(2, 3, 0.7));
      check(grad_check([&](Tape& t) { return t.sum(t.exp(t.param("a"))); }, p));
    }
    {
      ParameterStore p;
      p.create("a", fresh(2, 4));
      p.create("b", fresh(2, 4));
      Array mask = Array::zeros(2, 4);
      for (double& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      check(grad_check([&](Tape& t) {
        return t.sum(t.select(mask, t.param("a"), t.param("b")));
      }, p));
    }
    {
      ParameterStore p;
      p.create("z", fresh(5, 1, 1.2));
      Array y = Array::zeros(5, 1), w = Array::zeros(5, 1);
      for (std::size_t i = 0; i < 5; ++i) {
        y[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        w[i] = 0.2 + rng.uniform();
      }
      check(grad_check([&](Tape& t) {
        return t.weighted_bce_logits(t.param("z"), y, w);
      }, p));
    }
    {
      ParameterStore p;
      p.create("z", fresh(3, 4, 1.1));
      Array onehot = Array::zeros(3, 4), w = Array::zeros(3, 1);
      for (std::size_t r = 0; r < 3; ++r) {
        onehot.at(r, rng.uniform_int(4)) = 1.0;
        w[r] = 0.2 + rng.uniform();
      }
      check(grad_check([&](Tape& t) {
        return t.weighted_ce_logits_rows(t.param("z"), onehot, w);
      }, p));
    }
  }

  // Full training losses on small random cohorts. These use step 1e-4: at
  // 1e-5 the rounding of the loss value (eps * |L| / 2h) swamps coordinates
  // whose true gradient sits near the 1e-8 denominator floor, even though
  // analytic and numeric agree to four digits there.
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    SimConfig sim;
    sim.samples = 10;
    sim.baseline_dim = 3;
    sim.horizon = 3;
    sim.effect_constant = 4.0;
    sim.seed = seed + 100;
    GroundTruth truth = sample_coefficients(sim.baseline_dim, sim.horizon,
                                            sim.effect_constant, sim.seed);
    Cohort cohort = generate_randomized_cohort(sim, truth);
    std::vector<int> idx;
    for (int i = 0; i < 10; ++i) idx.push_back(i);

    Phase1Hyper p1;
    p1.hidden_size = 4;
    p1.layers = 1;
    p1.l2 = seed % 2 == 0 ? 0.5 : 0.0;
    p1.seed = seed;
    ParameterStore store1 = phase1_initial_params(cohort, p1);
    // Move off the zero-head initialization so the loss surface is generic.
    Rng jitter(seed, "acc-jitter");
    for (auto& [name, arr] : store1.all()) {
      (void)name;
      for (double& v : arr.data()) v += 0.2 * jitter.normal();
    }
    check(grad_check([&](Tape& t) { return phase1_loss(t, cohort, idx, p1); }, store1,
                     1e-4));

    Phase2Hyper p2;
    p2.hidden_size = 4;
    p2.layers = 1;
    p2.bidirectional = seed % 2 == 1;
    p2.l2 = seed % 2 == 1 ? 0.5 : 0.0;
    p2.seed = seed;
    TaskSpec tasks = seed % 2 == 0 ? TaskSpec::continuous(1) : TaskSpec::binary(2);
    Cohort cohort2 = cohort;
    if (tasks.size() == 2)
      for (auto& rec : cohort2.records) rec.outcomes = {rec.outcomes[0] > 0 ? 1.0 : 0.0, 0.0};
    cohort2.schema.tasks = tasks.size();
    std::vector<double> weights(idx.size());
    for (double& w : weights) w = 0.2 + jitter.uniform();
    ParameterStore store2 = phase2_initial_params(cohort2, tasks, p2);
    for (auto& [name, arr] : store2.all()) {
      (void)name;
      for (double& v : arr.data()) v += 0.2 * jitter.normal();
    }
    check(grad_check(
        [&](Tape& t) { return phase2_loss(t, cohort2, idx, weights, tasks, p2); }, store2,
        1e-4));
  }

  report("C5", configs >= 100 && worst < 1e-4,
         std::to_string(configs) + " configurations (>= 100), worst relative error " +
             fmt(worst, 7) + " < 1e-4");
}

void criterion_6() {
  // Numerator table vs exhaustive counting on 20 records.
  Rng rng(kSeed, "acc-oracle");
  std::vector<std::vector<int>> sequences;
  Cohort cohort;
  cohort.schema.baseline_dim = 1;
  cohort.schema.horizon = 3;
  cohort.schema.tasks = 1;
  for (int i = 0; i < 20; ++i) {
    int init = static_cast<int>(rng.uniform_int(4));
    std::vector<int> seq(3, 0);
    for (int t = 0; t < 3; ++t) seq[t] = (init < 3 && t >= init) ? 1 : 0;
    sequences.push_back(seq);
    PatientRecord r;
    r.id = i;
    r.baseline = {0.0};
    r.covariates.assign(3, {0.0});
    r.treatments = seq;
    r.outcomes = {0.0};
    cohort.records.push_back(std::move(r));
  }
  NumeratorTable table = NumeratorTable::estimate(cohort);
  bool numerators_exact = true;
  for (int m = 1; m <= 3; ++m) {
    std::map<std::vector<int>, std::map<int, int>> counts;
    std::map<std::vector<int>, int> denom;
    for (const auto& seq : sequences) {
      std::vector<int> prefix(seq.begin(), seq.begin() + (m - 1));
      denom[prefix] += 1;
      counts[prefix][seq[m - 1]] += 1;
    }
    for (const auto& [prefix, by_action] : counts)
      for (int action : {0, 1}) {
        auto it = by_action.find(action);
        double expected =
            it == by_action.end() ? 0.0 : static_cast<double>(it->second) / denom.at(prefix);
        numerators_exact &= table.probability(m, prefix, action) == expected;
      }
  }

  // AUC vs brute-force pair counting on 50 samples.
  std::vector<double> scores(50);
  std::vector<int> labels(50);
  for (int i = 0; i < 50; ++i) {
    scores[i] = std::floor(rng.uniform() * 10.0) / 10.0;
    labels[i] = i % 3 == 0 ? 1 : 0;
  }
  double concordant = 0.0;
  std::size_t pairs = 0;
  for (int i = 0; i < 50; ++i) {
    if (labels[i] != 1) continue;
    for (int j = 0; j < 50; ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) concordant += 1.0;
      else if (scores[i] == scores[j]) concordant += 0.5;
    }
  }
  bool auc_exact = auc_roc(scores, labels) == concordant / pairs;

  // Stabilized weights recompute from their stored logs to 1e-10.
  std::vector<std::vector<double>> props(20, std::vector<double>(3, 0.0));
  for (auto& row : props)
    for (double& p : row) p = 0.05 + 0.9 * rng.uniform();
  StabilizedWeightSet ws = compute_stabilized_weights(table, props, cohort);
  double worst_gap = 0.0;
  for (const auto& e : ws.entries) {
    double log_sum = 0.0;
    for (std::size_t s = 0; s < e.log_numerators.size(); ++s)
      log_sum += e.log_numerators[s] - e.log_denominators[s];
    worst_gap = std::max(worst_gap, std::fabs(std::exp(log_sum) - e.weight));
  }

  report("C6", numerators_exact && auc_exact && worst_gap < 1e-10,
         std::string("numerator table exact: ") + (numerators_exact ? "yes" : "no") +
             ", auc matches brute force: " + (auc_exact ? "yes" : "no") +
             ", weight recompute gap " + fmt(worst_gap, 14) + " < 1e-10");
}

void criterion_7() {
  // Pooled logistic recovery of planted effect coefficients at 50k rows.
  std::vector<double> beta_m = {1.0, 0.5, -0.5};
  Rng rng(kSeed, "acc-msm");
  std::vector<MsmRow> rows;
  rows.reserve(50000);
  for (int i = 0; i < 50000; ++i) {
    MsmRow row;
    row.id = i;
    int m = static_cast<int>(rng.uniform_int(3));
    bool treated = rng.uniform() < 0.5;
    row.time = m;
    row.arm = treated ? m : -1;
    row.baseline = {rng.normal(), rng.normal()};
    double z = 0.15 * m + (treated ? beta_m[m] : 0.0) + 0.7 * row.baseline[0] -
               0.3 * row.baseline[1];
    row.target = rng.uniform() < 1.0 / (1.0 + std::exp(-z)) ? 1.0 : 0.0;
    row.weight = 1.0;
    rows.push_back(std::move(row));
  }
  MsmFit fit = fit_weighted_logistic(ate_design_matrix(rows, 3));
  bool recovery = fit.converged;
  double worst_rel = 0.0;
  if (fit.converged) {
    auto ors = ate_odds_ratios(fit);
    for (int m = 0; m < 3; ++m) {
      double rel = std::fabs(ors[m].second - std::exp(beta_m[m])) / std::exp(beta_m[m]);
      worst_rel = std::max(worst_rel, rel);
    }
    recovery = worst_rel < 0.10;
  }

  // Two-group synthetic with a planted ordering: estimated conditional odds
  // ratios must match the true ranks exactly.
  double beta_a = 0.1, beta_ag = 0.6;
  std::vector<MsmRow> hte_rows;
  hte_rows.reserve(20000);
  for (int i = 0; i < 20000; ++i) {
    MsmRow row;
    row.id = i;
    int m = static_cast<int>(rng.uniform_int(3));
    bool treated = rng.uniform() < 0.5;
    row.time = m;
    row.arm = treated ? m : -1;
    row.group = rng.uniform() < 0.5 ? 1 : 0;
    row.baseline = {rng.normal()};
    double z = 0.1 * m + (treated ? beta_a : 0.0) + 0.15 * row.group +
               (treated ? beta_ag * row.group : 0.0) + 0.4 * row.baseline[0];
    row.target = rng.uniform() < 1.0 / (1.0 + std::exp(-z)) ? 1.0 : 0.0;
    row.weight = 1.0;
    hte_rows.push_back(std::move(row));
  }
  MsmFit hte = fit_hte(hte_rows);
  double rank = 0.0;
  if (hte.converged) {
    std::vector<double> truth_or = {std::exp(beta_a), std::exp(beta_a + beta_ag)};
    std::vector<double> est_or = {conditional_or(hte, 0), conditional_or(hte, 1)};
    rank = spearman_rho(truth_or, est_or);
  }

  report("C7", recovery && hte.converged && rank == 1.0,
         "odds-ratio recovery worst relative error " + fmt(worst_rel) +
             " < 0.10 at 50k rows, group-ordering rank correlation " + fmt(rank, 1) +
             " == 1.0");
}

void criterion_8() {
  fs::path dir = fresh_dir("modes");
  nlohmann::json j = {
      {"seed", kSeed},
      {"out_dir", dir.string()},
      {"sim", {{"n", 2500}, {"d", 20}, {"T", 3}, {"C", 4.0}, {"lambda", 0.0}, {"rho", 1.0}}},
      {"phase1",
       {{"max_steps", 300}, {"batch_size", 256}, {"learning_rate", 3e-3},
        {"hidden_size", 8}, {"eval_every", 20}, {"patience", 1000}}},
      {"phase2",
       {{"max_steps", 400}, {"batch_size", 256}, {"learning_rate", 3e-3},
        {"hidden_size", 8}, {"eval_every", 20}, {"patience", 1000},
        {"val_loss_threshold", 3.0}}},
  };
  RunConfig cfg = RunConfig::from_json(j);
  cmd_simulate(cfg);
  cmd_train_iptw(cfg);
  cmd_train_outcome(cfg);
  ModelCheckpoint pipeline = load_checkpoint((dir / "outcome_checkpoint.json").string());
  cmd_train_e2e(cfg);
  ModelCheckpoint e2e = load_checkpoint((dir / "e2e_checkpoint.json").string());

  auto decreases_over_first_window = [](const TrainLog& log) {
    double first = log.entries.front().val_loss;
    double at_200 = first;
    for (const auto& e : log.entries)
      if (e.step > 0 && e.step <= 200) at_200 = e.val_loss;
    return at_200 < first;
  };
  bool pipeline_converges = decreases_over_first_window(phase2_train_log(pipeline));
  bool e2e_converges = decreases_over_first_window(phase2_train_log(e2e));

  nlohmann::json comparison =
      nlohmann::json::parse(slurp(dir / "mode_comparison.json"));
  bool emitted = comparison.is_array() && comparison.size() == 2 &&
                 comparison[0].at("mode") == "pipeline" &&
                 comparison[1].at("mode") == "end_to_end" &&
                 comparison[0].contains("steps_to_threshold") &&
                 comparison[1].contains("final_metric");

  report("C8", pipeline_converges && e2e_converges && emitted,
         std::string("pipeline validation loss decreases over the first 200 steps: ") +
             (pipeline_converges ? "yes" : "no") + ", end-to-end: " +
             (e2e_converges ? "yes" : "no") + ", comparison report emitted: " +
             (emitted ? "yes" : "no"));
}

void criterion_9() {
  auto run_all = [&](const fs::path& dir) {
    nlohmann::json j = {
        {"seed", kSeed},
        {"out_dir", dir.string()},
        {"sim",
         {{"n", 700}, {"d", 8}, {"T", 3}, {"C", 4.0}, {"lambda", 0.0}, {"rho", 1.0}}},
        {"phase1",
         {{"max_steps", 120}, {"batch_size", 128}, {"learning_rate", 3e-3},
          {"hidden_size", 6}, {"eval_every", 25}, {"patience", 50}}},
        {"phase2",
         {{"max_steps", 120}, {"batch_size", 128}, {"learning_rate", 3e-3},
          {"hidden_size", 6}, {"eval_every", 25}, {"patience", 50},
          {"val_loss_threshold", 50.0}}},
    };
    RunConfig cfg = RunConfig::from_json(j);
    cmd_simulate(cfg);
    cmd_train_iptw(cfg);
    cmd_train_outcome(cfg);
    cmd_estimate_ate(cfg);
    cmd_train_e2e(cfg);
    cmd_diagnostics(cfg);
    cmd_sweep(cfg, {-std::numeric_limits<double>::infinity(), 0.0}, {1.0, 4.0}, 1);
  };
  fs::path dir_a = fresh_dir("det_a");
  fs::path dir_b = fresh_dir("det_b");
  run_all(dir_a);
  run_all(dir_b);

  std::size_t files = 0;
  std::vector<std::string> mismatched;
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    ++files;
    fs::path other = dir_b / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other))
      mismatched.push_back(entry.path().filename().string());
  }
  std::string detail = std::to_string(files) + " files compared across two reruns";
  if (!mismatched.empty()) {
    detail += ", mismatched:";
    for (const auto& name : mismatched) detail += " " + name;
  } else {
    detail += ", all byte-identical";
  }
  report("C9", files >= 12 && mismatched.empty(), detail);
}

}  // namespace

int main() {
  auto start = clock_type::now();
  run_criterion("C1", criterion_1_and_3_and_4);  // also reports C3 and C4
  run_criterion("C2", criterion_2);
  run_criterion("C5", criterion_5);
  run_criterion("C6", criterion_6);
  run_criterion("C7", criterion_7);
  run_criterion("C8", criterion_8);
  run_criterion("C9", criterion_9);
  std::printf("%s: %d failure(s), %.0fs total\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              g_failures, elapsed(start));
  return g_failures == 0 ? 0 : 1;
}
