#include "ritw/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "ritw/error.hpp"
#include "ritw/metrics.hpp"
#include "ritw/phase2.hpp"

namespace ritw {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_out_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
}

void write_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open '", path, "' for writing");
  out << j.dump(2) << "\n";
  require(out.good(), "write to '", path, "' failed");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open '", path, "'");
  nlohmann::json j;
  in >> j;
  return j;
}

void write_loss_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open '", path, "' for writing");
  out << "step,train_loss,val_loss\n";
  for (const auto& e : log.entries)
    out << e.step << "," << fmt(e.train_loss) << "," << fmt(e.val_loss) << "\n";
  require(out.good(), "write to '", path, "' failed");
}

// Propensities actually used in the weight products: steps up to and
// including initiation, the full horizon for controls.
std::vector<double> at_risk_propensities(const Cohort& cohort,
                                         const std::vector<std::vector<double>>& props) {
  std::vector<double> flat;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    int init = cohort.records[i].initiation_step();
    int last = init < 0 ? cohort.schema.horizon : init + 1;
    for (int m = 0; m < last; ++m) flat.push_back(props[i][m]);
  }
  return flat;
}

nlohmann::json table2_diagnostics(const std::vector<double>& propensities,
                                  const StabilizedWeightSet& weights) {
  nlohmann::json j;
  if (!propensities.empty()) {
    WeightDiagnostics p = weight_diagnostics(propensities);
    j["propensity_score"] = {{"q01", p.q01}, {"avg", p.mean}, {"q99", p.q99}};
  }
  WeightDiagnostics w = weight_diagnostics(weights.values());
  j["stabilized_weight"] = {{"min", w.min}, {"avg", w.mean}, {"max", w.max},
                            {"q01", w.q01}, {"q99", w.q99}};
  j["n"] = weights.entries.size();
  j["flag"] = weights.flag();
  return j;
}

std::vector<double> map_to_vector(const std::map<int, double>& by_time, int horizon) {
  std::vector<double> v;
  for (int t = 1; t <= horizon; ++t) v.push_back(by_time.at(t));
  return v;
}

// Predictions for every ATE query, keyed by the query label.
std::map<std::string, std::vector<std::vector<double>>> predict_all_queries(
    const ModelCheckpoint& ckpt, const Cohort& cohort) {
  std::map<std::string, std::vector<std::vector<double>>> preds;
  for (int m = 0; m < cohort.schema.horizon; ++m) {
    InterventionQuery q = InterventionQuery::initiate_at(m);
    preds[q.label()] = predict_potential_outcomes(ckpt, cohort, q);
  }
  InterventionQuery never = InterventionQuery::never();
  preds[never.label()] = predict_potential_outcomes(ckpt, cohort, never);
  return preds;
}

struct CellInputs {
  const Cohort* randomized = nullptr;
  const GroundTruth* truth = nullptr;
  std::uint64_t bias_seed = 0;
  std::uint64_t train_seed = 0;
};

SweepCell compute_cell(double lambda, double rho, const CellInputs& in,
                       Phase1Hyper hyper) {
  SweepCell cell;
  cell.lambda = lambda;
  cell.rho = rho;
  Cohort biased = apply_selection_bias(*in.randomized, *in.truth, lambda, rho, in.bias_seed);
  require(!biased.warning, "cell (", lambda, ",", rho, "): ", biased.warning.value_or(""));
  cell.treated_count = static_cast<double>(biased.treated_count());

  hyper.seed = in.train_seed;
  ModelCheckpoint ckpt = train_phase1(biased, hyper);
  auto propensities = emit_propensities(biased, ckpt);
  NumeratorTable numerators = NumeratorTable::estimate(biased);
  StabilizedWeightSet weights =
      compute_stabilized_weights(numerators, propensities, biased, hyper.l2);

  AteEstimates est = estimate_effects(biased, weights);
  require(est.rmse_unadjusted && est.rmse_weighted && est.rmse_adjusted,
          "cell (", lambda, ",", rho, "): cohort carries no ground truth");
  cell.rmse_unadjusted = *est.rmse_unadjusted;
  cell.rmse_weighted = *est.rmse_weighted;
  cell.rmse_adjusted = *est.rmse_adjusted;
  return cell;
}

}  // namespace

void cmd_simulate(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  GroundTruth truth = sample_coefficients(cfg.sim.baseline_dim, cfg.sim.horizon,
                                          cfg.sim.effect_constant, cfg.sim.seed);
  Cohort randomized = generate_randomized_cohort(cfg.sim, truth);
  Cohort biased = apply_selection_bias(randomized, truth, cfg.sim.lambda, cfg.sim.rho,
                                       cfg.sim.seed);

  std::string randomized_path = cfg.path(cfg.randomized_path, "randomized.jsonl");
  std::string biased_path = cfg.path(cfg.cohort_path, "biased.jsonl");
  save_cohort(randomized, randomized_path);
  save_cohort(biased, biased_path);
  write_json({{"beta_b", truth.beta_baseline},
              {"beta", truth.beta_covariate},
              {"ate_by_time", truth.ate_by_time}},
             cfg.out_dir + "/truth.json");

  std::cout << "simulate: " << randomized.size() << " randomized records ("
            << randomized.treated_count() << " treated) -> " << randomized_path << "\n";
  std::cout << "simulate: " << biased.size() << " biased records ("
            << biased.treated_count() << " treated) -> " << biased_path << "\n";
  if (biased.warning) std::cout << "simulate: warning: " << *biased.warning << "\n";
}

void cmd_train_iptw(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Cohort cohort = load_cohort(cfg.path(cfg.cohort_path, "biased.jsonl"));
  ModelCheckpoint ckpt = train_phase1(cohort, cfg.phase1);
  save_checkpoint(ckpt, cfg.path(cfg.iptw_checkpoint_path, "iptw_checkpoint.json"));
  TrainLog log = phase1_train_log(ckpt);
  write_loss_csv(log, cfg.out_dir + "/iptw_loss.csv");

  auto propensities = emit_propensities(cohort, ckpt);
  NumeratorTable numerators = NumeratorTable::estimate(cohort);
  StabilizedWeightSet weights =
      compute_stabilized_weights(numerators, propensities, cohort, cfg.phase1.l2);
  if (cfg.truncate) weights = truncate_weights(weights, cfg.truncate->q_lo, cfg.truncate->q_hi);
  save_weights_csv(weights, cfg.path(cfg.weights_path, "weights.csv"));
  write_json(table2_diagnostics(at_risk_propensities(cohort, propensities), weights),
             cfg.out_dir + "/diagnostics.json");

  WeightDiagnostics w = weight_diagnostics(weights.values());
  std::cout << "train-iptw: " << log.steps_used << " steps, best val loss "
            << log.best_val_loss << ", weight mean " << w.mean << " max " << w.max << "\n";
}

void cmd_train_outcome(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Cohort cohort = load_cohort(cfg.path(cfg.cohort_path, "biased.jsonl"));
  StabilizedWeightSet weights = load_weights_csv(cfg.path(cfg.weights_path, "weights.csv"));
  ModelCheckpoint ckpt = train_phase2(cohort, weights, cfg.tasks, cfg.phase2);
  save_checkpoint(ckpt, cfg.path(cfg.outcome_checkpoint_path, "outcome_checkpoint.json"));
  TrainLog log = phase2_train_log(ckpt);
  write_loss_csv(log, cfg.out_dir + "/outcome_loss.csv");
  std::cout << "train-outcome: " << log.steps_used << " steps, best val loss "
            << log.best_val_loss << "\n";
}

void cmd_train_e2e(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Cohort cohort = load_cohort(cfg.path(cfg.cohort_path, "biased.jsonl"));

  // Pipeline reference: Phase I for weights, then the weighted outcome fit.
  ModelCheckpoint ip = train_phase1(cohort, cfg.phase1);
  auto propensities = emit_propensities(cohort, ip);
  NumeratorTable numerators = NumeratorTable::estimate(cohort);
  StabilizedWeightSet weights =
      compute_stabilized_weights(numerators, propensities, cohort, cfg.phase1.l2);
  ModelCheckpoint outcome = train_phase2(cohort, weights, cfg.tasks, cfg.phase2);
  TrainLog pipe_log = phase2_train_log(outcome);
  TrainLog ip_log = phase1_train_log(ip);

  Phase2Hyper e2e_hyper = cfg.phase2;
  e2e_hyper.seed = derive_seed(cfg.seed, "e2e");
  e2e_hyper.bidirectional = false;
  ModelCheckpoint e2e = train_end_to_end(cohort, cfg.tasks, e2e_hyper);
  TrainLog e2e_log = phase2_train_log(e2e);
  save_checkpoint(e2e, cfg.out_dir + "/e2e_checkpoint.json");
  write_loss_csv(e2e_log, cfg.out_dir + "/e2e_loss.csv");

  ModeReport pipeline_report;
  pipeline_report.mode = "pipeline";
  pipeline_report.threshold_metric = "validation_loss";
  pipeline_report.threshold_value = cfg.phase2.val_loss_threshold;
  pipeline_report.final_metric = pipe_log.best_val_loss;
  pipeline_report.steps_to_threshold =
      pipe_log.first_step_at_threshold < 0
          ? -1
          : ip_log.steps_used + pipe_log.first_step_at_threshold;

  ModeReport e2e_report;
  e2e_report.mode = "end_to_end";
  e2e_report.threshold_metric = "validation_loss";
  e2e_report.threshold_value = cfg.phase2.val_loss_threshold;
  e2e_report.final_metric = e2e_log.best_val_loss;
  e2e_report.steps_to_threshold = e2e_log.first_step_at_threshold;

  write_json(nlohmann::json::array({pipeline_report.to_json(), e2e_report.to_json()}),
             cfg.out_dir + "/mode_comparison.json");
  std::cout << "train-e2e: pipeline steps_to_threshold="
            << pipeline_report.steps_to_threshold
            << " end_to_end steps_to_threshold=" << e2e_report.steps_to_threshold << "\n";
}

AteEstimates estimate_effects(const Cohort& cohort, const StabilizedWeightSet& weights) {
  AteEstimates est;
  est.unadjusted = empirical_ate(cohort, nullptr);
  est.weighted = empirical_ate(cohort, &weights);
  est.adjusted = weighted_linear_ate(cohort, weights).ate_by_time;
  if (cohort.schema.truth && !cohort.schema.binary_outcome) {
    const auto& truth = cohort.schema.truth->ate_by_time;
    int T = cohort.schema.horizon;
    est.rmse_unadjusted = rmse(map_to_vector(est.unadjusted, T), truth);
    est.rmse_weighted = rmse(map_to_vector(est.weighted, T), truth);
    est.rmse_adjusted = rmse(map_to_vector(est.adjusted, T), truth);
  }
  return est;
}

void cmd_estimate_ate(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Cohort cohort = load_cohort(cfg.path(cfg.cohort_path, "biased.jsonl"));
  StabilizedWeightSet weights = load_weights_csv(cfg.path(cfg.weights_path, "weights.csv"));
  require(!cohort.warning, "estimate-ate: cohort warning: ", cohort.warning.value_or(""));

  nlohmann::json report;
  if (!cohort.schema.binary_outcome) {
    AteEstimates est = estimate_effects(cohort, weights);
    int T = cohort.schema.horizon;
    report["ate_unadjusted"] = map_to_vector(est.unadjusted, T);
    report["ate_weighted"] = map_to_vector(est.weighted, T);
    report["ate_adjusted"] = map_to_vector(est.adjusted, T);
    if (est.rmse_unadjusted) {
      report["truth"] = cohort.schema.truth->ate_by_time;
      report["rmse_unadjusted"] = *est.rmse_unadjusted;
      report["rmse_weighted"] = *est.rmse_weighted;
      report["rmse_adjusted"] = *est.rmse_adjusted;
    }
  }

  // Odds-ratio step function over predicted likelihoods, when an outcome
  // model with logistic tasks is available.
  report["or_monotone_increasing"] = nullptr;
  std::string ckpt_path = cfg.path(cfg.outcome_checkpoint_path, "outcome_checkpoint.json");
  bool have_ckpt = fs::exists(ckpt_path);
  if (have_ckpt) {
    ModelCheckpoint outcome = load_checkpoint(ckpt_path);
    TaskSpec tasks = TaskSpec::from_json(outcome.meta.at("tasks"));
    int task = cfg.msm.task;
    require(task >= 0 && task < tasks.size(), "estimate-ate: msm task ", task,
            " out of range");
    if (tasks.links[task] == Link::kLogistic) {
      auto preds = predict_all_queries(outcome, cohort);
      std::vector<MsmRow> rows = build_ate_design(cohort, preds, weights, task);
      MsmOptions options;
      options.l2 = cfg.msm.l2;
      MsmFit fit = fit_weighted_logistic(ate_design_matrix(rows, cohort.schema.horizon),
                                         options);
      auto ors = ate_odds_ratios(fit);
      std::ofstream csv(cfg.out_dir + "/ate_odds_ratios.csv");
      require(csv.good(), "estimate-ate: cannot write odds-ratio csv");
      csv << "m,odds_ratio\n";
      nlohmann::json or_json = nlohmann::json::array();
      for (const auto& [m, value] : ors) {
        csv << m << "," << fmt(value) << "\n";
        or_json.push_back({{"m", m}, {"odds_ratio", value}});
      }
      report["odds_ratios"] = or_json;
      report["or_monotone_increasing"] = odds_ratios_monotone(ors);
      report["msm_converged"] = fit.converged;
      report["msm_solver"] = fit.solver;
    }
  }

  write_json(report, cfg.out_dir + "/ate_report.json");
  std::cout << "estimate-ate: report -> " << cfg.out_dir << "/ate_report.json\n";
  if (report.contains("rmse_adjusted")) {
    std::cout << "estimate-ate: rmse unadjusted=" << report["rmse_unadjusted"]
              << " weighted=" << report["rmse_weighted"]
              << " adjusted=" << report["rmse_adjusted"] << "\n";
  }
}

void cmd_estimate_hte(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  Cohort cohort = load_cohort(cfg.path(cfg.cohort_path, "biased.jsonl"));
  StabilizedWeightSet weights = load_weights_csv(cfg.path(cfg.weights_path, "weights.csv"));
  ModelCheckpoint outcome =
      load_checkpoint(cfg.path(cfg.outcome_checkpoint_path, "outcome_checkpoint.json"));
  require(!cfg.groups_path.empty(), "estimate-hte: config needs paths.groups");
  nlohmann::json groups_json = read_json(cfg.groups_path);
  require(groups_json.contains("groups"), "estimate-hte: groups file needs a 'groups' map");

  std::map<int, int> group_of;
  for (const auto& [key, value] : groups_json["groups"].items())
    group_of[std::stoi(key)] = value.get<int>();

  TaskSpec tasks = TaskSpec::from_json(outcome.meta.at("tasks"));
  int task = cfg.msm.task;
  require(tasks.links[task] == Link::kLogistic,
          "estimate-hte: task ", task, " must be logistic");

  auto preds = predict_all_queries(outcome, cohort);
  std::vector<MsmRow> rows = build_ate_design(cohort, preds, weights, task);
  for (auto& row : rows) {
    auto it = group_of.find(row.id);
    require(it != group_of.end(), "estimate-hte: no group for record ", row.id);
    row.group = it->second;
  }
  MsmOptions options;
  options.l2 = cfg.msm.l2;
  MsmFit fit = fit_hte(rows, options);
  require(fit.converged, "estimate-hte: fit did not converge");

  nlohmann::json report;
  nlohmann::json group_array = nlohmann::json::array();
  std::vector<double> estimated;
  for (int g = 0; g <= 1; ++g) {
    double value = conditional_or(fit, g);
    estimated.push_back(value);
    group_array.push_back({{"group", g}, {"conditional_or", value}});
  }
  report["groups"] = group_array;
  report["rank_rho"] = nullptr;
  if (groups_json.contains("expected_or_rank")) {
    std::vector<double> expected = {
        groups_json["expected_or_rank"].at("0").get<double>(),
        groups_json["expected_or_rank"].at("1").get<double>()};
    report["rank_rho"] = spearman_rho(expected, estimated);
  }
  write_json(report, cfg.out_dir + "/hte_report.json");
  std::cout << "estimate-hte: report -> " << cfg.out_dir << "/hte_report.json\n";
}

void cmd_diagnostics(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  StabilizedWeightSet weights = load_weights_csv(cfg.path(cfg.weights_path, "weights.csv"));
  std::vector<double> propensities;  // only available alongside a checkpoint
  std::string ckpt_path = cfg.path(cfg.iptw_checkpoint_path, "iptw_checkpoint.json");
  std::string cohort_path = cfg.path(cfg.cohort_path, "biased.jsonl");
  if (fs::exists(ckpt_path) && fs::exists(cohort_path)) {
    Cohort cohort = load_cohort(cohort_path);
    ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
    propensities = at_risk_propensities(cohort, emit_propensities(cohort, ckpt));
  }
  write_json(table2_diagnostics(propensities, weights), cfg.out_dir + "/diagnostics.json");
  std::cout << "diagnostics: " << weights.entries.size() << " weights -> " << cfg.out_dir
            << "/diagnostics.json\n";
}

SweepResult run_sweep(const RunConfig& cfg, const std::vector<double>& lambdas,
                      const std::vector<double>& rhos, int seeds) {
  require(!lambdas.empty() && !rhos.empty(), "sweep: empty grid");
  require(seeds >= 1, "sweep: need at least one repeat");

  SweepResult result;
  result.lambdas = lambdas;
  result.rhos = rhos;
  result.seeds = seeds;

  // One shared randomized cohort per repeat; cells only re-bias it.
  std::vector<Cohort> cohorts;
  std::vector<GroundTruth> truths;
  std::vector<std::uint64_t> sim_seeds;
  for (int s = 0; s < seeds; ++s) {
    SimConfig sim = cfg.sim;
    sim.seed = derive_seed(cfg.seed, "sweep-sim", s);
    GroundTruth truth = sample_coefficients(sim.baseline_dim, sim.horizon,
                                            sim.effect_constant, sim.seed);
    cohorts.push_back(generate_randomized_cohort(sim, truth));
    truths.push_back(std::move(truth));
    sim_seeds.push_back(sim.seed);
  }

  std::size_t n_cells = lambdas.size() * rhos.size();
  result.raw.assign(n_cells * seeds, SweepCell{});
  result.raw_seed_index.assign(n_cells * seeds, 0);

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t task = next.fetch_add(1);
      if (task >= n_cells * seeds) break;
      std::size_t cell_index = task / seeds;
      int seed_index = static_cast<int>(task % seeds);
      double lambda = lambdas[cell_index / rhos.size()];
      double rho = rhos[cell_index % rhos.size()];
      SweepCell& slot = result.raw[task];
      result.raw_seed_index[task] = seed_index;
      try {
        CellInputs in;
        in.randomized = &cohorts[seed_index];
        in.truth = &truths[seed_index];
        in.bias_seed = sim_seeds[seed_index];
        in.train_seed = derive_seed(cfg.seed, "sweep-train", task);
        slot = compute_cell(lambda, rho, in, cfg.phase1);
      } catch (const std::exception& e) {
        slot.lambda = lambda;
        slot.rho = rho;
        slot.error = e.what();
      }
    }
  };

  int workers = cfg.workers > 0 ? cfg.workers
                                : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(n_cells * seeds)));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Seed-averaged cells, in grid order.
  for (std::size_t c = 0; c < n_cells; ++c) {
    SweepCell avg;
    avg.lambda = lambdas[c / rhos.size()];
    avg.rho = rhos[c % rhos.size()];
    for (int s = 0; s < seeds; ++s) {
      const SweepCell& raw = result.raw[c * seeds + s];
      if (!raw.error.empty()) {
        avg.error = raw.error;
        continue;
      }
      avg.rmse_unadjusted += raw.rmse_unadjusted / seeds;
      avg.rmse_weighted += raw.rmse_weighted / seeds;
      avg.rmse_adjusted += raw.rmse_adjusted / seeds;
      avg.treated_count += raw.treated_count / seeds;
    }
    result.cells.push_back(std::move(avg));
  }
  return result;
}

void cmd_sweep(const RunConfig& cfg, const std::vector<double>& lambdas,
               const std::vector<double>& rhos, int seeds) {
  ensure_out_dir(cfg);
  SweepResult result = run_sweep(cfg, lambdas, rhos, seeds);

  {
    std::ofstream out(cfg.out_dir + "/sweep.csv");
    require(out.good(), "sweep: cannot write sweep.csv");
    out << "lambda,rho,method,rmse,treated_count\n";
    for (const auto& cell : result.cells) {
      if (!cell.error.empty()) continue;
      out << fmt(cell.lambda) << "," << fmt(cell.rho) << ",unadjusted,"
          << fmt(cell.rmse_unadjusted) << "," << fmt(cell.treated_count) << "\n";
      out << fmt(cell.lambda) << "," << fmt(cell.rho) << ",weighted,"
          << fmt(cell.rmse_weighted) << "," << fmt(cell.treated_count) << "\n";
      out << fmt(cell.lambda) << "," << fmt(cell.rho) << ",adjusted,"
          << fmt(cell.rmse_adjusted) << "," << fmt(cell.treated_count) << "\n";
    }
  }
  {
    std::ofstream out(cfg.out_dir + "/sweep_raw.csv");
    require(out.good(), "sweep: cannot write sweep_raw.csv");
    out << "lambda,rho,seed_index,method,rmse,treated_count\n";
    for (std::size_t i = 0; i < result.raw.size(); ++i) {
      const auto& cell = result.raw[i];
      if (!cell.error.empty()) continue;
      int s = result.raw_seed_index[i];
      out << fmt(cell.lambda) << "," << fmt(cell.rho) << "," << s << ",unadjusted,"
          << fmt(cell.rmse_unadjusted) << "," << fmt(cell.treated_count) << "\n";
      out << fmt(cell.lambda) << "," << fmt(cell.rho) << "," << s << ",weighted,"
          << fmt(cell.rmse_weighted) << "," << fmt(cell.treated_count) << "\n";
      out << fmt(cell.lambda) << "," << fmt(cell.rho) << "," << s << ",adjusted,"
          << fmt(cell.rmse_adjusted) << "," << fmt(cell.treated_count) << "\n";
    }
  }

  std::size_t failures = 0;
  std::ostringstream status;
  for (std::size_t i = 0; i < result.raw.size(); ++i) {
    const auto& cell = result.raw[i];
    if (cell.error.empty()) continue;
    ++failures;
    status << "cell (" << cell.lambda << ", " << cell.rho << ") seed "
           << result.raw_seed_index[i] << ": " << cell.error << "\n";
  }
  std::cout << "sweep: " << result.cells.size() << " cells x " << seeds
            << " seeds -> " << cfg.out_dir << "/sweep.csv\n";
  require(failures == 0, "sweep: ", failures, " cell(s) failed:\n", status.str());
}

}  // namespace ritw
