#include "ritw/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "ritw/error.hpp"

namespace ritw {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& context) {
  require(j.is_object(), "config: ", context, " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    require(allowed.count(key) > 0, "config: unknown key '", key, "' in ", context);
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

SimConfig sim_from_json(const nlohmann::json& j, std::uint64_t seed) {
  check_keys(j,
             {"n", "d", "T", "C", "lambda", "rho", "decay_rate", "outcome_noise_sd",
              "binary_outcome", "binary_scale"},
             "sim");
  SimConfig s;
  s.samples = get_or(j, "n", s.samples);
  s.baseline_dim = get_or(j, "d", s.baseline_dim);
  s.horizon = get_or(j, "T", s.horizon);
  s.effect_constant = get_or(j, "C", s.effect_constant);
  if (j.contains("lambda")) s.lambda = json_extended_number(j["lambda"], "sim.lambda");
  if (j.contains("rho")) s.rho = json_extended_number(j["rho"], "sim.rho");
  s.decay_rate = get_or(j, "decay_rate", s.decay_rate);
  s.outcome_noise_sd = get_or(j, "outcome_noise_sd", s.outcome_noise_sd);
  s.binary_outcome = get_or(j, "binary_outcome", s.binary_outcome);
  s.binary_scale = get_or(j, "binary_scale", s.binary_scale);
  s.seed = seed;
  return s;
}

Phase1Hyper phase1_from_json(const nlohmann::json& j, std::uint64_t seed) {
  check_keys(j,
             {"max_steps", "batch_size", "learning_rate", "l2", "hidden_size", "layers",
              "dropout", "clip_norm", "eval_every", "patience", "train_fraction"},
             "phase1");
  Phase1Hyper h;
  h.max_steps = get_or(j, "max_steps", h.max_steps);
  h.batch_size = get_or(j, "batch_size", h.batch_size);
  h.learning_rate = get_or(j, "learning_rate", h.learning_rate);
  h.l2 = get_or(j, "l2", h.l2);
  h.hidden_size = get_or(j, "hidden_size", h.hidden_size);
  h.layers = get_or(j, "layers", h.layers);
  h.dropout = get_or(j, "dropout", h.dropout);
  h.clip_norm = get_or(j, "clip_norm", h.clip_norm);
  h.eval_every = get_or(j, "eval_every", h.eval_every);
  h.patience = get_or(j, "patience", h.patience);
  h.train_fraction = get_or(j, "train_fraction", h.train_fraction);
  h.seed = seed;
  return h;
}

Phase2Hyper phase2_from_json(const nlohmann::json& j, std::uint64_t seed) {
  check_keys(j,
             {"max_steps", "batch_size", "learning_rate", "l2", "hidden_size", "layers",
              "bidirectional", "dropout", "clip_norm", "eval_every", "patience",
              "train_fraction", "normalize_batch_weights", "use_covariates",
              "use_baseline", "val_loss_threshold"},
             "phase2");
  Phase2Hyper h;
  h.max_steps = get_or(j, "max_steps", h.max_steps);
  h.batch_size = get_or(j, "batch_size", h.batch_size);
  h.learning_rate = get_or(j, "learning_rate", h.learning_rate);
  h.l2 = get_or(j, "l2", h.l2);
  h.hidden_size = get_or(j, "hidden_size", h.hidden_size);
  h.layers = get_or(j, "layers", h.layers);
  h.bidirectional = get_or(j, "bidirectional", h.bidirectional);
  h.dropout = get_or(j, "dropout", h.dropout);
  h.clip_norm = get_or(j, "clip_norm", h.clip_norm);
  h.eval_every = get_or(j, "eval_every", h.eval_every);
  h.patience = get_or(j, "patience", h.patience);
  h.train_fraction = get_or(j, "train_fraction", h.train_fraction);
  h.normalize_batch_weights = get_or(j, "normalize_batch_weights", h.normalize_batch_weights);
  h.use_covariates = get_or(j, "use_covariates", h.use_covariates);
  h.use_baseline = get_or(j, "use_baseline", h.use_baseline);
  if (j.contains("val_loss_threshold"))
    h.val_loss_threshold = j["val_loss_threshold"].get<double>();
  h.seed = seed;
  return h;
}

}  // namespace

double json_extended_number(const nlohmann::json& j, const std::string& context) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      require(pos == s.size(), "config: trailing characters in ", context, ": '", s, "'");
      return v;
    } catch (const std::exception&) {
      fail("config: cannot parse ", context, " value '", s, "'");
    }
  }
  fail("config: ", context, " must be a number or a numeric string");
}

std::string RunConfig::path(const std::string& configured,
                            const std::string& default_name) const {
  if (!configured.empty()) return configured;
  return out_dir + "/" + default_name;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  check_keys(j,
             {"seed", "out_dir", "workers", "sim", "phase1", "phase2", "tasks", "msm",
              "truncate", "paths"},
             "config");
  require(j.contains("seed"), "config: 'seed' is mandatory (every run must be reproducible)");
  RunConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir);
  cfg.workers = get_or(j, "workers", cfg.workers);
  cfg.sim = sim_from_json(j.contains("sim") ? j["sim"] : nlohmann::json::object(), cfg.seed);
  cfg.phase1 = phase1_from_json(j.contains("phase1") ? j["phase1"] : nlohmann::json::object(),
                                derive_seed(cfg.seed, "phase1"));
  cfg.phase2 = phase2_from_json(j.contains("phase2") ? j["phase2"] : nlohmann::json::object(),
                                derive_seed(cfg.seed, "phase2"));
  if (j.contains("tasks")) cfg.tasks = TaskSpec::from_json(j["tasks"]);
  else if (cfg.sim.binary_outcome) cfg.tasks = TaskSpec::binary(1);
  if (j.contains("msm")) {
    check_keys(j["msm"], {"l2", "task"}, "msm");
    cfg.msm.l2 = get_or(j["msm"], "l2", cfg.msm.l2);
    cfg.msm.task = get_or(j["msm"], "task", cfg.msm.task);
  }
  if (j.contains("truncate") && !j["truncate"].is_null()) {
    check_keys(j["truncate"], {"q_lo", "q_hi"}, "truncate");
    TruncateConfig t;
    t.q_lo = j["truncate"].at("q_lo").get<double>();
    t.q_hi = j["truncate"].at("q_hi").get<double>();
    cfg.truncate = t;
  }
  if (j.contains("paths")) {
    check_keys(j["paths"],
               {"cohort", "randomized", "weights", "iptw_checkpoint", "outcome_checkpoint",
                "groups"},
               "paths");
    const auto& p = j["paths"];
    cfg.cohort_path = get_or<std::string>(p, "cohort", "");
    cfg.randomized_path = get_or<std::string>(p, "randomized", "");
    cfg.weights_path = get_or<std::string>(p, "weights", "");
    cfg.iptw_checkpoint_path = get_or<std::string>(p, "iptw_checkpoint", "");
    cfg.outcome_checkpoint_path = get_or<std::string>(p, "outcome_checkpoint", "");
    cfg.groups_path = get_or<std::string>(p, "groups", "");
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& file) {
  std::ifstream in(file);
  require(in.good(), "config: cannot open '", file, "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("config: parse error in '", file, "': ", e.what());
  }
  return from_json(j);
}

}  // namespace ritw
