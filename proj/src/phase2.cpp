#include "ritw/phase2.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ritw/adam.hpp"
#include "ritw/error.hpp"
#include "ritw/rng.hpp"

namespace ritw {

namespace {

// Encoder over [x_t ; a_t] for the full horizon plus an outcome head on
// (g, b, a_T). For a bidirectional encoder the head sees the last and first
// step outputs concatenated, so both directions contribute their
// full-history state.
struct Phase2Model {
  int d = 0, T = 0, K = 0;
  bool use_covariates = true;
  LstmDims enc;
  HeadDims head;

  static Phase2Model make(int d, int T, int K, int hidden, int layers, bool bidirectional,
                          bool use_covariates, bool use_baseline) {
    Phase2Model m;
    m.d = d;
    m.T = T;
    m.K = K;
    m.use_covariates = use_covariates;
    m.enc = LstmDims{d + 1, hidden, layers, bidirectional};
    int head_hidden = m.enc.output_size() * (bidirectional ? 2 : 1);
    m.head = HeadDims{head_hidden, use_baseline ? d : 0, 1, K};
    return m;
  }

  static Phase2Model from_meta(const nlohmann::json& meta) {
    return make(meta.at("d").get<int>(), meta.at("T").get<int>(), meta.at("K").get<int>(),
                meta.at("hidden").get<int>(), meta.at("layers").get<int>(),
                meta.at("bidirectional").get<bool>(), meta.at("use_covariates").get<bool>(),
                meta.at("use_baseline").get<bool>());
  }

  void init(ParameterStore& store, std::uint64_t seed) const {
    Rng rng(seed, "phase2-init");
    init_lstm_params(store, "enc", enc, rng);
    init_head_params(store, "y", head);
  }

  Tape::Var summary(Tape& tape, const Cohort& cohort, const std::vector<int>& idx,
                    const std::vector<int>* override_treatments) const {
    std::vector<Tape::Var> steps;
    for (int t = 0; t < T; ++t)
      steps.push_back(tape.input(
          batch::step_input(cohort, idx, t, override_treatments, !use_covariates)));
    std::vector<Tape::Var> hs = lstm_encode(tape, "enc", enc, steps);
    if (!enc.bidirectional) return hs.back();
    return tape.concat_cols(hs.back(), hs.front());
  }

  Tape::Var logits(Tape& tape, const Cohort& cohort, const std::vector<int>& idx,
                   const std::vector<int>* override_treatments, double dropout,
                   Rng* dropout_rng) const {
    Tape::Var g = summary(tape, cohort, idx, override_treatments);
    if (dropout > 0.0 && dropout_rng) {
      const Array& gv = tape.value(g);
      Array mask = Array::zeros(gv.rows(), gv.cols());
      double keep = 1.0 - dropout;
      for (double& v : mask.data()) v = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
      g = tape.mul(g, tape.input(std::move(mask)));
    }
    Tape::Var b;
    if (head.baseline_size > 0) b = tape.input(batch::baseline_matrix(cohort, idx));
    Array last_a = Array::zeros(idx.size(), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      int a = override_treatments ? override_treatments->back()
                                  : cohort.records[idx[r]].treatments.back();
      last_a.at(r, 0) = static_cast<double>(a);
    }
    return head_logits(tape, "y", head, g, b, tape.input(std::move(last_a)));
  }
};

// Per-element loss weights: record weight on columns trained with the given
// loss, zero elsewhere.
Array loss_mask(const std::vector<double>& record_weights, const TaskSpec& tasks,
                TaskLoss which, double scale) {
  Array m = Array::zeros(record_weights.size(), tasks.size());
  for (std::size_t r = 0; r < record_weights.size(); ++r)
    for (int k = 0; k < tasks.size(); ++k)
      if (tasks.losses[k] == which) m.at(r, k) = record_weights[r] * scale;
  return m;
}

Tape::Var weighted_task_loss(Tape& tape, Tape::Var logits, const Array& targets,
                             const std::vector<double>& record_weights,
                             const TaskSpec& tasks, double scale) {
  bool any_bce = false, any_mse = false;
  for (TaskLoss l : tasks.losses) (l == TaskLoss::kBinaryCrossEntropy ? any_bce : any_mse) = true;
  Tape::Var loss = tape.input(Array::scalar(0.0));
  if (any_bce)
    loss = tape.add(loss, tape.weighted_bce_logits(
                              logits, targets,
                              loss_mask(record_weights, tasks, TaskLoss::kBinaryCrossEntropy, scale)));
  if (any_mse)
    loss = tape.add(loss, tape.weighted_squared_error(
                              logits, targets,
                              loss_mask(record_weights, tasks, TaskLoss::kMeanSquaredError, scale)));
  return loss;
}

std::vector<double> weights_for(const StabilizedWeightSet& weights, const Cohort& cohort,
                                const std::vector<int>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    int id = cohort.records[idx[r]].id;
    require(weights.has_id(id), "train_phase2: missing weight for record ", id);
    double w = weights.by_id(id).weight;
    require(w >= 0.0, "train_phase2: negative weight for record ", id);
    out[r] = w;
  }
  return out;
}

void maybe_normalize(std::vector<double>& w) {
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  if (mean > 0.0)
    for (double& v : w) v /= mean;
}

double outcome_loss_value(const Phase2Model& model, const ParameterStore& store,
                          const Cohort& cohort, const std::vector<int>& idx,
                          const std::vector<double>& record_weights, const TaskSpec& tasks,
                          double l2) {
  Tape t(&store);
  Tape::Var z = model.logits(t, cohort, idx, nullptr, 0.0, nullptr);
  Tape::Var loss = weighted_task_loss(t, z, batch::outcome_matrix(cohort, idx),
                                      record_weights, tasks, 1.0 / idx.size());
  if (l2 > 0.0) loss = t.add(loss, t.scale_shift(head_weight_l2(t, "y", model.head), l2, 0.0));
  return t.value(loss)[0];
}

}  // namespace

TaskSpec TaskSpec::continuous(int tasks) {
  TaskSpec s;
  s.links.assign(tasks, Link::kIdentity);
  s.losses.assign(tasks, TaskLoss::kMeanSquaredError);
  return s;
}

TaskSpec TaskSpec::binary(int tasks) {
  TaskSpec s;
  s.links.assign(tasks, Link::kLogistic);
  s.losses.assign(tasks, TaskLoss::kBinaryCrossEntropy);
  return s;
}

void TaskSpec::validate() const {
  require(!links.empty() && links.size() == losses.size(), "task spec: ", links.size(),
          " links vs ", losses.size(), " losses");
  for (std::size_t k = 0; k < links.size(); ++k) {
    bool logistic = links[k] == Link::kLogistic;
    bool bce = losses[k] == TaskLoss::kBinaryCrossEntropy;
    require(logistic == bce, "task spec: task ", k,
            " must pair logistic with binary cross entropy and identity with mean squared error");
  }
}

nlohmann::json TaskSpec::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t k = 0; k < links.size(); ++k)
    arr.push_back(links[k] == Link::kLogistic ? "logistic" : "identity");
  return arr;
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  TaskSpec s;
  for (const auto& v : j) {
    std::string kind = v.get<std::string>();
    if (kind == "logistic") {
      s.links.push_back(Link::kLogistic);
      s.losses.push_back(TaskLoss::kBinaryCrossEntropy);
    } else if (kind == "identity") {
      s.links.push_back(Link::kIdentity);
      s.losses.push_back(TaskLoss::kMeanSquaredError);
    } else {
      fail("task spec: unknown link '", kind, "'");
    }
  }
  s.validate();
  return s;
}

InterventionQuery InterventionQuery::never() { return InterventionQuery{}; }

InterventionQuery InterventionQuery::initiate_at(int step) {
  require(step >= 0, "query: initiation step must be >= 0");
  InterventionQuery q;
  q.initiation_step = step;
  return q;
}

InterventionQuery InterventionQuery::from_sequence(const std::vector<int>& seq, int horizon) {
  require(static_cast<int>(seq.size()) == horizon, "query: sequence length ", seq.size(),
          " does not match horizon ", horizon);
  InterventionQuery q;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    require(seq[t] == 0 || seq[t] == 1, "query: treatments must be 0/1");
    if (t > 0) require(seq[t] >= seq[t - 1], "query: sequence must be absorbing");
    if (seq[t] == 1 && !q.initiation_step) q.initiation_step = static_cast<int>(t);
  }
  return q;
}

std::vector<int> InterventionQuery::sequence(int horizon) const {
  require(horizon >= 1, "query: horizon must be positive");
  std::vector<int> seq(horizon, 0);
  if (initiation_step) {
    require(*initiation_step >= 0 && *initiation_step < horizon, "query: initiation step ",
            *initiation_step, " out of range for horizon ", horizon);
    for (int t = *initiation_step; t < horizon; ++t) seq[t] = 1;
  }
  return seq;
}

std::string InterventionQuery::label() const {
  if (!initiation_step) return "never";
  return "initiate_at_" + std::to_string(*initiation_step);
}

nlohmann::json Phase2Hyper::to_json() const {
  nlohmann::json j = {{"max_steps", max_steps},
                      {"batch_size", batch_size},
                      {"learning_rate", learning_rate},
                      {"l2", l2},
                      {"hidden_size", hidden_size},
                      {"layers", layers},
                      {"bidirectional", bidirectional},
                      {"dropout", dropout},
                      {"clip_norm", clip_norm},
                      {"adam_epsilon", adam_epsilon},
                      {"eval_every", eval_every},
                      {"patience", patience},
                      {"train_fraction", train_fraction},
                      {"seed", seed},
                      {"normalize_batch_weights", normalize_batch_weights},
                      {"use_covariates", use_covariates},
                      {"use_baseline", use_baseline},
                      {"e2e_outcome_updates", e2e_outcome_updates}};
  if (std::isfinite(val_loss_threshold)) j["val_loss_threshold"] = val_loss_threshold;
  return j;
}

Phase2Hyper Phase2Hyper::from_json(const nlohmann::json& j) {
  Phase2Hyper h;
  h.max_steps = j.at("max_steps").get<int>();
  h.batch_size = j.at("batch_size").get<int>();
  h.learning_rate = j.at("learning_rate").get<double>();
  h.l2 = j.at("l2").get<double>();
  h.hidden_size = j.at("hidden_size").get<int>();
  h.layers = j.at("layers").get<int>();
  h.bidirectional = j.at("bidirectional").get<bool>();
  h.dropout = j.at("dropout").get<double>();
  h.clip_norm = j.at("clip_norm").get<double>();
  h.adam_epsilon = j.value("adam_epsilon", 1e-8);
  h.eval_every = j.at("eval_every").get<int>();
  h.patience = j.at("patience").get<int>();
  h.train_fraction = j.at("train_fraction").get<double>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.normalize_batch_weights = j.at("normalize_batch_weights").get<bool>();
  h.use_covariates = j.at("use_covariates").get<bool>();
  h.use_baseline = j.value("use_baseline", true);
  h.e2e_outcome_updates = j.value("e2e_outcome_updates", true);
  if (j.contains("val_loss_threshold")) h.val_loss_threshold = j["val_loss_threshold"].get<double>();
  return h;
}

ModelCheckpoint train_phase2(const Cohort& cohort, const StabilizedWeightSet& weights,
                             const TaskSpec& tasks, const Phase2Hyper& hyper) {
  require(!cohort.records.empty(), "train_phase2: empty cohort");
  tasks.validate();
  require(tasks.size() == cohort.schema.tasks, "train_phase2: task spec has ", tasks.size(),
          " tasks, cohort has ", cohort.schema.tasks);
  int d = cohort.schema.baseline_dim, T = cohort.schema.horizon;
  Phase2Model model = Phase2Model::make(d, T, tasks.size(), hyper.hidden_size, hyper.layers,
                                        hyper.bidirectional, hyper.use_covariates,
                                        hyper.use_baseline);
  ParameterStore store;
  model.init(store, hyper.seed);
  AdamState adam;
  adam.learning_rate = hyper.learning_rate;
  adam.epsilon = hyper.adam_epsilon;

  SplitIndices split = split_cohort(cohort.size(), hyper.train_fraction, hyper.seed);
  // Weight coverage is checked upfront so a bad weights file fails fast.
  std::vector<int> all_idx(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) all_idx[i] = static_cast<int>(i);
  std::vector<double> all_weights = weights_for(weights, cohort, all_idx);
  std::vector<double> val_weights = weights_for(weights, cohort, split.val);

  Rng batch_rng(hyper.seed, "phase2-batch");
  Rng dropout_rng(hyper.seed, "phase2-dropout");

  TrainLog log;
  double best_val = std::numeric_limits<double>::infinity();
  ParameterStore best_params = store;
  int evals_since_best = 0;
  double last_train_loss = 0.0;
  int step = 0;

  auto evaluate = [&](int at_step) {
    double val = outcome_loss_value(model, store, cohort, split.val, val_weights, tasks,
                                    hyper.l2);
    log.entries.push_back({at_step, last_train_loss, val});
    if (std::isfinite(hyper.val_loss_threshold) && log.first_step_at_threshold < 0 &&
        val <= hyper.val_loss_threshold) {
      log.first_step_at_threshold = at_step;
    }
    if (val < best_val - 1e-12) {
      best_val = val;
      best_params = store;
      evals_since_best = 0;
    } else {
      evals_since_best += 1;
    }
  };

  evaluate(0);
  for (step = 1; step <= hyper.max_steps; ++step) {
    std::vector<int> idx(hyper.batch_size);
    std::vector<double> w(hyper.batch_size);
    for (int i = 0; i < hyper.batch_size; ++i) {
      idx[i] = split.train[batch_rng.uniform_int(split.train.size())];
      w[i] = all_weights[idx[i]];
    }
    if (hyper.normalize_batch_weights) maybe_normalize(w);

    Tape tape(&store);
    Tape::Var z = model.logits(tape, cohort, idx, nullptr, hyper.dropout, &dropout_rng);
    Tape::Var loss = weighted_task_loss(tape, z, batch::outcome_matrix(cohort, idx), w,
                                        tasks, 1.0 / idx.size());
    if (hyper.l2 > 0.0)
      loss = tape.add(loss, tape.scale_shift(head_weight_l2(tape, "y", model.head), hyper.l2, 0.0));
    last_train_loss = tape.value(loss)[0];
    require(std::isfinite(last_train_loss), "train_phase2: non-finite loss at step ", step);
    GradMap grads = tape.backward(loss);
    if (hyper.clip_norm > 0.0) clip_global_norm(grads, hyper.clip_norm);
    adam_step(store, grads, adam);

    if (step % hyper.eval_every == 0 || step == hyper.max_steps) {
      evaluate(step);
      if (evals_since_best >= hyper.patience) break;
    }
  }

  store = best_params;
  log.best_val_loss = best_val;
  log.steps_used = std::min(step, hyper.max_steps);

  ModelCheckpoint ckpt;
  ckpt.model_kind = "outcome";
  ckpt.meta = {{"d", d},
               {"T", T},
               {"K", tasks.size()},
               {"hidden", hyper.hidden_size},
               {"layers", hyper.layers},
               {"bidirectional", hyper.bidirectional},
               {"use_covariates", hyper.use_covariates},
               {"use_baseline", hyper.use_baseline},
               {"tasks", tasks.to_json()},
               {"hyper", hyper.to_json()},
               {"log", log.to_json()}};
  ckpt.params = std::move(store);
  return ckpt;
}

TrainLog phase2_train_log(const ModelCheckpoint& ckpt) {
  return TrainLog::from_json(ckpt.meta.at("log"));
}

ParameterStore phase2_initial_params(const Cohort& cohort, const TaskSpec& tasks,
                                     const Phase2Hyper& hyper) {
  Phase2Model model = Phase2Model::make(cohort.schema.baseline_dim, cohort.schema.horizon,
                                        tasks.size(), hyper.hidden_size, hyper.layers,
                                        hyper.bidirectional, hyper.use_covariates,
                                        hyper.use_baseline);
  ParameterStore store;
  model.init(store, hyper.seed);
  return store;
}

Tape::Var phase2_loss(Tape& tape, const Cohort& cohort, const std::vector<int>& idx,
                      const std::vector<double>& record_weights, const TaskSpec& tasks,
                      const Phase2Hyper& hyper) {
  Phase2Model model = Phase2Model::make(cohort.schema.baseline_dim, cohort.schema.horizon,
                                        tasks.size(), hyper.hidden_size, hyper.layers,
                                        hyper.bidirectional, hyper.use_covariates,
                                        hyper.use_baseline);
  Tape::Var z = model.logits(tape, cohort, idx, nullptr, 0.0, nullptr);
  Tape::Var loss = weighted_task_loss(tape, z, batch::outcome_matrix(cohort, idx),
                                      record_weights, tasks, 1.0 / idx.size());
  if (hyper.l2 > 0.0)
    loss = tape.add(loss, tape.scale_shift(head_weight_l2(tape, "y", model.head), hyper.l2, 0.0));
  return loss;
}

namespace {

std::vector<std::vector<double>> predict_impl(const ModelCheckpoint& ckpt,
                                              const Cohort& cohort,
                                              const std::vector<int>* override_treatments,
                                              bool zero_covariates_override) {
  require(ckpt.model_kind == "outcome" || ckpt.model_kind == "end_to_end",
          "predict: checkpoint kind '", ckpt.model_kind, "' has no outcome head");
  Phase2Model model = Phase2Model::from_meta(ckpt.meta);
  require(model.d == cohort.schema.baseline_dim && model.T == cohort.schema.horizon,
          "predict: checkpoint trained for d=", model.d, " T=", model.T,
          " but cohort has d=", cohort.schema.baseline_dim, " T=", cohort.schema.horizon);
  if (zero_covariates_override) model.use_covariates = false;
  TaskSpec tasks = TaskSpec::from_json(ckpt.meta.at("tasks"));

  std::vector<std::vector<double>> out(cohort.size(), std::vector<double>(model.K, 0.0));
  const std::size_t chunk = 1024;
  for (std::size_t start = 0; start < cohort.size(); start += chunk) {
    std::size_t end = std::min(cohort.size(), start + chunk);
    std::vector<int> idx(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = static_cast<int>(i);
    Tape tape(&ckpt.params);
    Tape::Var z = model.logits(tape, cohort, idx, override_treatments, 0.0, nullptr);
    Tape::Var pred = z;
    bool any_logistic = false;
    for (Link l : tasks.links) any_logistic |= l == Link::kLogistic;
    if (any_logistic) {
      // Apply the per-task links exactly as outcome_head would.
      const Array& zv = tape.value(z);
      Array mask = Array::zeros(zv.rows(), zv.cols());
      bool all_logistic = true;
      for (std::size_t c = 0; c < static_cast<std::size_t>(tasks.size()); ++c) {
        bool logistic = tasks.links[c] == Link::kLogistic;
        all_logistic &= logistic;
        for (std::size_t r = 0; r < zv.rows(); ++r) mask.at(r, c) = logistic ? 1.0 : 0.0;
      }
      pred = all_logistic ? tape.sigmoid(z) : tape.select(mask, tape.sigmoid(z), z);
    }
    const Array& pv = tape.value(pred);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (int k = 0; k < model.K; ++k) out[start + r][k] = pv.at(r, k);
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> predict_potential_outcomes(
    const ModelCheckpoint& ckpt, const Cohort& cohort, const InterventionQuery& query) {
  std::vector<int> seq = query.sequence(cohort.schema.horizon);
  return predict_impl(ckpt, cohort, &seq, !query.use_observed_covariates);
}

std::vector<std::vector<double>> predict_factual(const ModelCheckpoint& ckpt,
                                                 const Cohort& cohort) {
  return predict_impl(ckpt, cohort, nullptr, false);
}

ModelCheckpoint train_end_to_end(const Cohort& cohort, const TaskSpec& tasks,
                                 const Phase2Hyper& hyper) {
  require(!cohort.records.empty(), "train_end_to_end: empty cohort");
  require(!hyper.bidirectional,
          "train_end_to_end: the shared encoder must stay causal (unidirectional) because "
          "it also emits propensities");
  tasks.validate();
  int d = cohort.schema.baseline_dim, T = cohort.schema.horizon;
  Phase2Model model = Phase2Model::make(d, T, tasks.size(), hyper.hidden_size, hyper.layers,
                                        false, hyper.use_covariates, hyper.use_baseline);
  HeadDims ip_head{model.enc.output_size(), d, 0, 1};

  ParameterStore store;
  model.init(store, hyper.seed);
  init_head_params(store, "ip", ip_head);
  AdamState adam;
  adam.learning_rate = hyper.learning_rate;
  adam.epsilon = hyper.adam_epsilon;

  SplitIndices split = split_cohort(cohort.size(), hyper.train_fraction, hyper.seed);
  NumeratorTable numerators = NumeratorTable::estimate(cohort);
  Rng batch_rng(hyper.seed, "e2e-batch");

  // Propensity logits share the per-step hidden states of the outcome encoder:
  // step m reads h_{m-1}, with a zero state at m = 1.
  auto propensity_logits = [&](Tape& tape, const std::vector<int>& idx) {
    std::vector<Tape::Var> steps;
    for (int t = 0; t < T; ++t)
      steps.push_back(tape.input(batch::step_input(cohort, idx, t, nullptr,
                                                   !hyper.use_covariates)));
    std::vector<Tape::Var> hs = lstm_encode(tape, "enc", model.enc, steps);
    Tape::Var b = tape.input(batch::baseline_matrix(cohort, idx));
    std::vector<Tape::Var> out(T);
    for (int m = 1; m <= T; ++m) {
      Tape::Var h = m == 1 ? tape.input(Array::zeros(idx.size(), model.enc.output_size()))
                           : hs[m - 2];
      out[m - 1] = head_logits(tape, "ip", ip_head, h, b);
    }
    return out;
  };

  // Stabilized weights for a record set from the current propensity head,
  // used as constants in the outcome loss.
  auto current_weights = [&](const std::vector<int>& idx) {
    Tape tape(&store);
    std::vector<Tape::Var> zs = propensity_logits(tape, idx);
    std::vector<double> w(idx.size(), 0.0);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& rec = cohort.records[idx[r]];
      int init = rec.initiation_step();
      int last_step = init < 0 ? T : init + 1;
      double log_sum = 0.0;
      for (int m = 1; m <= last_step; ++m) {
        std::vector<int> prefix(rec.treatments.begin(), rec.treatments.begin() + (m - 1));
        int action = rec.treatments[m - 1];
        double z = tape.value(zs[m - 1]).at(r, 0);
        double p = std::clamp(1.0 / (1.0 + std::exp(-z)), 1e-6, 1.0 - 1e-6);
        double denom = action == 1 ? p : 1.0 - p;
        log_sum += numerators.log_probability(m, prefix, action) - std::log(denom);
      }
      w[r] = std::exp(log_sum);
    }
    return w;
  };

  // One-sided alternation has a frozen outcome head, so model selection
  // falls back to the propensity loss.
  auto ip_loss_value = [&](const std::vector<int>& idx) {
    Tape tape(&store);
    std::vector<Tape::Var> zs = propensity_logits(tape, idx);
    double scale = 1.0 / static_cast<double>(idx.size());
    Tape::Var loss = tape.input(Array::scalar(0.0));
    for (int m = 1; m <= T; ++m) {
      Array labels = Array::zeros(idx.size(), 1), mask = Array::zeros(idx.size(), 1);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& rec = cohort.records[idx[r]];
        int init = rec.initiation_step();
        labels.at(r, 0) = rec.treatments[m - 1];
        mask.at(r, 0) = (init < 0 || init >= m - 1) ? scale : 0.0;
      }
      loss = tape.add(loss, tape.weighted_bce_logits(zs[m - 1], labels, mask));
    }
    return tape.value(loss)[0];
  };

  TrainLog log;
  double best_val = std::numeric_limits<double>::infinity();
  ParameterStore best_params = store;
  int evals_since_best = 0;
  double last_train_loss = 0.0;
  int step = 0;

  auto evaluate = [&](int at_step) {
    double val;
    if (hyper.e2e_outcome_updates) {
      std::vector<double> vw = current_weights(split.val);
      val = outcome_loss_value(model, store, cohort, split.val, vw, tasks, hyper.l2);
    } else {
      val = ip_loss_value(split.val);
    }
    log.entries.push_back({at_step, last_train_loss, val});
    if (std::isfinite(hyper.val_loss_threshold) && log.first_step_at_threshold < 0 &&
        val <= hyper.val_loss_threshold) {
      log.first_step_at_threshold = at_step;
    }
    if (val < best_val - 1e-12) {
      best_val = val;
      best_params = store;
      evals_since_best = 0;
    } else {
      evals_since_best += 1;
    }
  };

  evaluate(0);
  for (step = 1; step <= hyper.max_steps; ++step) {
    std::vector<int> idx(hyper.batch_size);
    for (int i = 0; i < hyper.batch_size; ++i)
      idx[i] = split.train[batch_rng.uniform_int(split.train.size())];
    double scale = 1.0 / static_cast<double>(idx.size());

    // Propensity side.
    {
      Tape tape(&store);
      std::vector<Tape::Var> zs = propensity_logits(tape, idx);
      Tape::Var loss = tape.input(Array::scalar(0.0));
      for (int m = 1; m <= T; ++m) {
        Array labels = Array::zeros(idx.size(), 1), mask = Array::zeros(idx.size(), 1);
        for (std::size_t r = 0; r < idx.size(); ++r) {
          const auto& rec = cohort.records[idx[r]];
          int init = rec.initiation_step();
          labels.at(r, 0) = rec.treatments[m - 1];
          mask.at(r, 0) = (init < 0 || init >= m - 1) ? scale : 0.0;
        }
        loss = tape.add(loss, tape.weighted_bce_logits(zs[m - 1], labels, mask));
      }
      if (hyper.l2 > 0.0)
        loss = tape.add(loss, tape.scale_shift(head_weight_l2(tape, "ip", ip_head), hyper.l2, 0.0));
      GradMap grads = tape.backward(loss);
      if (hyper.clip_norm > 0.0) clip_global_norm(grads, hyper.clip_norm);
      adam_step(store, grads, adam);
    }

    // Outcome side with freshly recomputed, detached weights.
    if (hyper.e2e_outcome_updates) {
      std::vector<double> w = current_weights(idx);
      if (hyper.normalize_batch_weights) maybe_normalize(w);
      Tape tape(&store);
      Tape::Var z = model.logits(tape, cohort, idx, nullptr, 0.0, nullptr);
      Tape::Var loss = weighted_task_loss(tape, z, batch::outcome_matrix(cohort, idx), w,
                                          tasks, scale);
      last_train_loss = tape.value(loss)[0];
      require(std::isfinite(last_train_loss), "train_end_to_end: non-finite loss at step ",
              step);
      GradMap grads = tape.backward(loss);
      if (hyper.clip_norm > 0.0) clip_global_norm(grads, hyper.clip_norm);
      adam_step(store, grads, adam);
    }

    if (step % hyper.eval_every == 0 || step == hyper.max_steps) {
      evaluate(step);
      if (evals_since_best >= hyper.patience) break;
    }
  }

  store = best_params;
  log.best_val_loss = best_val;
  log.steps_used = std::min(step, hyper.max_steps);

  ModelCheckpoint ckpt;
  ckpt.model_kind = "end_to_end";
  ckpt.meta = {{"d", d},
               {"T", T},
               {"K", tasks.size()},
               {"hidden", hyper.hidden_size},
               {"layers", hyper.layers},
               {"bidirectional", false},
               {"use_covariates", hyper.use_covariates},
               {"use_baseline", hyper.use_baseline},
               {"tasks", tasks.to_json()},
               {"hyper", hyper.to_json()},
               {"log", log.to_json()}};
  ckpt.params = std::move(store);
  return ckpt;
}

nlohmann::json ModeReport::to_json() const {
  return {{"mode", mode},
          {"steps_to_threshold", steps_to_threshold},
          {"threshold_metric", threshold_metric},
          {"threshold_value", threshold_value},
          {"final_metric", final_metric}};
}

}  // namespace ritw
