#include "ritw/phase1.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ritw/adam.hpp"
#include "ritw/error.hpp"
#include "ritw/nets.hpp"
#include "ritw/rng.hpp"

namespace ritw {

namespace {

std::string prefix_key(const std::vector<int>& prefix) {
  std::string key;
  key.reserve(prefix.size());
  for (int a : prefix) key.push_back(static_cast<char>('0' + a));
  return key;
}

constexpr double kPropensityFloor = 1e-6;

// The propensity network: a causal encoder over [x_t ; a_t] plus a logistic
// head on (h_{m-1}, b). Step m = 1 sees a zero hidden state.
struct Phase1Model {
  int d = 0, T = 0;
  LstmDims enc;
  HeadDims head;

  static Phase1Model make(int d, int T, int hidden, int layers) {
    Phase1Model m;
    m.d = d;
    m.T = T;
    m.enc = LstmDims{d + 1, hidden, layers, false};
    m.head = HeadDims{m.enc.output_size(), d, 0, 1};
    return m;
  }

  void init(ParameterStore& store, std::uint64_t seed) const {
    Rng rng(seed, "phase1-init");
    if (T >= 2) init_lstm_params(store, "enc", enc, rng);
    init_head_params(store, "ip", head);
  }

  // Logits for steps m = 1..T, each (batch x 1).
  std::vector<Tape::Var> logits(Tape& tape, const Cohort& cohort,
                                const std::vector<int>& idx, double dropout,
                                Rng* dropout_rng) const {
    std::size_t n = idx.size();
    Tape::Var b = tape.input(batch::baseline_matrix(cohort, idx));
    std::vector<Tape::Var> hiddens;
    if (T >= 2) {
      std::vector<Tape::Var> steps;
      for (int t = 0; t + 1 < T; ++t)
        steps.push_back(tape.input(batch::step_input(cohort, idx, t)));
      hiddens = lstm_encode(tape, "enc", enc, steps);
    }
    std::vector<Tape::Var> out(T);
    for (int m = 1; m <= T; ++m) {
      Tape::Var h = m == 1 ? tape.input(Array::zeros(n, enc.output_size()))
                           : hiddens[m - 2];
      if (dropout > 0.0 && dropout_rng) {
        Array mask = Array::zeros(n, enc.output_size());
        double keep = 1.0 - dropout;
        for (double& v : mask.data())
          v = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        h = tape.mul(h, tape.input(std::move(mask)));
      }
      out[m - 1] = head_logits(tape, "ip", head, h, b);
    }
    return out;
  }
};

Phase1Model model_from_meta(const nlohmann::json& meta) {
  return Phase1Model::make(meta.at("d").get<int>(), meta.at("T").get<int>(),
                           meta.at("hidden").get<int>(), meta.at("layers").get<int>());
}

// Per-step labels and at-risk masks. A record contributes to step m while no
// treatment happened before m; the initiation step itself is included.
void labels_and_masks(const Cohort& cohort, const std::vector<int>& idx, int m,
                      double weight_scale, Array& labels, Array& mask) {
  std::size_t n = idx.size();
  labels = Array::zeros(n, 1);
  mask = Array::zeros(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& rec = cohort.records[idx[r]];
    int init = rec.initiation_step();
    bool at_risk = init < 0 || init >= m - 1;
    labels.at(r, 0) = static_cast<double>(rec.treatments[m - 1]);
    mask.at(r, 0) = at_risk ? weight_scale : 0.0;
  }
}

double phase1_loss_value(const Phase1Model& model, const ParameterStore& store,
                         const Cohort& cohort, const std::vector<int>& idx, double l2) {
  Tape t(&store);
  std::vector<Tape::Var> zs = model.logits(t, cohort, idx, 0.0, nullptr);
  double scale = 1.0 / static_cast<double>(idx.size());
  Tape::Var loss = t.input(Array::scalar(0.0));
  for (int m = 1; m <= model.T; ++m) {
    Array labels, mask;
    labels_and_masks(cohort, idx, m, scale, labels, mask);
    loss = t.add(loss, t.weighted_bce_logits(zs[m - 1], labels, mask));
  }
  if (l2 > 0.0)
    loss = t.add(loss, t.scale_shift(head_weight_l2(t, "ip", model.head), l2, 0.0));
  return t.value(loss)[0];
}

double params_norm(const ParameterStore& store) {
  double sq = 0.0;
  for (const auto& [name, arr] : store.all()) {
    (void)name;
    for (double v : arr.data()) sq += v * v;
  }
  return std::sqrt(sq);
}

std::string batch_ids_str(const Cohort& cohort, const std::vector<int>& idx) {
  std::ostringstream os;
  for (std::size_t i = 0; i < idx.size() && i < 16; ++i) {
    if (i) os << ",";
    os << cohort.records[idx[i]].id;
  }
  if (idx.size() > 16) os << ",...";
  return os.str();
}

}  // namespace

NumeratorTable NumeratorTable::estimate(const Cohort& cohort) {
  require(!cohort.records.empty(), "numerators: empty cohort");
  NumeratorTable table;
  table.horizon_ = cohort.schema.horizon;
  for (int m = 1; m <= table.horizon_; ++m) {
    std::map<std::string, std::size_t> seen;
    for (const auto& rec : cohort.records) {
      std::vector<int> prefix(rec.treatments.begin(), rec.treatments.begin() + (m - 1));
      std::string key = prefix_key(prefix);
      auto it = seen.find(key);
      if (it == seen.end()) {
        Entry e;
        e.step = m;
        e.prefix = prefix;
        table.entries_.push_back(std::move(e));
        it = seen.emplace(key, table.entries_.size() - 1).first;
        table.index_[{m, key}] = it->second;
      }
      Entry& entry = table.entries_[it->second];
      entry.prefix_count += 1;
      entry.action_counts[rec.treatments[m - 1]] += 1;
    }
  }
  return table;
}

const NumeratorTable::Entry* NumeratorTable::find(int step,
                                                  const std::vector<int>& prefix) const {
  auto it = index_.find({step, prefix_key(prefix)});
  return it == index_.end() ? nullptr : &entries_[it->second];
}

double NumeratorTable::probability(int step, const std::vector<int>& prefix,
                                   int action) const {
  const Entry* e = find(step, prefix);
  require(e != nullptr, "numerators: prefix '", prefix_key(prefix),
          "' never observed at step ", step);
  auto it = e->action_counts.find(action);
  std::int64_t count = it == e->action_counts.end() ? 0 : it->second;
  return static_cast<double>(count) / static_cast<double>(e->prefix_count);
}

double NumeratorTable::log_probability(int step, const std::vector<int>& prefix,
                                       int action) const {
  const Entry* e = find(step, prefix);
  std::int64_t count = 0, denom = 0;
  if (e) {
    denom = e->prefix_count;
    auto it = e->action_counts.find(action);
    if (it != e->action_counts.end()) count = it->second;
  }
  if (count > 0) return std::log(static_cast<double>(count) / static_cast<double>(denom));
  // Unseen (prefix, action): add-one floor over the action alphabet.
  return std::log(1.0 / static_cast<double>(denom + num_actions_));
}

nlohmann::json Phase1Hyper::to_json() const {
  return {{"max_steps", max_steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"l2", l2},
          {"hidden_size", hidden_size},
          {"layers", layers},
          {"dropout", dropout},
          {"clip_norm", clip_norm},
          {"eval_every", eval_every},
          {"patience", patience},
          {"train_fraction", train_fraction},
          {"seed", seed}};
}

Phase1Hyper Phase1Hyper::from_json(const nlohmann::json& j) {
  Phase1Hyper h;
  h.max_steps = j.at("max_steps").get<int>();
  h.batch_size = j.at("batch_size").get<int>();
  h.learning_rate = j.at("learning_rate").get<double>();
  h.l2 = j.at("l2").get<double>();
  h.hidden_size = j.at("hidden_size").get<int>();
  h.layers = j.at("layers").get<int>();
  h.dropout = j.at("dropout").get<double>();
  h.clip_norm = j.at("clip_norm").get<double>();
  h.eval_every = j.at("eval_every").get<int>();
  h.patience = j.at("patience").get<int>();
  h.train_fraction = j.at("train_fraction").get<double>();
  h.seed = j.at("seed").get<std::uint64_t>();
  return h;
}

ModelCheckpoint train_phase1(const Cohort& cohort, const Phase1Hyper& hyper) {
  require(!cohort.records.empty(), "train_phase1: empty cohort");
  require(hyper.l2 >= 0.0, "train_phase1: l2 must be non-negative");
  int d = cohort.schema.baseline_dim, T = cohort.schema.horizon;
  Phase1Model model = Phase1Model::make(d, T, hyper.hidden_size, hyper.layers);

  ParameterStore store;
  model.init(store, hyper.seed);
  AdamState adam;
  adam.learning_rate = hyper.learning_rate;

  SplitIndices split = split_cohort(cohort.size(), hyper.train_fraction, hyper.seed);
  Rng batch_rng(hyper.seed, "phase1-batch");
  Rng dropout_rng(hyper.seed, "phase1-dropout");

  TrainLog log;
  double best_val = std::numeric_limits<double>::infinity();
  ParameterStore best_params = store;
  int evals_since_best = 0;
  double last_train_loss = 0.0;
  int step = 0;

  auto evaluate = [&](int at_step) {
    double val = phase1_loss_value(model, store, cohort, split.val, hyper.l2);
    log.entries.push_back({at_step, last_train_loss, val});
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

    Tape tape(&store);
    std::vector<Tape::Var> zs =
        model.logits(tape, cohort, idx, hyper.dropout, &dropout_rng);
    double scale = 1.0 / static_cast<double>(idx.size());
    Tape::Var loss = tape.input(Array::scalar(0.0));
    for (int m = 1; m <= T; ++m) {
      Array labels, mask;
      labels_and_masks(cohort, idx, m, scale, labels, mask);
      loss = tape.add(loss, tape.weighted_bce_logits(zs[m - 1], labels, mask));
    }
    if (hyper.l2 > 0.0)
      loss = tape.add(loss,
                      tape.scale_shift(head_weight_l2(tape, "ip", model.head), hyper.l2, 0.0));
    last_train_loss = tape.value(loss)[0];
    if (!std::isfinite(last_train_loss)) {
      fail("train_phase1: non-finite loss at step ", step, " (batch ids ",
           batch_ids_str(cohort, idx), ", parameter norm ", params_norm(store), ")");
    }
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
  ckpt.model_kind = "propensity";
  ckpt.meta = {{"d", d},
               {"T", T},
               {"hidden", hyper.hidden_size},
               {"layers", hyper.layers},
               {"hyper", hyper.to_json()},
               {"log", log.to_json()}};
  ckpt.params = std::move(store);
  return ckpt;
}

TrainLog phase1_train_log(const ModelCheckpoint& ckpt) {
  return TrainLog::from_json(ckpt.meta.at("log"));
}

ParameterStore phase1_initial_params(const Cohort& cohort, const Phase1Hyper& hyper) {
  Phase1Model model = Phase1Model::make(cohort.schema.baseline_dim, cohort.schema.horizon,
                                        hyper.hidden_size, hyper.layers);
  ParameterStore store;
  model.init(store, hyper.seed);
  return store;
}

Tape::Var phase1_loss(Tape& tape, const Cohort& cohort, const std::vector<int>& idx,
                      const Phase1Hyper& hyper) {
  Phase1Model model = Phase1Model::make(cohort.schema.baseline_dim, cohort.schema.horizon,
                                        hyper.hidden_size, hyper.layers);
  std::vector<Tape::Var> zs = model.logits(tape, cohort, idx, 0.0, nullptr);
  double scale = 1.0 / static_cast<double>(idx.size());
  Tape::Var loss = tape.input(Array::scalar(0.0));
  for (int m = 1; m <= model.T; ++m) {
    Array labels, mask;
    labels_and_masks(cohort, idx, m, scale, labels, mask);
    loss = tape.add(loss, tape.weighted_bce_logits(zs[m - 1], labels, mask));
  }
  if (hyper.l2 > 0.0)
    loss = tape.add(loss, tape.scale_shift(head_weight_l2(tape, "ip", model.head), hyper.l2, 0.0));
  return loss;
}

std::vector<std::vector<double>> emit_propensities(const Cohort& cohort,
                                                   const ModelCheckpoint& ckpt) {
  require(ckpt.model_kind == "propensity", "emit_propensities: checkpoint kind '",
          ckpt.model_kind, "' is not a propensity model");
  Phase1Model model = model_from_meta(ckpt.meta);
  require(model.d == cohort.schema.baseline_dim && model.T == cohort.schema.horizon,
          "emit_propensities: checkpoint trained for d=", model.d, " T=", model.T,
          " but cohort has d=", cohort.schema.baseline_dim, " T=", cohort.schema.horizon);

  std::vector<std::vector<double>> out(cohort.size(), std::vector<double>(model.T, 0.0));
  const std::size_t chunk = 1024;
  for (std::size_t start = 0; start < cohort.size(); start += chunk) {
    std::size_t end = std::min(cohort.size(), start + chunk);
    std::vector<int> idx(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = static_cast<int>(i);
    Tape tape(&ckpt.params);
    std::vector<Tape::Var> zs = model.logits(tape, cohort, idx, 0.0, nullptr);
    for (int m = 0; m < model.T; ++m) {
      const Array& z = tape.value(zs[m]);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double p = 1.0 / (1.0 + std::exp(-z.at(r, 0)));
        out[start + r][m] = std::clamp(p, kPropensityFloor, 1.0 - kPropensityFloor);
      }
    }
  }
  return out;
}

std::string StabilizedWeightSet::flag() const {
  std::ostringstream os;
  if (smoothed) os << "smoothed(" << smoothing_l2 << ")";
  else os << "raw";
  if (truncated) os << "|truncated(" << q_lo << ";" << q_hi << ")";
  return os.str();
}

std::vector<double> StabilizedWeightSet::values() const {
  std::vector<double> v;
  v.reserve(entries.size());
  for (const auto& e : entries) v.push_back(e.weight);
  return v;
}

const WeightEntry& StabilizedWeightSet::by_id(int id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  fail("weights: no entry for record id ", id);
}

bool StabilizedWeightSet::has_id(int id) const {
  for (const auto& e : entries) {
    if (e.id == id) return true;
  }
  return false;
}

StabilizedWeightSet compute_stabilized_weights(
    const NumeratorTable& numerators,
    const std::vector<std::vector<double>>& propensities, const Cohort& cohort,
    double smoothing_l2) {
  require(propensities.size() == cohort.size(), "weights: ", propensities.size(),
          " propensity rows for ", cohort.size(), " records");
  int T = cohort.schema.horizon;
  StabilizedWeightSet out;
  out.smoothed = smoothing_l2 > 0.0;
  out.smoothing_l2 = smoothing_l2;
  out.entries.reserve(cohort.size());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& rec = cohort.records[i];
    require(propensities[i].size() == static_cast<std::size_t>(T),
            "weights: record ", rec.id, " has ", propensities[i].size(),
            " propensities, horizon ", T);
    int init = rec.initiation_step();
    int last_step = init < 0 ? T : init + 1;  // product stops at initiation
    WeightEntry entry;
    entry.id = rec.id;
    double log_sum = 0.0;
    for (int m = 1; m <= last_step; ++m) {
      std::vector<int> prefix(rec.treatments.begin(), rec.treatments.begin() + (m - 1));
      int action = rec.treatments[m - 1];
      double log_num = numerators.log_probability(m, prefix, action);
      double p = propensities[i][m - 1];
      double denom = action == 1 ? p : 1.0 - p;
      require(denom > 0.0, "weights: zero denominator probability for record ", rec.id,
              " at step ", m);
      double log_den = std::log(denom);
      entry.log_numerators.push_back(log_num);
      entry.log_denominators.push_back(log_den);
      log_sum += log_num - log_den;
    }
    entry.weight = std::exp(log_sum);
    out.entries.push_back(std::move(entry));
  }
  return out;
}

double nearest_rank_quantile(std::vector<double> values, double q) {
  require(!values.empty(), "quantile: empty input");
  std::sort(values.begin(), values.end());
  if (q <= 0.0) return values.front();
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

StabilizedWeightSet truncate_weights(const StabilizedWeightSet& weights, double q_lo,
                                     double q_hi) {
  require(q_lo >= 0.0 && q_lo < q_hi && q_hi <= 1.0, "truncate: bad quantiles (", q_lo,
          ", ", q_hi, ")");
  StabilizedWeightSet out = weights;
  std::vector<double> vals = weights.values();
  if (vals.empty()) return out;
  double lo = nearest_rank_quantile(vals, q_lo);
  double hi = nearest_rank_quantile(vals, q_hi);
  for (auto& e : out.entries) e.weight = std::clamp(e.weight, lo, hi);
  out.truncated = true;
  out.q_lo = q_lo;
  out.q_hi = q_hi;
  return out;
}

nlohmann::json WeightDiagnostics::to_json() const {
  return {{"q01", q01}, {"mean", mean}, {"q99", q99}, {"min", min}, {"max", max}};
}

WeightDiagnostics weight_diagnostics(const std::vector<double>& values) {
  require(!values.empty(), "diagnostics: empty input");
  WeightDiagnostics d;
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  d.min = sorted.front();
  d.max = sorted.back();
  d.q01 = nearest_rank_quantile(sorted, 0.01);
  d.q99 = nearest_rank_quantile(sorted, 0.99);
  double acc = 0.0;
  for (double v : sorted) acc += v;
  d.mean = acc / static_cast<double>(sorted.size());
  return d;
}

void save_weights_csv(const StabilizedWeightSet& weights, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "weights: cannot open '", path, "' for writing");
  out << "id,w_s,flag\n";
  std::string flag = weights.flag();
  char buf[64];
  for (const auto& e : weights.entries) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
    out << e.id << "," << buf << "," << flag << "\n";
  }
  require(out.good(), "weights: write to '", path, "' failed");
}

StabilizedWeightSet load_weights_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "weights: cannot open '", path, "'");
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "weights: '", path, "' is empty");
  require(line == "id,w_s,flag", "weights: unexpected header '", line, "' in ", path);
  StabilizedWeightSet out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id_str, w_str, flag;
    require(static_cast<bool>(std::getline(row, id_str, ',')) &&
                static_cast<bool>(std::getline(row, w_str, ',')) &&
                static_cast<bool>(std::getline(row, flag)),
            "weights: malformed row '", line, "' in ", path);
    WeightEntry e;
    e.id = std::stoi(id_str);
    e.weight = std::stod(w_str);
    require(e.weight > 0.0, "weights: non-positive weight for record ", e.id);
    out.entries.push_back(std::move(e));
    if (flag.find("smoothed") != std::string::npos) out.smoothed = true;
    if (flag.find("truncated") != std::string::npos) out.truncated = true;
  }
  return out;
}

}  // namespace ritw
