#include "ritw/nets.hpp"

#include <cmath>

#include "ritw/error.hpp"

namespace ritw {

namespace {

std::string gate_name(const std::string& prefix, int layer, bool backward,
                      const char* kind, const char* gate) {
  return prefix + ".l" + std::to_string(layer) + (backward ? ".bwd." : ".fwd.") +
         kind + "_" + gate;
}

constexpr const char* kGates[4] = {"i", "f", "o", "c"};

void init_direction(ParameterStore& store, const std::string& prefix, int layer,
                    bool backward, int input_size, int hidden, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (const char* g : kGates) {
    Array wx = Array::zeros(input_size, hidden);
    for (double& v : wx.data()) v = rng.uniform(-bound, bound);
    store.create(gate_name(prefix, layer, backward, "w_x", g), std::move(wx));
    Array wh = Array::zeros(hidden, hidden);
    for (double& v : wh.data()) v = rng.uniform(-bound, bound);
    store.create(gate_name(prefix, layer, backward, "w_h", g), std::move(wh));
    double bias0 = (g[0] == 'f') ? 1.0 : 0.0;  // forget gate starts open
    store.create(gate_name(prefix, layer, backward, "b", g), Array::full(1, hidden, bias0));
  }
}

// One direction of one layer over the whole sequence.
std::vector<Tape::Var> run_direction(Tape& tape, const std::string& prefix, int layer,
                                     bool backward, int hidden,
                                     const std::vector<Tape::Var>& steps) {
  std::size_t batch = tape.value(steps[0]).rows();
  Tape::Var wxi = tape.param(gate_name(prefix, layer, backward, "w_x", "i"));
  Tape::Var wxf = tape.param(gate_name(prefix, layer, backward, "w_x", "f"));
  Tape::Var wxo = tape.param(gate_name(prefix, layer, backward, "w_x", "o"));
  Tape::Var wxc = tape.param(gate_name(prefix, layer, backward, "w_x", "c"));
  Tape::Var whi = tape.param(gate_name(prefix, layer, backward, "w_h", "i"));
  Tape::Var whf = tape.param(gate_name(prefix, layer, backward, "w_h", "f"));
  Tape::Var who = tape.param(gate_name(prefix, layer, backward, "w_h", "o"));
  Tape::Var whc = tape.param(gate_name(prefix, layer, backward, "w_h", "c"));
  Tape::Var bi = tape.param(gate_name(prefix, layer, backward, "b", "i"));
  Tape::Var bf = tape.param(gate_name(prefix, layer, backward, "b", "f"));
  Tape::Var bo = tape.param(gate_name(prefix, layer, backward, "b", "o"));
  Tape::Var bc = tape.param(gate_name(prefix, layer, backward, "b", "c"));

  Tape::Var h = tape.input(Array::zeros(batch, hidden));
  Tape::Var c = tape.input(Array::zeros(batch, hidden));
  std::vector<Tape::Var> out(steps.size());
  for (std::size_t idx = 0; idx < steps.size(); ++idx) {
    std::size_t s = backward ? steps.size() - 1 - idx : idx;
    Tape::Var x = steps[s];
    Tape::Var gi = tape.sigmoid(tape.add(tape.add(tape.matmul(x, wxi), tape.matmul(h, whi)), bi));
    Tape::Var gf = tape.sigmoid(tape.add(tape.add(tape.matmul(x, wxf), tape.matmul(h, whf)), bf));
    Tape::Var go = tape.sigmoid(tape.add(tape.add(tape.matmul(x, wxo), tape.matmul(h, who)), bo));
    Tape::Var gc = tape.tanh(tape.add(tape.add(tape.matmul(x, wxc), tape.matmul(h, whc)), bc));
    c = tape.add(tape.mul(gf, c), tape.mul(gi, gc));
    h = tape.mul(go, tape.tanh(c));
    out[s] = h;
  }
  return out;
}

}  // namespace

void init_lstm_params(ParameterStore& store, const std::string& prefix,
                      const LstmDims& dims, Rng& rng) {
  require(dims.input_size > 0 && dims.hidden_size > 0 && dims.layers > 0,
          "lstm init: sizes must be positive");
  for (int layer = 0; layer < dims.layers; ++layer) {
    int in = layer == 0 ? dims.input_size : dims.output_size();
    init_direction(store, prefix, layer, false, in, dims.hidden_size, rng);
    if (dims.bidirectional)
      init_direction(store, prefix, layer, true, in, dims.hidden_size, rng);
  }
}

std::vector<Tape::Var> lstm_encode(Tape& tape, const std::string& prefix,
                                   const LstmDims& dims,
                                   const std::vector<Tape::Var>& steps) {
  require(!steps.empty(), "lstm_encode: empty sequence");
  for (const Tape::Var& s : steps) {
    require(static_cast<int>(tape.value(s).cols()) == dims.input_size,
            "lstm_encode: step width ", tape.value(s).cols(), " does not match input size ",
            dims.input_size);
  }
  std::vector<Tape::Var> layer_in = steps;
  for (int layer = 0; layer < dims.layers; ++layer) {
    std::vector<Tape::Var> fwd = run_direction(tape, prefix, layer, false,
                                               dims.hidden_size, layer_in);
    if (!dims.bidirectional) {
      layer_in = std::move(fwd);
      continue;
    }
    std::vector<Tape::Var> bwd = run_direction(tape, prefix, layer, true,
                                               dims.hidden_size, layer_in);
    std::vector<Tape::Var> merged(steps.size());
    for (std::size_t s = 0; s < steps.size(); ++s)
      merged[s] = tape.concat_cols(fwd[s], bwd[s]);
    layer_in = std::move(merged);
  }
  return layer_in;
}

void init_head_params(ParameterStore& store, const std::string& prefix,
                      const HeadDims& dims) {
  require(dims.hidden_size > 0 && dims.outputs > 0, "head init: sizes must be positive");
  store.create(prefix + ".w_h", Array::zeros(dims.hidden_size, dims.outputs));
  if (dims.baseline_size > 0)
    store.create(prefix + ".w_b", Array::zeros(dims.baseline_size, dims.outputs));
  if (dims.treatment_size > 0)
    store.create(prefix + ".w_a", Array::zeros(dims.treatment_size, dims.outputs));
  store.create(prefix + ".c", Array::zeros(1, dims.outputs));
}

Tape::Var head_logits(Tape& tape, const std::string& prefix, const HeadDims& dims,
                      Tape::Var hidden, Tape::Var baseline, Tape::Var treatment) {
  Tape::Var z = tape.matmul(hidden, tape.param(prefix + ".w_h"));
  if (dims.baseline_size > 0)
    z = tape.add(z, tape.matmul(baseline, tape.param(prefix + ".w_b")));
  if (dims.treatment_size > 0) {
    require(treatment.id >= 0, "head: treatment input required");
    z = tape.add(z, tape.matmul(treatment, tape.param(prefix + ".w_a")));
  }
  return tape.add(z, tape.param(prefix + ".c"));
}

Tape::Var propensity_head(Tape& tape, const std::string& prefix, const HeadDims& dims,
                          Tape::Var hidden, Tape::Var baseline, Link link) {
  require(link == Link::kLogistic,
          "propensity head: identity link is not a probability model");
  Tape::Var z = head_logits(tape, prefix, dims, hidden, baseline);
  return dims.outputs == 1 ? tape.sigmoid(z) : tape.softmax(z);
}

Tape::Var outcome_head(Tape& tape, const std::string& prefix, const HeadDims& dims,
                       Tape::Var hidden, Tape::Var baseline, Tape::Var treatment,
                       const std::vector<Link>& links) {
  require(static_cast<int>(links.size()) == dims.outputs, "outcome head: ", links.size(),
          " links for ", dims.outputs, " tasks");
  Tape::Var z = head_logits(tape, prefix, dims, hidden, baseline, treatment);
  bool any_logistic = false, all_logistic = true;
  for (Link l : links) {
    if (l == Link::kLogistic) any_logistic = true;
    else all_logistic = false;
  }
  if (!any_logistic) return z;
  if (all_logistic) return tape.sigmoid(z);
  // Mixed links: apply sigmoid per logistic column via elementwise select.
  const Array& zv = tape.value(z);
  Array mask = Array::zeros(zv.rows(), zv.cols());
  for (std::size_t r = 0; r < zv.rows(); ++r)
    for (std::size_t c = 0; c < zv.cols(); ++c)
      mask.at(r, c) = links[c] == Link::kLogistic ? 1.0 : 0.0;
  return tape.select(mask, tape.sigmoid(z), z);
}

Tape::Var head_weight_l2(Tape& tape, const std::string& prefix, const HeadDims& dims) {
  Tape::Var wh = tape.param(prefix + ".w_h");
  Tape::Var acc = tape.sum(tape.mul(wh, wh));
  if (dims.baseline_size > 0) {
    Tape::Var wb = tape.param(prefix + ".w_b");
    acc = tape.add(acc, tape.sum(tape.mul(wb, wb)));
  }
  if (dims.treatment_size > 0) {
    Tape::Var wa = tape.param(prefix + ".w_a");
    acc = tape.add(acc, tape.sum(tape.mul(wa, wa)));
  }
  return acc;
}

}  // namespace ritw
