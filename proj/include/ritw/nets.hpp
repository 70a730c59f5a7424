// Recurrent sequence encoders and the regression heads they feed.
//
// Parameters are flat named arrays in a ParameterStore under a caller-chosen
// prefix, so whole models serialize as one name -> array map and the tape can
// address them uniformly.
#pragma once

#include <string>
#include <vector>

#include "ritw/rng.hpp"
#include "ritw/tape.hpp"

namespace ritw {

struct LstmDims {
  int input_size = 0;
  int hidden_size = 0;
  int layers = 1;
  bool bidirectional = false;

  int output_size() const { return hidden_size * (bidirectional ? 2 : 1); }
};

// Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) for the gate matrices, zero biases
// except the forget gate at 1.0.
void init_lstm_params(ParameterStore& store, const std::string& prefix,
                      const LstmDims& dims, Rng& rng);

// One hidden vector per step (batch x output_size). Steps are (batch x input)
// constants or tape nodes. Deterministic given parameters.
std::vector<Tape::Var> lstm_encode(Tape& tape, const std::string& prefix,
                                   const LstmDims& dims,
                                   const std::vector<Tape::Var>& steps);

enum class Link { kLogistic, kIdentity };

struct HeadDims {
  int hidden_size = 0;    // encoder output feeding the head
  int baseline_size = 0;
  int treatment_size = 0; // 0 for the propensity head
  int outputs = 1;        // logits per step (k+1 classes) or outcome tasks
};

// Zero-initialized affine head: hidden * w_h + baseline * w_b
// (+ treatment * w_a) + c.
void init_head_params(ParameterStore& store, const std::string& prefix,
                      const HeadDims& dims);

// Raw affine output; pass treatment = {id = -1} when the head has none.
Tape::Var head_logits(Tape& tape, const std::string& prefix, const HeadDims& dims,
                      Tape::Var hidden, Tape::Var baseline,
                      Tape::Var treatment = Tape::Var{});

// Treatment probability from (h_{m-1}, b): sigmoid for a single treatment,
// softmax over k+1 classes otherwise. Probabilities, never an identity link.
Tape::Var propensity_head(Tape& tape, const std::string& prefix, const HeadDims& dims,
                          Tape::Var hidden, Tape::Var baseline, Link link = Link::kLogistic);

// Outcome prediction from (g_t, b, a_t); per-task link chosen by `links`
// (one entry per output column).
Tape::Var outcome_head(Tape& tape, const std::string& prefix, const HeadDims& dims,
                       Tape::Var hidden, Tape::Var baseline, Tape::Var treatment,
                       const std::vector<Link>& links);

// Sum of squares of the head's weight matrices (not the intercept); the
// smoothing penalty term.
Tape::Var head_weight_l2(Tape& tape, const std::string& prefix, const HeadDims& dims);

}  // namespace ritw
