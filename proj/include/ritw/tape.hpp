// Reverse-mode automatic differentiation on dense arrays.
//
// The tape is define-by-run: a training step builds a fresh tape, runs
// backward once, and throws the tape away. Parameters live in a persistent
// ParameterStore; the tape only references them by name. Arrays recorded on
// the tape are immutable once created.
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "ritw/array.hpp"

namespace ritw {

// Named parameter arrays, ordered so that iteration (and therefore training
// and serialization) is deterministic.
class ParameterStore {
 public:
  Array& create(const std::string& name, Array initial);
  Array& get(const std::string& name);
  const Array& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::map<std::string, Array>& all() { return params_; }
  const std::map<std::string, Array>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Array> params_;
};

using GradMap = std::map<std::string, Array>;

class Tape {
 public:
  struct Var {
    int id = -1;
  };

  explicit Tape(const ParameterStore* params = nullptr) : params_(params) {}

  // Leaves.
  Var input(Array value);              // constant, no gradient
  Var param(const std::string& name);  // tracked leaf from the store

  // Elementwise / structural ops.
  Var add(Var a, Var b);          // same shape, or b a broadcast row / scalar
  Var mul(Var a, Var b);          // same shape, or b a broadcast row / scalar
  Var scale_shift(Var a, double scale, double shift);
  Var matmul(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softmax(Var a);  // row-wise
  Var log(Var a);      // domain: strictly positive input
  Var exp(Var a);
  Var sum(Var a);   // -> scalar
  Var mean(Var a);  // -> scalar
  // out = mask ? a : b, elementwise; mask is a constant.
  Var select(const Array& mask, Var a, Var b);

  // Fused numerically-stable losses (scalar outputs).
  // sum_i w_i * (softplus(z_i) - y_i * z_i): binary cross entropy on logits.
  Var weighted_bce_logits(Var logits, const Array& targets, const Array& weights);
  // Rows of logits vs one-hot targets with per-row weights: softmax cross entropy.
  Var weighted_ce_logits_rows(Var logits, const Array& onehot, const Array& row_weights);
  // sum_i w_i * (pred_i - y_i)^2
  Var weighted_squared_error(Var pred, const Array& targets, const Array& weights);

  const Array& value(Var v) const;

  // Gradients of a scalar loss for every parameter registered in the store;
  // parameters not reachable from the loss get zero gradients.
  GradMap backward(Var loss) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    kInput,
    kParam,
    kAdd,
    kMul,
    kScaleShift,
    kMatmul,
    kConcatCols,
    kSigmoid,
    kTanh,
    kSoftmax,
    kLog,
    kExp,
    kSum,
    kMean,
    kSelect,
    kBceLogits,
    kCeLogitsRows,
    kSquaredError,
  };

  struct Node {
    Op op;
    std::array<int, 2> in{-1, -1};
    Array value;
    std::vector<Array> aux;  // op constants (masks, targets, weights)
    double a = 0.0, b = 0.0;
    std::string param_name;
    bool requires_grad = false;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  static const char* op_name(Op op);

  std::vector<Node> nodes_;
  std::map<std::string, int> param_nodes_;
  const ParameterStore* params_;
};

// Convenience for tests and small call sites: run one op on plain arrays.
Array sigmoid(const Array& a);
Array softmax(const Array& a);

}  // namespace ritw
