#include "ritw/tape.hpp"

#include <cmath>
#include <cstddef>
#include <optional>

#include "ritw/error.hpp"

namespace ritw {

namespace {

// c += op(a) * op(b) for row-major matrices; transposition handled by loop
// order so no operand is materialized twice.
void gemm_acc(const Array& a, bool ta, const Array& b, bool tb, Array& c) {
  std::size_t m = c.rows(), n = c.cols();
  std::size_t k = ta ? a.rows() : a.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  std::size_t lda = a.cols(), ldb = b.cols(), ldc = n;
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double av = pa[i * lda + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * ldb;
        double* crow = pc + i * ldc;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        double av = pa[p * lda + i];
        if (av == 0.0) continue;
        const double* brow = pb + p * ldb;
        double* crow = pc + i * ldc;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* arow = pa + i * lda;
        const double* brow = pb + j * ldb;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        pc[i * ldc + j] += acc;
      }
  } else {
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        double av = pa[p * lda + i];
        if (av == 0.0) continue;
        double* crow = pc + i * ldc;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * pb[j * ldb + p];
      }
  }
}

double softplus(double z) {
  // log(1 + e^z) without overflow.
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

double sigmoid_scalar(double z) {
  if (z >= 0.0) {
    double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

// b broadcasts onto a when it is a scalar or a single row of matching width.
enum class Broadcast { kNone, kScalar, kRow };

Broadcast broadcast_kind(const Array& a, const Array& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::kNone;
  if (b.is_scalar()) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  fail(op, ": incompatible shapes ", a.shape_str(), " and ", b.shape_str());
}

}  // namespace

Array& ParameterStore::create(const std::string& name, Array initial) {
  require(!contains(name), "parameter store: duplicate parameter '", name, "'");
  return params_.emplace(name, std::move(initial)).first->second;
}

Array& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), "parameter store: unknown parameter '", name, "'");
  return it->second;
}

const Array& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), "parameter store: unknown parameter '", name, "'");
  return it->second;
}

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kAdd: return "add";
    case Op::kMul: return "multiply";
    case Op::kScaleShift: return "scale-shift";
    case Op::kMatmul: return "matrix-multiply";
    case Op::kConcatCols: return "concatenate";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSoftmax: return "softmax";
    case Op::kLog: return "log";
    case Op::kExp: return "exponent";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSelect: return "elementwise-select";
    case Op::kBceLogits: return "bce-logits";
    case Op::kCeLogitsRows: return "ce-logits-rows";
    case Op::kSquaredError: return "squared-error";
  }
  return "?";
}

Tape::Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "tape: invalid var id ", v.id);
  return nodes_[v.id];
}

const Array& Tape::value(Var v) const { return node(v).value; }

Tape::Var Tape::input(Array value) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::Var Tape::param(const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var{it->second};
  require(params_ != nullptr, "tape: no parameter store attached");
  Node n;
  n.op = Op::kParam;
  n.value = params_->get(name);
  n.param_name = name;
  n.requires_grad = true;
  Var v = push(std::move(n));
  param_nodes_[name] = v.id;
  return v;
}

Tape::Var Tape::add(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  Broadcast bc = broadcast_kind(na.value, nb.value, "add");
  Node n;
  n.op = Op::kAdd;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = na.value;
  std::size_t cols = na.value.cols();
  for (std::size_t i = 0; i < n.value.numel(); ++i) {
    double rhs = bc == Broadcast::kNone ? nb.value[i]
                 : bc == Broadcast::kScalar ? nb.value[0]
                                            : nb.value[i % cols];
    n.value[i] += rhs;
  }
  return push(std::move(n));
}

Tape::Var Tape::mul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  Broadcast bc = broadcast_kind(na.value, nb.value, "multiply");
  Node n;
  n.op = Op::kMul;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = na.value;
  std::size_t cols = na.value.cols();
  for (std::size_t i = 0; i < n.value.numel(); ++i) {
    double rhs = bc == Broadcast::kNone ? nb.value[i]
                 : bc == Broadcast::kScalar ? nb.value[0]
                                            : nb.value[i % cols];
    n.value[i] *= rhs;
  }
  return push(std::move(n));
}

Tape::Var Tape::scale_shift(Var a, double scale, double shift) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kScaleShift;
  n.in = {a.id, -1};
  n.a = scale;
  n.b = shift;
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  for (double& v : n.value.data()) v = scale * v + shift;
  return push(std::move(n));
}

Tape::Var Tape::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.cols() == nb.value.rows(), "matrix-multiply: incompatible shapes ",
          na.value.shape_str(), " and ", nb.value.shape_str());
  Node n;
  n.op = Op::kMatmul;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Array::zeros(na.value.rows(), nb.value.cols());
  gemm_acc(na.value, false, nb.value, false, n.value);
  return push(std::move(n));
}

Tape::Var Tape::concat_cols(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.rows() == nb.value.rows(), "concatenate: row mismatch ",
          na.value.shape_str(), " and ", nb.value.shape_str());
  std::size_t rows = na.value.rows(), ca = na.value.cols(), cb = nb.value.cols();
  Node n;
  n.op = Op::kConcatCols;
  n.in = {a.id, b.id};
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = Array::zeros(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) n.value.at(r, c) = na.value.at(r, c);
    for (std::size_t c = 0; c < cb; ++c) n.value.at(r, ca + c) = nb.value.at(r, c);
  }
  return push(std::move(n));
}

Tape::Var Tape::sigmoid(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kSigmoid;
  n.in = {a.id, -1};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  for (double& v : n.value.data()) v = sigmoid_scalar(v);
  return push(std::move(n));
}

Tape::Var Tape::tanh(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kTanh;
  n.in = {a.id, -1};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  for (double& v : n.value.data()) v = std::tanh(v);
  return push(std::move(n));
}

Tape::Var Tape::softmax(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kSoftmax;
  n.in = {a.id, -1};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  std::size_t rows = n.value.rows(), cols = n.value.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = n.value.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, n.value.at(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      double e = std::exp(n.value.at(r, c) - mx);
      n.value.at(r, c) = e;
      denom += e;
    }
    for (std::size_t c = 0; c < cols; ++c) n.value.at(r, c) /= denom;
  }
  return push(std::move(n));
}

Tape::Var Tape::log(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kLog;
  n.in = {a.id, -1};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  for (double& v : n.value.data()) {
    require(v > 0.0, "log: non-positive input ", v);
    v = std::log(v);
  }
  return push(std::move(n));
}

Tape::Var Tape::exp(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kExp;
  n.in = {a.id, -1};
  n.requires_grad = na.requires_grad;
  n.value = na.value;
  for (double& v : n.value.data()) v = std::exp(v);
  return push(std::move(n));
}

Tape::Var Tape::sum(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kSum;
  n.in = {a.id, -1};
  n.requires_grad = na.requires_grad;
  double acc = 0.0;
  for (double v : na.value.data()) acc += v;
  n.value = Array::scalar(acc);
  return push(std::move(n));
}

Tape::Var Tape::mean(Var a) {
  const Node& na = node(a);
  require(na.value.numel() > 0, "mean: empty input");
  Node n;
  n.op = Op::kMean;
  n.in = {a.id, -1};
  n.requires_grad = na.requires_grad;
  double acc = 0.0;
  for (double v : na.value.data()) acc += v;
  n.value = Array::scalar(acc / static_cast<double>(na.value.numel()));
  return push(std::move(n));
}

Tape::Var Tape::select(const Array& mask, Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  require(na.value.same_shape(nb.value) && na.value.same_shape(mask),
          "elementwise-select: incompatible shapes ", mask.shape_str(), ", ",
          na.value.shape_str(), ", ", nb.value.shape_str());
  Node n;
  n.op = Op::kSelect;
  n.in = {a.id, b.id};
  n.aux.push_back(mask);
  n.requires_grad = na.requires_grad || nb.requires_grad;
  n.value = na.value;
  for (std::size_t i = 0; i < n.value.numel(); ++i) {
    if (mask[i] == 0.0) n.value[i] = nb.value[i];
  }
  return push(std::move(n));
}

Tape::Var Tape::weighted_bce_logits(Var logits, const Array& targets, const Array& weights) {
  const Node& nz = node(logits);
  require(nz.value.same_shape(targets) && nz.value.same_shape(weights),
          "bce-logits: incompatible shapes ", nz.value.shape_str(), ", ",
          targets.shape_str(), ", ", weights.shape_str());
  Node n;
  n.op = Op::kBceLogits;
  n.in = {logits.id, -1};
  n.aux = {targets, weights};
  n.requires_grad = nz.requires_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.numel(); ++i) {
    acc += weights[i] * (softplus(nz.value[i]) - targets[i] * nz.value[i]);
  }
  n.value = Array::scalar(acc);
  return push(std::move(n));
}

Tape::Var Tape::weighted_ce_logits_rows(Var logits, const Array& onehot, const Array& row_weights) {
  const Node& nz = node(logits);
  require(nz.value.same_shape(onehot), "ce-logits-rows: logits ", nz.value.shape_str(),
          " vs targets ", onehot.shape_str());
  require(row_weights.numel() == nz.value.rows(), "ce-logits-rows: ", row_weights.numel(),
          " weights for ", nz.value.rows(), " rows");
  Node n;
  n.op = Op::kCeLogitsRows;
  n.in = {logits.id, -1};
  n.aux = {onehot, row_weights};
  n.requires_grad = nz.requires_grad;
  std::size_t rows = nz.value.rows(), cols = nz.value.cols();
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = nz.value.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, nz.value.at(r, c));
    double lse = 0.0, dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      lse += std::exp(nz.value.at(r, c) - mx);
      dot += onehot.at(r, c) * nz.value.at(r, c);
    }
    acc += row_weights[r] * (mx + std::log(lse) - dot);
  }
  n.value = Array::scalar(acc);
  return push(std::move(n));
}

Tape::Var Tape::weighted_squared_error(Var pred, const Array& targets, const Array& weights) {
  const Node& np = node(pred);
  require(np.value.same_shape(targets) && np.value.same_shape(weights),
          "squared-error: incompatible shapes ", np.value.shape_str(), ", ",
          targets.shape_str(), ", ", weights.shape_str());
  Node n;
  n.op = Op::kSquaredError;
  n.in = {pred.id, -1};
  n.aux = {targets, weights};
  n.requires_grad = np.requires_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.numel(); ++i) {
    double d = np.value[i] - targets[i];
    acc += weights[i] * d * d;
  }
  n.value = Array::scalar(acc);
  return push(std::move(n));
}

GradMap Tape::backward(Var loss) const {
  const Node& root = node(loss);
  require(root.value.is_scalar(), "backward: loss must be scalar, got ",
          root.value.shape_str());

  std::vector<std::optional<Array>> grads(nodes_.size());
  auto acc_grad = [&](int id, std::size_t i, double v) {
    if (!nodes_[id].requires_grad) return;
    if (!grads[id]) grads[id] = Array(nodes_[id].value.shape());
    (*grads[id])[i] += v;
  };
  auto grad_of = [&](int id) -> Array& {
    if (!grads[id]) grads[id] = Array(nodes_[id].value.shape());
    return *grads[id];
  };

  if (root.requires_grad) grad_of(loss.id)[0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || !grads[id]) continue;
    const Array& g = *grads[id];
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kAdd: {
        const Node& nb = nodes_[n.in[1]];
        std::size_t cols = n.value.cols();
        for (std::size_t i = 0; i < g.numel(); ++i) {
          acc_grad(n.in[0], i, g[i]);
          if (nb.value.same_shape(n.value)) acc_grad(n.in[1], i, g[i]);
          else if (nb.value.is_scalar()) acc_grad(n.in[1], 0, g[i]);
          else acc_grad(n.in[1], i % cols, g[i]);
        }
        break;
      }
      case Op::kMul: {
        const Node& na = nodes_[n.in[0]];
        const Node& nb = nodes_[n.in[1]];
        std::size_t cols = n.value.cols();
        for (std::size_t i = 0; i < g.numel(); ++i) {
          double bv = nb.value.same_shape(n.value) ? nb.value[i]
                      : nb.value.is_scalar() ? nb.value[0]
                                             : nb.value[i % cols];
          acc_grad(n.in[0], i, g[i] * bv);
          if (nb.value.same_shape(n.value)) acc_grad(n.in[1], i, g[i] * na.value[i]);
          else if (nb.value.is_scalar()) acc_grad(n.in[1], 0, g[i] * na.value[i]);
          else acc_grad(n.in[1], i % cols, g[i] * na.value[i]);
        }
        break;
      }
      case Op::kScaleShift:
        for (std::size_t i = 0; i < g.numel(); ++i) acc_grad(n.in[0], i, n.a * g[i]);
        break;
      case Op::kMatmul: {
        const Node& na = nodes_[n.in[0]];
        const Node& nb = nodes_[n.in[1]];
        if (na.requires_grad) gemm_acc(g, false, nb.value, true, grad_of(n.in[0]));
        if (nb.requires_grad) gemm_acc(na.value, true, g, false, grad_of(n.in[1]));
        break;
      }
      case Op::kConcatCols: {
        const Node& na = nodes_[n.in[0]];
        std::size_t rows = n.value.rows(), ca = na.value.cols(),
                    cb = n.value.cols() - ca;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < ca; ++c) acc_grad(n.in[0], r * ca + c, g.at(r, c));
          for (std::size_t c = 0; c < cb; ++c) acc_grad(n.in[1], r * cb + c, g.at(r, ca + c));
        }
        break;
      }
      case Op::kSigmoid:
        for (std::size_t i = 0; i < g.numel(); ++i) {
          double y = n.value[i];
          acc_grad(n.in[0], i, g[i] * y * (1.0 - y));
        }
        break;
      case Op::kTanh:
        for (std::size_t i = 0; i < g.numel(); ++i) {
          double y = n.value[i];
          acc_grad(n.in[0], i, g[i] * (1.0 - y * y));
        }
        break;
      case Op::kSoftmax: {
        std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * n.value.at(r, c);
          for (std::size_t c = 0; c < cols; ++c)
            acc_grad(n.in[0], r * cols + c, (g.at(r, c) - dot) * n.value.at(r, c));
        }
        break;
      }
      case Op::kLog: {
        const Node& na = nodes_[n.in[0]];
        for (std::size_t i = 0; i < g.numel(); ++i)
          acc_grad(n.in[0], i, g[i] / na.value[i]);
        break;
      }
      case Op::kExp:
        for (std::size_t i = 0; i < g.numel(); ++i)
          acc_grad(n.in[0], i, g[i] * n.value[i]);
        break;
      case Op::kSum: {
        const Node& na = nodes_[n.in[0]];
        for (std::size_t i = 0; i < na.value.numel(); ++i) acc_grad(n.in[0], i, g[0]);
        break;
      }
      case Op::kMean: {
        const Node& na = nodes_[n.in[0]];
        double inv = 1.0 / static_cast<double>(na.value.numel());
        for (std::size_t i = 0; i < na.value.numel(); ++i) acc_grad(n.in[0], i, g[0] * inv);
        break;
      }
      case Op::kSelect: {
        const Array& mask = n.aux[0];
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (mask[i] != 0.0) acc_grad(n.in[0], i, g[i]);
          else acc_grad(n.in[1], i, g[i]);
        }
        break;
      }
      case Op::kBceLogits: {
        const Node& nz = nodes_[n.in[0]];
        const Array& y = n.aux[0];
        const Array& w = n.aux[1];
        for (std::size_t i = 0; i < y.numel(); ++i)
          acc_grad(n.in[0], i, g[0] * w[i] * (sigmoid_scalar(nz.value[i]) - y[i]));
        break;
      }
      case Op::kCeLogitsRows: {
        const Node& nz = nodes_[n.in[0]];
        const Array& y = n.aux[0];
        const Array& w = n.aux[1];
        std::size_t rows = nz.value.rows(), cols = nz.value.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double mx = nz.value.at(r, 0);
          for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, nz.value.at(r, c));
          double denom = 0.0;
          for (std::size_t c = 0; c < cols; ++c) denom += std::exp(nz.value.at(r, c) - mx);
          for (std::size_t c = 0; c < cols; ++c) {
            double p = std::exp(nz.value.at(r, c) - mx) / denom;
            acc_grad(n.in[0], r * cols + c, g[0] * w[r] * (p - y.at(r, c)));
          }
        }
        break;
      }
      case Op::kSquaredError: {
        const Node& np = nodes_[n.in[0]];
        const Array& y = n.aux[0];
        const Array& w = n.aux[1];
        for (std::size_t i = 0; i < y.numel(); ++i)
          acc_grad(n.in[0], i, g[0] * w[i] * 2.0 * (np.value[i] - y[i]));
        break;
      }
    }
  }

  GradMap out;
  for (const auto& [name, node_id] : param_nodes_) {
    if (grads[node_id]) out[name] = std::move(*grads[node_id]);
  }
  if (params_) {
    for (const auto& [name, arr] : params_->all()) {
      if (!out.count(name)) out.emplace(name, Array(arr.shape()));
    }
  }
  return out;
}

Array sigmoid(const Array& a) {
  Array out = a;
  for (double& v : out.data()) v = sigmoid_scalar(v);
  return out;
}

Array softmax(const Array& a) {
  Tape t;
  return t.value(t.softmax(t.input(a)));
}

}  // namespace ritw
