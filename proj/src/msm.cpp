#include "ritw/msm.hpp"

#include <algorithm>
#include <cmath>

#include "ritw/error.hpp"

namespace ritw {

namespace {

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

// Solve A x = b for symmetric positive definite A (in place Cholesky).
// Returns false when the factorization breaks down.
bool solve_spd(std::vector<double> a, std::vector<double> b, std::size_t p,
               std::vector<double>& out) {
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) acc -= a[i * p + k] * a[j * p + k];
      if (i == j) {
        if (acc <= 0.0 || !std::isfinite(acc)) return false;
        a[i * p + i] = std::sqrt(acc);
      } else {
        a[i * p + j] = acc / a[j * p + j];
      }
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    double acc = b[i];
    for (std::size_t k = 0; k < i; ++k) acc -= a[i * p + k] * b[k];
    b[i] = acc / a[i * p + i];
  }
  for (std::size_t ii = p; ii-- > 0;) {
    double acc = b[ii];
    for (std::size_t k = ii + 1; k < p; ++k) acc -= a[k * p + ii] * b[k];
    b[ii] = acc / a[ii * p + ii];
  }
  out = std::move(b);
  return true;
}

struct Objective {
  const DesignMatrix& d;
  double l2;  // applied to every non-intercept coefficient

  double value(const std::vector<double>& beta) const {
    double acc = 0.0;
    for (std::size_t r = 0; r < d.n; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < d.p; ++c) z += d.at(r, c) * beta[c];
      acc += d.w[r] * (softplus(z) - d.y[r] * z);
    }
    for (std::size_t c = 1; c < d.p; ++c) acc += l2 * beta[c] * beta[c];
    return acc;
  }

  void gradient(const std::vector<double>& beta, std::vector<double>& grad) const {
    grad.assign(d.p, 0.0);
    for (std::size_t r = 0; r < d.n; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < d.p; ++c) z += d.at(r, c) * beta[c];
      double residual = d.w[r] * (sigmoid_scalar(z) - d.y[r]);
      for (std::size_t c = 0; c < d.p; ++c) grad[c] += residual * d.at(r, c);
    }
    for (std::size_t c = 1; c < d.p; ++c) grad[c] += 2.0 * l2 * beta[c];
  }

  // Hessian with the current working weights w * p * (1 - p).
  void hessian(const std::vector<double>& beta, std::vector<double>& hess) const {
    hess.assign(d.p * d.p, 0.0);
    for (std::size_t r = 0; r < d.n; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < d.p; ++c) z += d.at(r, c) * beta[c];
      double p = sigmoid_scalar(z);
      double s = d.w[r] * p * (1.0 - p);
      if (s == 0.0) continue;
      for (std::size_t i = 0; i < d.p; ++i) {
        double si = s * d.at(r, i);
        for (std::size_t j = 0; j <= i; ++j) hess[i * d.p + j] += si * d.at(r, j);
      }
    }
    for (std::size_t i = 0; i < d.p; ++i)
      for (std::size_t j = i + 1; j < d.p; ++j) hess[i * d.p + j] = hess[j * d.p + i];
    for (std::size_t c = 1; c < d.p; ++c) hess[c * d.p + c] += 2.0 * l2;
  }
};

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

MsmFit irls_fit(const DesignMatrix& design, const MsmOptions& options, bool& hessian_failed) {
  Objective obj{design, options.l2};
  MsmFit fit;
  fit.columns = design.columns;
  fit.beta.assign(design.p, 0.0);
  fit.solver = "irls";
  hessian_failed = false;

  double total_weight = 0.0;
  for (double w : design.w) total_weight += w;
  double tol = 1e-10 * std::max(1.0, total_weight);

  double value = obj.value(fit.beta);
  std::vector<double> grad, hess, step;
  for (int it = 1; it <= options.max_iterations; ++it) {
    obj.gradient(fit.beta, grad);
    fit.grad_norm = inf_norm(grad);
    fit.iterations = it - 1;
    if (fit.grad_norm <= tol) {
      fit.converged = true;
      return fit;
    }
    obj.hessian(fit.beta, hess);
    if (!solve_spd(hess, grad, design.p, step)) {
      hessian_failed = true;
      return fit;
    }
    // Newton direction with step halving.
    double scale = 1.0;
    bool improved = false;
    std::vector<double> candidate(design.p);
    for (int half = 0; half < 40; ++half) {
      for (std::size_t c = 0; c < design.p; ++c)
        candidate[c] = fit.beta[c] - scale * step[c];
      double cv = obj.value(candidate);
      if (std::isfinite(cv) && cv <= value + 1e-14 * std::fabs(value)) {
        fit.beta = candidate;
        value = cv;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      hessian_failed = true;  // cannot make progress along the Newton direction
      return fit;
    }
  }
  obj.gradient(fit.beta, grad);
  fit.grad_norm = inf_norm(grad);
  fit.iterations = options.max_iterations;
  fit.converged = fit.grad_norm <= tol;
  return fit;
}

// Gradient descent with Barzilai-Borwein step sizes and a backtracking
// safeguard; plain fixed-step descent is far too slow at the tolerances the
// IRLS-equivalence contract needs.
MsmFit gd_fit(const DesignMatrix& design, const MsmOptions& options,
              std::vector<double> start) {
  Objective obj{design, options.l2};
  MsmFit fit;
  fit.columns = design.columns;
  fit.beta = start.empty() ? std::vector<double>(design.p, 0.0) : std::move(start);
  fit.solver = "gradient-descent";

  double total_weight = 0.0;
  for (double w : design.w) total_weight += w;
  double tol = 1e-9 * std::max(1.0, total_weight);

  double value = obj.value(fit.beta);
  std::vector<double> grad, prev_beta, prev_grad, candidate(design.p);
  obj.gradient(fit.beta, grad);
  double step = 1.0 / std::max(1.0, total_weight);
  for (int it = 1; it <= options.max_gd_iterations; ++it) {
    fit.grad_norm = inf_norm(grad);
    fit.iterations = it - 1;
    if (fit.grad_norm <= tol) {
      fit.converged = true;
      return fit;
    }
    if (!prev_beta.empty()) {
      double sy = 0.0, ss = 0.0;
      for (std::size_t c = 0; c < design.p; ++c) {
        double s = fit.beta[c] - prev_beta[c];
        double y = grad[c] - prev_grad[c];
        sy += s * y;
        ss += s * s;
      }
      if (sy > 1e-300 && ss > 0.0) step = ss / sy;
    }
    prev_beta = fit.beta;
    prev_grad = grad;
    double trial = step;
    for (int half = 0; half < 80; ++half) {
      for (std::size_t c = 0; c < design.p; ++c)
        candidate[c] = fit.beta[c] - trial * grad[c];
      double cv = obj.value(candidate);
      // Slightly non-monotone acceptance keeps the BB step usable.
      if (std::isfinite(cv) && cv <= value + 1e-10 * (1.0 + std::fabs(value))) {
        fit.beta = candidate;
        value = cv;
        break;
      }
      trial *= 0.5;
    }
    obj.gradient(fit.beta, grad);
  }
  fit.grad_norm = inf_norm(grad);
  fit.converged = fit.grad_norm <= tol * 100.0;
  return fit;
}

void append_baseline_columns(DesignMatrix& d, const std::vector<MsmRow>& rows,
                             std::size_t baseline_dim) {
  for (std::size_t j = 0; j < baseline_dim; ++j) d.columns.push_back("b" + std::to_string(j));
  (void)rows;
}

}  // namespace

double MsmFit::coefficient(const std::string& column) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] == column) return beta[c];
  }
  fail("msm fit: no column named '", column, "'");
}

bool MsmFit::has_column(const std::string& column) const {
  for (const auto& c : columns)
    if (c == column) return true;
  return false;
}

std::vector<MsmRow> build_ate_design(
    const Cohort& cohort,
    const std::map<std::string, std::vector<std::vector<double>>>& predictions_by_query,
    const StabilizedWeightSet& weights, int task) {
  int T = cohort.schema.horizon;
  std::vector<std::string> labels;
  std::vector<int> arms;
  for (int m = 0; m < T; ++m) {
    labels.push_back("initiate_at_" + std::to_string(m));
    arms.push_back(m);
  }
  labels.push_back("never");
  arms.push_back(-1);

  std::vector<MsmRow> rows;
  rows.reserve(cohort.size() * labels.size());
  for (std::size_t q = 0; q < labels.size(); ++q) {
    auto it = predictions_by_query.find(labels[q]);
    require(it != predictions_by_query.end(), "ate design: missing predictions for query '",
            labels[q], "'");
    const auto& preds = it->second;
    require(preds.size() == cohort.size(), "ate design: ", preds.size(),
            " predictions for ", cohort.size(), " records (query '", labels[q], "')");
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto& rec = cohort.records[i];
      require(task >= 0 && task < static_cast<int>(preds[i].size()),
              "ate design: task ", task, " out of range");
      MsmRow row;
      row.id = rec.id;
      row.arm = arms[q];
      row.time = arms[q] >= 0 ? static_cast<double>(arms[q]) : static_cast<double>(T);
      row.baseline = rec.baseline;
      row.target = preds[i][task];
      require(row.target >= 0.0 && row.target <= 1.0, "ate design: target ", row.target,
              " outside [0,1] for record ", rec.id);
      row.weight = weights.by_id(rec.id).weight;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

DesignMatrix ate_design_matrix(const std::vector<MsmRow>& rows, int horizon) {
  require(!rows.empty(), "ate design: no rows");
  std::size_t baseline_dim = rows.front().baseline.size();
  DesignMatrix d;
  d.columns = {"intercept", "time"};
  for (int m = 0; m < horizon; ++m) d.columns.push_back("init_" + std::to_string(m));
  append_baseline_columns(d, rows, baseline_dim);
  d.n = rows.size();
  d.p = d.columns.size();
  d.x.assign(d.n * d.p, 0.0);
  d.y.resize(d.n);
  d.w.resize(d.n);
  for (std::size_t r = 0; r < d.n; ++r) {
    const MsmRow& row = rows[r];
    require(row.baseline.size() == baseline_dim, "ate design: inconsistent baseline width");
    require(row.weight > 0.0, "ate design: non-positive weight for record ", row.id);
    double* xr = &d.x[r * d.p];
    xr[0] = 1.0;
    xr[1] = row.time;
    if (row.arm >= 0) {
      require(row.arm < horizon, "ate design: arm ", row.arm, " out of range");
      xr[2 + row.arm] = 1.0;
    }
    for (std::size_t j = 0; j < baseline_dim; ++j) xr[2 + horizon + j] = row.baseline[j];
    d.y[r] = row.target;
    d.w[r] = row.weight;
  }
  return d;
}

DesignMatrix hte_design_matrix(const std::vector<MsmRow>& rows) {
  require(!rows.empty(), "hte design: no rows");
  bool has0 = false, has1 = false;
  for (const auto& row : rows) {
    require(row.group == 0 || row.group == 1, "hte design: record ", row.id,
            " has no group indicator");
    (row.group == 0 ? has0 : has1) = true;
  }
  require(has0 && has1, "hte design: both groups must be represented");
  std::size_t baseline_dim = rows.front().baseline.size();
  DesignMatrix d;
  d.columns = {"intercept", "time", "treat", "group", "treat_x_group"};
  append_baseline_columns(d, rows, baseline_dim);
  d.n = rows.size();
  d.p = d.columns.size();
  d.x.assign(d.n * d.p, 0.0);
  d.y.resize(d.n);
  d.w.resize(d.n);
  for (std::size_t r = 0; r < d.n; ++r) {
    const MsmRow& row = rows[r];
    double treat = row.arm >= 0 ? 1.0 : 0.0;
    double* xr = &d.x[r * d.p];
    xr[0] = 1.0;
    xr[1] = row.time;
    xr[2] = treat;
    xr[3] = static_cast<double>(row.group);
    xr[4] = treat * static_cast<double>(row.group);
    for (std::size_t j = 0; j < baseline_dim; ++j) xr[5 + j] = row.baseline[j];
    d.y[r] = row.target;
    d.w[r] = row.weight;
  }
  return d;
}

MsmFit fit_weighted_logistic(const DesignMatrix& design, const MsmOptions& options) {
  require(design.n > 0 && design.p > 0, "logistic fit: empty design");
  for (std::size_t r = 0; r < design.n; ++r) {
    require(design.y[r] >= 0.0 && design.y[r] <= 1.0, "logistic fit: target ", design.y[r],
            " outside [0,1]");
    require(design.w[r] >= 0.0, "logistic fit: negative weight");
  }
  if (!options.force_gradient_descent) {
    bool hessian_failed = false;
    MsmFit fit = irls_fit(design, options, hessian_failed);
    if (fit.converged || !hessian_failed) return fit;
    // Non-positive-definite normal equations: retry with gradient descent
    // from the partial IRLS solution.
    MsmFit gd = gd_fit(design, options, fit.beta);
    return gd;
  }
  return gd_fit(design, options, {});
}

std::vector<std::pair<int, double>> ate_odds_ratios(const MsmFit& fit) {
  require(fit.converged, "odds ratios: fit did not converge (", fit.solver, ", grad norm ",
          fit.grad_norm, ")");
  std::vector<std::pair<int, double>> out;
  for (std::size_t c = 0; c < fit.columns.size(); ++c) {
    const std::string& name = fit.columns[c];
    if (name.rfind("init_", 0) == 0) {
      int m = std::stoi(name.substr(5));
      out.emplace_back(m, std::exp(fit.beta[c]));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool odds_ratios_monotone(const std::vector<std::pair<int, double>>& ors) {
  for (std::size_t i = 1; i < ors.size(); ++i) {
    if (ors[i].second < ors[i - 1].second) return false;
  }
  return true;
}

MsmFit fit_hte(const std::vector<MsmRow>& rows, const MsmOptions& options) {
  return fit_weighted_logistic(hte_design_matrix(rows), options);
}

double conditional_or(const MsmFit& fit, int group) {
  require(group == 0 || group == 1, "conditional odds ratio: group must be 0/1");
  double beta = fit.coefficient("treat");
  if (group == 1) beta += fit.coefficient("treat_x_group");
  return std::exp(beta);
}

std::map<int, double> empirical_ate(const Cohort& cohort,
                                    const StabilizedWeightSet* weights) {
  int T = cohort.schema.horizon;
  std::vector<double> treated_num(T, 0.0), treated_den(T, 0.0);
  double control_num = 0.0, control_den = 0.0;
  for (const auto& rec : cohort.records) {
    double w = 1.0;
    if (weights) w = weights->by_id(rec.id).weight;
    int init = rec.initiation_step();
    double y = rec.outcomes.at(0);
    if (init < 0) {
      control_num += w * y;
      control_den += w;
    } else {
      treated_num[init] += w * y;
      treated_den[init] += w;
    }
  }
  std::vector<int> empty;
  if (control_den == 0.0) empty.push_back(0);
  for (int t = 0; t < T; ++t)
    if (treated_den[t] == 0.0) empty.push_back(t + 1);
  if (!empty.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < empty.size(); ++i) {
      if (i) os << ",";
      os << (empty[i] == 0 ? std::string("control") : "t=" + std::to_string(empty[i]));
    }
    fail("empirical ate: empty group(s): ", os.str());
  }
  std::map<int, double> out;
  double control_mean = control_num / control_den;
  for (int t = 0; t < T; ++t) out[t + 1] = treated_num[t] / treated_den[t] - control_mean;
  return out;
}

LinearAteFit weighted_linear_ate(const Cohort& cohort, const StabilizedWeightSet& weights,
                                 double ridge) {
  int T = cohort.schema.horizon;
  std::size_t d = cohort.schema.baseline_dim;
  std::size_t p = 1 + T + d;
  std::size_t n = cohort.size();
  require(n > p, "linear ate: cohort too small for the design (", n, " rows, ", p,
          " columns)");

  std::vector<double> xtx(p * p, 0.0), xty(p, 0.0), xr(p, 0.0);
  for (const auto& rec : cohort.records) {
    double w = weights.by_id(rec.id).weight;
    require(w > 0.0, "linear ate: non-positive weight for record ", rec.id);
    std::fill(xr.begin(), xr.end(), 0.0);
    xr[0] = 1.0;
    int init = rec.initiation_step();
    if (init >= 0) xr[1 + init] = 1.0;
    for (std::size_t j = 0; j < d; ++j) xr[1 + T + j] = rec.baseline[j];
    double y = rec.outcomes.at(0);
    for (std::size_t i = 0; i < p; ++i) {
      double wi = w * xr[i];
      if (wi == 0.0) continue;
      for (std::size_t j = 0; j <= i; ++j) xtx[i * p + j] += wi * xr[j];
      xty[i] += wi * y;
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i + 1; j < p; ++j) xtx[i * p + j] = xtx[j * p + i];
    xtx[i * p + i] += ridge;
  }
  std::vector<double> beta;
  require(solve_spd(xtx, xty, p, beta),
          "linear ate: singular design (no treated arm variation?)");

  LinearAteFit fit;
  fit.beta = beta;
  fit.columns.push_back("intercept");
  for (int t = 1; t <= T; ++t) fit.columns.push_back("init_t" + std::to_string(t));
  for (std::size_t j = 0; j < d; ++j) fit.columns.push_back("b" + std::to_string(j));
  for (int t = 1; t <= T; ++t) fit.ate_by_time[t] = beta[t];
  return fit;
}

}  // namespace ritw
