#include "ritw/adam.hpp"

#include <cmath>

#include "ritw/error.hpp"

namespace ritw {

void adam_step(ParameterStore& params, const GradMap& grads, AdamState& state) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, value] : params.all()) {
    auto git = grads.find(name);
    require(git != grads.end(), "adam: missing gradient for parameter '", name, "'");
    const Array& g = git->second;
    require(g.same_shape(value), "adam: gradient shape ", g.shape_str(),
            " does not match parameter '", name, "' ", value.shape_str());
    Array& m = state.first_moment.try_emplace(name, Array(value.shape())).first->second;
    Array& v = state.second_moment.try_emplace(name, Array(value.shape())).first->second;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      value[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double clip_global_norm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    (void)name;
    for (double v : g.data()) sq += v * v;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (auto& [name, g] : grads) {
      (void)name;
      for (double& v : g.data()) v *= scale;
    }
  }
  return norm;
}

}  // namespace ritw
