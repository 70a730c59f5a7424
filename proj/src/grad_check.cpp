#include "ritw/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ritw/error.hpp"

namespace ritw {

double grad_check(const LossBuilder& build, ParameterStore& params, double step) {
  Tape tape(&params);
  Tape::Var loss = build(tape);
  require(tape.value(loss).is_scalar(), "grad_check: loss must be scalar");
  GradMap analytic = tape.backward(loss);

  auto eval = [&]() {
    Tape t(&params);
    return t.value(build(t))[0];
  };

  double worst = 0.0;
  for (auto& [name, value] : params.all()) {
    const Array& g = analytic.at(name);
    for (std::size_t i = 0; i < value.numel(); ++i) {
      double saved = value[i];
      value[i] = saved + step;
      double up = eval();
      value[i] = saved - step;
      double down = eval();
      value[i] = saved;
      double numeric = (up - down) / (2.0 * step);
      double denom = std::max({std::fabs(g[i]), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(g[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace ritw
