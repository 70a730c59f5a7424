// Finite-difference gradient checking for tape-built losses.
#pragma once

#include <functional>

#include "ritw/tape.hpp"

namespace ritw {

// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Tape::Var(Tape&)>;

// Compares the tape gradient of the loss against central finite differences
// (default step 1e-5). Returns the max over all parameter coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double grad_check(const LossBuilder& build, ParameterStore& params, double step = 1e-5);

}  // namespace ritw
