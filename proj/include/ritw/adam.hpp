// Adam optimizer state and update, plus global-norm gradient clipping.
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ritw/tape.hpp"

namespace ritw {

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, Array> first_moment;
  std::map<std::string, Array> second_moment;
};

// Standard bias-corrected Adam update over every parameter in the store.
// Every parameter must have a gradient entry (zero gradients are fine).
void adam_step(ParameterStore& params, const GradMap& grads, AdamState& state);

// Scales all gradients down so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(GradMap& grads, double max_norm);

}  // namespace ritw
