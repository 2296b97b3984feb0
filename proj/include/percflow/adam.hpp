#pragma once

#include <cstdint>

#include "percflow/mlp.hpp"

namespace percflow {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  GradBundle first_moment;
  GradBundle second_moment;
  std::int64_t step_count = 0;
  AdamOptions options;

  static AdamState for_net(const Mlp& net, AdamOptions options = {});
};

// Bias-corrected Adam descent step (minimizes the loss whose gradient is
// `grads`). Aborts with NonFiniteGradientError before touching anything if a
// gradient component is NaN or infinite.
void adam_step(Mlp& net, const GradBundle& grads, AdamState& state);

}  // namespace percflow
