#include "percflow/adam.hpp"

#include <cmath>

#include "percflow/errors.hpp"

namespace percflow {

AdamState AdamState::for_net(const Mlp& net, AdamOptions options) {
  AdamState s;
  s.first_moment = GradBundle::zeros_like(net);
  s.second_moment = GradBundle::zeros_like(net);
  s.options = options;
  return s;
}

void adam_step(Mlp& net, const GradBundle& grads, AdamState& state) {
  const int layers = net.num_layers();
  if (static_cast<int>(grads.weights.size()) != layers ||
      static_cast<int>(state.first_moment.weights.size()) != layers) {
    throw ShapeError("gradient / optimizer state layer count mismatch");
  }
  for (int l = 0; l < layers; ++l) {
    if (grads.weights[l].rows() != net.weights[l].rows() ||
        grads.weights[l].cols() != net.weights[l].cols() ||
        grads.biases[l].size() != net.biases[l].size()) {
      throw ShapeError("gradient shape does not match layer " +
                       std::to_string(l));
    }
  }
  if (!grads.all_finite()) {
    throw NonFiniteGradientError("non-finite gradient component; update aborted");
  }

  const AdamOptions& o = state.options;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseProduct(g);
    param.array() -= o.learning_rate * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + o.eps);
  };
  for (int l = 0; l < layers; ++l) {
    update(net.weights[l], grads.weights[l], state.first_moment.weights[l],
           state.second_moment.weights[l]);
    update(net.biases[l], grads.biases[l], state.first_moment.biases[l],
           state.second_moment.biases[l]);
  }
}

}  // namespace percflow
