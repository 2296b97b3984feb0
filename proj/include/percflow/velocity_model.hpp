#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "percflow/mlp.hpp"

namespace percflow {

struct ModelSpec {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::kTanh;
  int time_frequencies = 4;

  bool operator==(const ModelSpec&) const = default;
};

// v_theta(x, s, c): an Mlp over [x, s, sin/cos(pi 2^k s) for k < F, onehot(c)].
struct VelocityModel {
  Mlp net;
  int dim = 2;
  int num_conditions = 1;
  int time_frequencies = 4;

  static VelocityModel create(int dim, int num_conditions,
                              const ModelSpec& spec, Rng& rng);

  int time_embed_dim() const { return 1 + 2 * time_frequencies; }
  int input_dim() const { return dim + time_embed_dim() + num_conditions; }

  // Writes the network input for (x, s, c) into `out` (length input_dim()).
  void write_features(const Eigen::Ref<const Eigen::VectorXd>& x, double s,
                      int condition, Eigen::Ref<Eigen::VectorXd> out) const;
  Eigen::MatrixXd features(const Eigen::Ref<const Eigen::MatrixXd>& xs,
                           std::span<const double> times,
                           std::span<const int> conditions) const;

  Eigen::VectorXd velocity(const Eigen::VectorXd& x, double s,
                           int condition) const;
  // Batched velocity; columns of `xs` are states. Fills `cache` if non-null
  // so the caller can backpropagate.
  Eigen::MatrixXd velocity(const Eigen::Ref<const Eigen::MatrixXd>& xs,
                           std::span<const double> times,
                           std::span<const int> conditions,
                           MlpCache* cache = nullptr) const;

  void check_condition(int condition) const;
  bool operator==(const VelocityModel& other) const {
    return dim == other.dim && num_conditions == other.num_conditions &&
           time_frequencies == other.time_frequencies && net == other.net;
  }
};

}  // namespace percflow
