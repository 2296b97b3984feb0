#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "percflow/adam.hpp"
#include "percflow/dataset.hpp"
#include "percflow/velocity_model.hpp"

namespace percflow {

struct PretrainConfig {
  int batch_size = 128;
  int num_steps = 20000;
  int eval_every = 100;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  // Training times are drawn uniformly from (s_min, s_max).
  double s_min = 1e-3;
  double s_max = 1.0 - 1e-3;

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

struct CfmResult {
  double loss = 0.0;
  GradBundle grads;
};

// Rectified-flow regression at one point: x_s = (1 - s) x0 + s eps,
// loss = |v_theta(x_s, s, c) - (eps - x0)|^2.
CfmResult cfm_loss(const VelocityModel& model, const Eigen::VectorXd& x0,
                   int condition, double s, const Eigen::VectorXd& eps);

// Batch mean of cfm_loss (columns of x0 / eps are samples).
CfmResult cfm_loss_batch(const VelocityModel& model,
                         const Eigen::Ref<const Eigen::MatrixXd>& x0,
                         std::span<const int> conditions,
                         std::span<const double> times,
                         const Eigen::Ref<const Eigen::MatrixXd>& eps);

struct LossPoint {
  int step = 0;
  double loss = 0.0;  // mean batch loss over the preceding window
};

struct PretrainResult {
  std::vector<LossPoint> loss_curve;
  int completed_steps = 0;
};

// Trains `model` in place. Conditions are drawn uniformly per sample. On a
// non-finite loss or gradient the loop throws DivergenceError and `model`
// keeps the parameters of the last successful step.
PretrainResult pretrain_loop(
    VelocityModel& model, const GmmDataset& ds, const PretrainConfig& cfg,
    const std::function<void(const LossPoint&)>& on_log = {});

}  // namespace percflow
