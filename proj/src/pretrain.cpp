#include "percflow/pretrain.hpp"

#include <cmath>
#include <random>

#include "percflow/errors.hpp"

namespace percflow {

void PretrainConfig::validate() const {
  if (batch_size <= 0 || num_steps <= 0 || eval_every <= 0) {
    throw ValueError("batch_size, num_steps and eval_every must be positive");
  }
  if (!(learning_rate > 0.0)) throw ValueError("learning_rate must be positive");
  if (!(s_min > 0.0) || !(s_max < 1.0) || !(s_min < s_max)) {
    throw ValueError("training times must satisfy 0 < s_min < s_max < 1");
  }
}

CfmResult cfm_loss_batch(const VelocityModel& model,
                         const Eigen::Ref<const Eigen::MatrixXd>& x0,
                         std::span<const int> conditions,
                         std::span<const double> times,
                         const Eigen::Ref<const Eigen::MatrixXd>& eps) {
  const auto n = x0.cols();
  if (n == 0 || eps.cols() != n || x0.rows() != model.dim ||
      eps.rows() != model.dim) {
    throw ShapeError("cfm batch shapes do not match");
  }
  Eigen::MatrixXd xs(model.dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    xs.col(j) = (1.0 - times[j]) * x0.col(j) + times[j] * eps.col(j);
  }
  MlpCache cache;
  const Eigen::MatrixXd v = model.velocity(xs, times, conditions, &cache);
  const Eigen::MatrixXd residual = v - (eps - x0);
  CfmResult r;
  r.loss = residual.squaredNorm() / static_cast<double>(n);
  if (!std::isfinite(r.loss)) {
    throw DivergenceError("non-finite flow-matching loss", -1);
  }
  r.grads = mlp_backward(model.net, cache,
                         (2.0 / static_cast<double>(n)) * residual);
  return r;
}

CfmResult cfm_loss(const VelocityModel& model, const Eigen::VectorXd& x0,
                   int condition, double s, const Eigen::VectorXd& eps) {
  const int c[1] = {condition};
  const double t[1] = {s};
  return cfm_loss_batch(model, x0, c, t, eps);
}

PretrainResult pretrain_loop(VelocityModel& model, const GmmDataset& ds,
                             const PretrainConfig& cfg,
                             const std::function<void(const LossPoint&)>& on_log) {
  cfg.validate();
  ds.validate();
  if (ds.dim != model.dim || ds.num_conditions() != model.num_conditions) {
    throw ShapeError("model does not match the dataset");
  }
  AdamOptions opts;
  opts.learning_rate = cfg.learning_rate;
  AdamState adam = AdamState::for_net(model.net, opts);
  Rng rng = make_stream(cfg.seed, {0x9e7a});
  std::uniform_int_distribution<int> pick_cond(0, ds.num_conditions() - 1);
  std::uniform_real_distribution<double> pick_time(cfg.s_min, cfg.s_max);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int B = cfg.batch_size;
  PretrainResult result;
  std::vector<int> conds(B);
  std::vector<double> times(B);
  Eigen::MatrixXd x0(ds.dim, B);
  Eigen::MatrixXd eps(ds.dim, B);
  double window = 0.0;
  int window_count = 0;
  for (int step = 1; step <= cfg.num_steps; ++step) {
    for (int k = 0; k < B; ++k) {
      conds[k] = pick_cond(rng);
      x0.col(k) = sample_dataset(ds, conds[k], 1, rng);
      times[k] = pick_time(rng);
      for (int j = 0; j < ds.dim; ++j) eps(j, k) = normal(rng);
    }
    CfmResult r = cfm_loss_batch(model, x0, conds, times, eps);
    try {
      adam_step(model.net, r.grads, adam);
    } catch (const NonFiniteGradientError& e) {
      throw DivergenceError(e.what(), -1);
    }
    result.completed_steps = step;
    window += r.loss;
    ++window_count;
    if (step % cfg.eval_every == 0 || step == cfg.num_steps) {
      LossPoint p{step, window / window_count};
      result.loss_curve.push_back(p);
      if (on_log) on_log(p);
      window = 0.0;
      window_count = 0;
    }
  }
  return result;
}

}  // namespace percflow
