#include "percflow/perceptual.hpp"

#include <cmath>
#include <random>

#include "percflow/errors.hpp"

namespace percflow {

std::string to_string(MapKind k) {
  switch (k) {
    case MapKind::kIdentity: return "identity";
    case MapKind::kLinear: return "linear";
    case MapKind::kFrozenMlp: return "frozen_mlp";
  }
  return "?";
}

MapKind map_kind_from_string(const std::string& name) {
  if (name == "identity") return MapKind::kIdentity;
  if (name == "linear") return MapKind::kLinear;
  if (name == "frozen_mlp") return MapKind::kFrozenMlp;
  throw ValueError("unknown perceptual map kind '" + name +
                   "' (expected identity, linear, or frozen_mlp)");
}

PerceptualMap PerceptualMap::build(const MapSpec& spec, int in_dim) {
  if (in_dim <= 0) throw ShapeError("map input dimension must be positive");
  PerceptualMap m;
  m.spec_ = spec;
  m.in_dim_ = in_dim;
  switch (spec.kind) {
    case MapKind::kIdentity:
      m.out_dim_ = in_dim;
      break;
    case MapKind::kLinear: {
      if (spec.matrix.empty()) {
        throw ValueError("linear map needs a matrix");
      }
      m.out_dim_ = static_cast<int>(spec.matrix.size());
      m.matrix_.resize(m.out_dim_, in_dim);
      for (int r = 0; r < m.out_dim_; ++r) {
        if (static_cast<int>(spec.matrix[r].size()) != in_dim) {
          throw ShapeError("linear map row " + std::to_string(r) + " has " +
                           std::to_string(spec.matrix[r].size()) +
                           " entries, expected " + std::to_string(in_dim));
        }
        for (int c = 0; c < in_dim; ++c) m.matrix_(r, c) = spec.matrix[r][c];
      }
      break;
    }
    case MapKind::kFrozenMlp: {
      if (spec.out_dim <= 0) throw ValueError("map out_dim must be positive");
      std::vector<int> sizes{in_dim};
      for (int h : spec.hidden) {
        if (h <= 0) throw ValueError("map hidden sizes must be positive");
        sizes.push_back(h);
      }
      sizes.push_back(spec.out_dim);
      Rng rng = make_stream(spec.seed, {0x7e3a});
      m.net_ = Mlp::glorot(sizes, Activation::kTanh, rng);
      std::uniform_real_distribution<double> bias(-spec.bias_scale,
                                                  spec.bias_scale);
      for (int l = 0; l < m.net_.num_layers(); ++l) {
        m.net_.weights[l] *= spec.gain;
        if (spec.bias_scale > 0.0) {
          for (Eigen::Index r = 0; r < m.net_.biases[l].size(); ++r) {
            m.net_.biases[l][r] = bias(rng);
          }
        }
      }
      m.out_dim_ = spec.out_dim;
      break;
    }
  }
  return m;
}

PerceptualMap PerceptualMap::identity(int dim) {
  return build(MapSpec{}, dim);
}

PerceptualMap PerceptualMap::linear(const std::string& id,
                                    const Eigen::MatrixXd& p) {
  MapSpec spec;
  spec.id = id;
  spec.kind = MapKind::kLinear;
  spec.matrix.assign(p.rows(), std::vector<double>(p.cols()));
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c) spec.matrix[r][c] = p(r, c);
  return build(spec, static_cast<int>(p.cols()));
}

void PerceptualMap::check_input(Eigen::Index rows) const {
  if (rows != in_dim_) {
    throw ShapeError("map '" + spec_.id + "' expects inputs of length " +
                     std::to_string(in_dim_) + ", got " + std::to_string(rows));
  }
}

Eigen::VectorXd PerceptualMap::apply(const Eigen::VectorXd& x) const {
  return apply_batch(x);
}

Eigen::MatrixXd PerceptualMap::apply_batch(
    const Eigen::Ref<const Eigen::MatrixXd>& xs) const {
  check_input(xs.rows());
  switch (spec_.kind) {
    case MapKind::kIdentity: return xs;
    case MapKind::kLinear: return matrix_ * xs;
    case MapKind::kFrozenMlp: return mlp_forward(net_, xs).output();
  }
  return xs;
}

Eigen::MatrixXd PerceptualMap::pullback(
    const Eigen::Ref<const Eigen::MatrixXd>& xs,
    const Eigen::Ref<const Eigen::MatrixXd>& gz) const {
  check_input(xs.rows());
  if (gz.rows() != out_dim_ || gz.cols() != xs.cols()) {
    throw ShapeError("feature gradient has the wrong shape");
  }
  switch (spec_.kind) {
    case MapKind::kIdentity: return gz;
    case MapKind::kLinear: return matrix_.transpose() * gz;
    case MapKind::kFrozenMlp: return mlp_backward(net_, mlp_forward(net_, xs), gz).input;
  }
  return gz;
}


nlohmann::json PerceptualMap::to_json() const {
  nlohmann::json j;
  j["id"] = spec_.id;
  j["kind"] = to_string(spec_.kind);
  j["in_dim"] = in_dim_;
  j["out_dim"] = out_dim_;
  if (spec_.kind == MapKind::kLinear) j["matrix"] = spec_.matrix;
  if (spec_.kind == MapKind::kFrozenMlp) {
    j["hidden"] = spec_.hidden;
    j["seed"] = spec_.seed;
    j["gain"] = spec_.gain;
    j["bias_scale"] = spec_.bias_scale;
    nlohmann::json layers = nlohmann::json::array();
    for (int l = 0; l < net_.num_layers(); ++l) {
      const auto& w = net_.weights[l];
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        rows.push_back(std::vector<double>(w.row(r).begin(), w.row(r).end()));
      }
      layers.push_back({{"weights", rows},
                        {"biases", std::vector<double>(net_.biases[l].begin(),
                                                       net_.biases[l].end())}});
    }
    j["layers"] = layers;
  }
  return j;
}

double perceptual_logprob(const Eigen::VectorXd& z_out,
                          const Eigen::VectorXd& z_mean, double sigma2_dt) {
  // Same Gaussian as the policy transition, just in feature space.
  return transition_logprob(z_out, z_mean, sigma2_dt);
}

std::vector<PerceptualTransition> perceptual_transitions(
    const Trajectory& traj, const PerceptualMap& map) {
  const auto T = static_cast<Eigen::Index>(traj.steps.size());
  if (T == 0) throw ValueError("trajectory has no steps");
  Eigen::MatrixXd outs(map.in_dim(), T);
  Eigen::MatrixXd means(map.in_dim(), T);
  for (Eigen::Index k = 0; k < T; ++k) {
    const auto& st = traj.steps[k];
    if (st.mean.size() == 0) {
      throw ValueError("trajectory is missing its stored old-policy means");
    }
    outs.col(k) = st.state_out;
    means.col(k) = st.mean;
  }
  const Eigen::MatrixXd z_out = map.apply_batch(outs);
  const Eigen::MatrixXd z_mean = map.apply_batch(means);
  std::vector<PerceptualTransition> res(T);
  for (Eigen::Index k = 0; k < T; ++k) {
    auto& p = res[k];
    p.z_out = z_out.col(k);
    p.z_mean = z_mean.col(k);
    p.sigma2_dt = traj.steps[k].sigma2_dt;
    p.log_p_perc = perceptual_logprob(p.z_out, p.z_mean, p.sigma2_dt);
    p.log_p_gen = traj.steps[k].log_prob;
  }
  return res;
}

MonteCarloEstimate perceptual_entropy_estimate(
    std::span<const Trajectory> trajectories, const PerceptualMap& map) {
  if (trajectories.empty()) throw ValueError("no trajectories to average");
  std::vector<double> vals;
  for (const auto& t : trajectories) {
    for (const auto& p : perceptual_transitions(t, map)) {
      vals.push_back(-p.log_p_perc);
    }
  }
  return summarize(vals);
}

MonteCarloEstimate perceptual_step_entropy(
    std::span<const Trajectory> trajectories, const PerceptualMap& map, int i) {
  std::vector<double> vals;
  for (const auto& t : trajectories) {
    for (const auto& st : t.steps) {
      if (st.step_index != i) continue;
      vals.push_back(-perceptual_logprob(map.apply(st.state_out),
                                         map.apply(st.mean), st.sigma2_dt));
    }
  }
  if (vals.empty()) {
    throw ValueError("no transitions at step " + std::to_string(i));
  }
  return summarize(vals);
}

double pec_shaped_reward(double raw, std::span<const double> log_p_perc,
                         double lambda) {
  if (log_p_perc.empty()) throw ValueError("empty step list");
  if (!(lambda >= 0.0)) throw ValueError("lambda must be non-negative");
  double sum = 0.0;
  for (double v : log_p_perc) sum += v;
  return raw - lambda * (sum / static_cast<double>(log_p_perc.size()));
}

double pcvae_shaped_reward(double raw, std::span<const double> log_p_perc,
                           std::span<const double> log_p_gen, double lambda) {
  if (log_p_perc.size() != log_p_gen.size()) {
    throw ShapeError("perceptual and generation log-prob lists differ in length");
  }
  if (log_p_perc.empty()) throw ValueError("empty step list");
  if (!(lambda >= 0.0)) throw ValueError("lambda must be non-negative");
  double sum = 0.0;
  for (std::size_t k = 0; k < log_p_perc.size(); ++k) {
    sum += log_p_perc[k] - log_p_gen[k];
  }
  return raw - lambda * (sum / static_cast<double>(log_p_perc.size()));
}

MonteCarloEstimate conditional_feature_variance(const VelocityModel& model,
                                                const NoiseSchedule& sch,
                                                const PerceptualMap& map,
                                                int condition, int i, int n,
                                                int num_states, Rng& rng) {
  if (n < 2 || num_states < 1) {
    throw ValueError("need n >= 2 resamples and at least one state");
  }
  const double s2dt = schedule_sigma2dt(sch, i);
  std::vector<int> conds(num_states, condition);
  std::vector<Rng> rngs;
  const std::uint64_t base = rng();
  for (int k = 0; k < num_states; ++k) {
    rngs.push_back(make_stream(base, {static_cast<std::uint64_t>(k)}));
  }
  const auto trajs = rollout_batch(model, sch, conds, rngs, i);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> traces;
  for (const auto& t : trajs) {
    const Eigen::VectorXd& mu = t.steps.back().mean;
    Eigen::MatrixXd xs(model.dim, n);
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < model.dim; ++j) {
        xs(j, r) = mu[j] + std::sqrt(s2dt) * normal(rng);
      }
    }
    const Eigen::MatrixXd z = map.apply_batch(xs);
    const Eigen::VectorXd zbar = z.rowwise().mean();
    traces.push_back((z.colwise() - zbar).squaredNorm() / (n - 1));
  }
  return summarize(traces);
}

}  // namespace percflow
