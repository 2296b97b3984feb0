#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "percflow/flow.hpp"
#include "percflow/mlp.hpp"

namespace percflow {

enum class MapKind { kIdentity, kLinear, kFrozenMlp };

std::string to_string(MapKind k);
MapKind map_kind_from_string(const std::string& name);

// Construction recipe for a frozen feature map. Only the fields relevant to
// `kind` are read.
struct MapSpec {
  std::string id = "identity";
  MapKind kind = MapKind::kIdentity;
  // linear: rows of P (d_p x d)
  std::vector<std::vector<double>> matrix;
  // frozen_mlp
  std::vector<int> hidden{32};
  int out_dim = 2;
  std::uint64_t seed = 7;
  double gain = 1.0;        // multiplies the Glorot weights
  double bias_scale = 0.5;  // biases drawn uniformly from +-bias_scale

  bool operator==(const MapSpec&) const = default;
};

// phi: R^d -> R^{d_p}. Never updated after construction.
class PerceptualMap {
 public:
  PerceptualMap() = default;
  static PerceptualMap build(const MapSpec& spec, int in_dim);
  static PerceptualMap identity(int dim);
  static PerceptualMap linear(const std::string& id, const Eigen::MatrixXd& p);

  const std::string& id() const { return spec_.id; }
  MapKind kind() const { return spec_.kind; }
  const MapSpec& spec() const { return spec_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const Mlp& net() const { return net_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  // Columns are samples.
  Eigen::MatrixXd apply_batch(const Eigen::Ref<const Eigen::MatrixXd>& xs) const;
  // Column j of the result is J_phi(xs_j)^T gz_j.
  Eigen::MatrixXd pullback(const Eigen::Ref<const Eigen::MatrixXd>& xs,
                           const Eigen::Ref<const Eigen::MatrixXd>& gz) const;

  // Kind, recipe and every realized parameter, enough to replay a run.
  nlohmann::json to_json() const;

 private:
  void check_input(Eigen::Index rows) const;

  MapSpec spec_;
  int in_dim_ = 0;
  int out_dim_ = 0;
  Eigen::MatrixXd matrix_;
  Mlp net_;
};

// log N(z_out; z_mean, sigma2_dt I) in feature space; the constant uses d_p.
double perceptual_logprob(const Eigen::VectorXd& z_out,
                          const Eigen::VectorXd& z_mean, double sigma2_dt);

struct PerceptualTransition {
  Eigen::VectorXd z_out;
  Eigen::VectorXd z_mean;
  double log_p_perc = 0.0;
  double log_p_gen = 0.0;
  double sigma2_dt = 0.0;
};

// One entry per step of an old-policy trajectory, centered at phi(m) with m
// the stored old mean.
std::vector<PerceptualTransition> perceptual_transitions(
    const Trajectory& traj, const PerceptualMap& map);

// E_{t,k}[-log p_perc] over every step of every trajectory.
MonteCarloEstimate perceptual_entropy_estimate(
    std::span<const Trajectory> trajectories, const PerceptualMap& map);

// Same average restricted to step i.
MonteCarloEstimate perceptual_step_entropy(std::span<const Trajectory> trajectories,
                                           const PerceptualMap& map, int i);

// R - lambda * mean_t log p_perc.
double pec_shaped_reward(double raw, std::span<const double> log_p_perc,
                         double lambda);

// R - lambda * mean_t (log p_perc - log p_gen).
double pcvae_shaped_reward(double raw, std::span<const double> log_p_perc,
                           std::span<const double> log_p_gen, double lambda);

// Trace of Cov(phi(x_{i-1}) | x_i), resampling the step noise n times at each
// of `num_states` states x_i drawn by rolling the model out to step i.
MonteCarloEstimate conditional_feature_variance(const VelocityModel& model,
                                                const NoiseSchedule& sch,
                                                const PerceptualMap& map,
                                                int condition, int i, int n,
                                                int num_states, Rng& rng);

}  // namespace percflow
