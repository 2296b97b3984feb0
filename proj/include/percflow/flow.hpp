#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percflow/rng.hpp"
#include "percflow/schedule.hpp"
#include "percflow/velocity_model.hpp"

namespace percflow {

// Components larger than this in magnitude abort a rollout.
inline constexpr double kDivergenceLimit = 1e6;

// mu = x - dt * [v + sigma2 / (2 s) * (x + (1 - s) v)] with v = v_theta(x, s, c).
// Sampling runs down the descending grid, so dt > 0 and the drift sign is
// negative.
Eigen::VectorXd posterior_mean(const VelocityModel& model,
                               const Eigen::VectorXd& x, double s, double dt,
                               double sigma2, int condition);

// Same formula for a precomputed velocity.
Eigen::VectorXd posterior_mean_from_velocity(const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& v, double s,
                                             double dt, double sigma2);

// d mu / d v, a scalar multiple of the identity.
double mean_velocity_jacobian(double s, double dt, double sigma2);

// Throws ScheduleError when s is not a valid interior time.
void check_time(double s, double dt);

// log N(x_out; mu, sigma2_dt I).
double transition_logprob(const Eigen::VectorXd& x_out, const Eigen::VectorXd& mu,
                          double sigma2_dt);

// C_t = -(d / 2) log(2 pi sigma2_dt).
double gaussian_log_constant(int dim, double sigma2_dt);

// d / 2 - C_t: the per-step entropy, independent of the model.
double analytic_step_entropy(int dim, double sigma2_dt);

// Entropy of the prior plus every per-step entropy of the schedule.
double joint_entropy(const NoiseSchedule& sch, int dim);

struct TransitionStep {
  int step_index = 0;
  double time = 0.0;
  Eigen::VectorXd state_in;
  Eigen::VectorXd mean;
  Eigen::VectorXd state_out;
  Eigen::VectorXd noise;
  double log_prob = 0.0;
  double sigma2_dt = 0.0;
};

// steps are in sampling order: steps[0] is step T, steps.back() is step 1.
struct Trajectory {
  int condition = 0;
  Eigen::VectorXd init;
  std::vector<TransitionStep> steps;
  Eigen::VectorXd final_state;
};

// Builds a transition from an already computed mean and noise draw.
TransitionStep make_transition(const Eigen::VectorXd& x_t,
                               const Eigen::VectorXd& mu,
                               const Eigen::VectorXd& eps, int i,
                               const NoiseSchedule& sch);

TransitionStep sample_transition(const VelocityModel& model,
                                 const Eigen::VectorXd& x_t, int i,
                                 const NoiseSchedule& sch, int condition,
                                 Rng& rng);

Trajectory rollout(const VelocityModel& model, const NoiseSchedule& sch,
                   int condition, Rng& rng);

// Runs one trajectory per generator in `rngs`, evaluating the network on the
// whole batch at once. Trajectory k consumes only rngs[k]. `last_step` stops
// the rollout after step `last_step` (1 runs the full schedule).
std::vector<Trajectory> rollout_batch(const VelocityModel& model,
                                      const NoiseSchedule& sch,
                                      const std::vector<int>& conditions,
                                      std::vector<Rng>& rngs,
                                      int last_step = 1);

// Deterministic zero-noise rollout (probability-flow diagnostic).
Eigen::VectorXd rollout_zero_noise(const VelocityModel& model,
                                   const NoiseSchedule& sch, int condition,
                                   const Eigen::VectorXd& init);

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  long count = 0;
};

MonteCarloEstimate summarize(const std::vector<double>& values);

// -E[log p(x_{i-1} | x_i)] from n fresh rollouts to step i.
MonteCarloEstimate mc_step_entropy(const VelocityModel& model,
                                   const NoiseSchedule& sch, int condition,
                                   int i, int n_rollouts, Rng& rng);

// Same estimate for every step from n full rollouts. Index i - 1 holds step i.
std::vector<MonteCarloEstimate> mc_step_entropies(const VelocityModel& model,
                                                  const NoiseSchedule& sch,
                                                  int condition, int n_rollouts,
                                                  Rng& rng);

// One CSV row per step: run_id, condition, step, s, x_t..., mu..., x_out..., log_prob.
void write_trajectory_csv_header(std::ostream& out, int dim);
void write_trajectory_csv(std::ostream& out, const std::string& run_id,
                          const std::string& condition_name,
                          const Trajectory& traj);

}  // namespace percflow
