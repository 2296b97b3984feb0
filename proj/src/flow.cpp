#include "percflow/flow.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "percflow/csv.hpp"
#include "percflow/errors.hpp"

namespace percflow {

void check_time(double s, double dt) {
  if (!(s > 0.0) || !(s < 1.0)) {
    throw ScheduleError("time " + format_double(s) + " is not inside (0, 1)");
  }
  if (!(dt > 0.0)) throw ScheduleError("step size must be positive");
}

double mean_velocity_jacobian(double s, double dt, double sigma2) {
  return -dt * (1.0 + sigma2 * (1.0 - s) / (2.0 * s));
}

Eigen::VectorXd posterior_mean_from_velocity(const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& v, double s,
                                             double dt, double sigma2) {
  check_time(s, dt);
  return x - dt * (v + (sigma2 / (2.0 * s)) * (x + (1.0 - s) * v));
}

Eigen::VectorXd posterior_mean(const VelocityModel& model,
                               const Eigen::VectorXd& x, double s, double dt,
                               double sigma2, int condition) {
  check_time(s, dt);
  return posterior_mean_from_velocity(x, model.velocity(x, s, condition), s, dt,
                                      sigma2);
}

double gaussian_log_constant(int dim, double sigma2_dt) {
  if (!(sigma2_dt > 0.0)) {
    throw ScheduleError("transition variance must be positive");
  }
  return -0.5 * dim * std::log(2.0 * std::numbers::pi * sigma2_dt);
}

double transition_logprob(const Eigen::VectorXd& x_out,
                          const Eigen::VectorXd& mu, double sigma2_dt) {
  if (x_out.size() != mu.size()) {
    throw ShapeError("sample and mean have different lengths");
  }
  const double c = gaussian_log_constant(static_cast<int>(mu.size()), sigma2_dt);
  return -(x_out - mu).squaredNorm() / (2.0 * sigma2_dt) + c;
}

double analytic_step_entropy(int dim, double sigma2_dt) {
  return 0.5 * dim - gaussian_log_constant(dim, sigma2_dt);
}

double joint_entropy(const NoiseSchedule& sch, int dim) {
  double h = 0.5 * dim * (1.0 + std::log(2.0 * std::numbers::pi));
  for (int i = 1; i <= sch.num_steps(); ++i) {
    h += analytic_step_entropy(dim, schedule_sigma2dt(sch, i));
  }
  return h;
}

namespace {

void guard(const Eigen::VectorXd& v, int step, const char* what) {
  if (!v.allFinite() || v.cwiseAbs().maxCoeff() > kDivergenceLimit) {
    throw DivergenceError(std::string(what) + " diverged at step " +
                              std::to_string(step),
                          step);
  }
}

}  // namespace

TransitionStep make_transition(const Eigen::VectorXd& x_t,
                               const Eigen::VectorXd& mu,
                               const Eigen::VectorXd& eps, int i,
                               const NoiseSchedule& sch) {
  TransitionStep st;
  st.step_index = i;
  st.time = sch.time(i);
  st.sigma2_dt = schedule_sigma2dt(sch, i);
  st.state_in = x_t;
  st.mean = mu;
  st.noise = eps;
  st.state_out = mu + std::sqrt(st.sigma2_dt) * eps;
  st.log_prob = transition_logprob(st.state_out, mu, st.sigma2_dt);
  return st;
}

TransitionStep sample_transition(const VelocityModel& model,
                                 const Eigen::VectorXd& x_t, int i,
                                 const NoiseSchedule& sch, int condition,
                                 Rng& rng) {
  const double s = sch.time(i);
  Eigen::VectorXd mu =
      posterior_mean(model, x_t, s, sch.dt(i), sch.sigma2(i), condition);
  guard(mu, i, "transition mean");
  TransitionStep st =
      make_transition(x_t, mu, standard_normal(rng, model.dim), i, sch);
  guard(st.state_out, i, "transition sample");
  return st;
}

std::vector<Trajectory> rollout_batch(const VelocityModel& model,
                                      const NoiseSchedule& sch,
                                      const std::vector<int>& conditions,
                                      std::vector<Rng>& rngs, int last_step) {
  const std::size_t n = conditions.size();
  if (rngs.size() != n) {
    throw ShapeError("need exactly one generator per trajectory");
  }
  const int T = sch.num_steps();
  if (last_step < 1 || last_step > T) {
    throw ScheduleError("last_step outside the schedule");
  }
  for (int c : conditions) model.check_condition(c);

  std::vector<Trajectory> out(n);
  Eigen::MatrixXd states(model.dim, static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    out[k].condition = conditions[k];
    out[k].init = standard_normal(rngs[k], model.dim);
    out[k].steps.reserve(T - last_step + 1);
    states.col(static_cast<Eigen::Index>(k)) = out[k].init;
  }

  std::vector<double> times(n);
  for (int i = T; i >= last_step; --i) {
    const double s = sch.time(i);
    const double dt = sch.dt(i);
    const double sigma2 = sch.sigma2(i);
    std::fill(times.begin(), times.end(), s);
    const Eigen::MatrixXd v = model.velocity(states, times, conditions);
    for (std::size_t k = 0; k < n; ++k) {
      const auto col = static_cast<Eigen::Index>(k);
      Eigen::VectorXd x = states.col(col);
      Eigen::VectorXd mu =
          posterior_mean_from_velocity(x, v.col(col), s, dt, sigma2);
      guard(mu, i, "transition mean");
      TransitionStep st =
          make_transition(x, mu, standard_normal(rngs[k], model.dim), i, sch);
      guard(st.state_out, i, "transition sample");
      states.col(col) = st.state_out;
      out[k].steps.push_back(std::move(st));
    }
  }
  for (auto& traj : out) traj.final_state = traj.steps.back().state_out;
  return out;
}

Trajectory rollout(const VelocityModel& model, const NoiseSchedule& sch,
                   int condition, Rng& rng) {
  model.check_condition(condition);
  Trajectory traj;
  traj.condition = condition;
  traj.init = standard_normal(rng, model.dim);
  Eigen::VectorXd x = traj.init;
  for (int i = sch.num_steps(); i >= 1; --i) {
    traj.steps.push_back(sample_transition(model, x, i, sch, condition, rng));
    x = traj.steps.back().state_out;
  }
  traj.final_state = x;
  return traj;
}

Eigen::VectorXd rollout_zero_noise(const VelocityModel& model,
                                   const NoiseSchedule& sch, int condition,
                                   const Eigen::VectorXd& init) {
  Eigen::VectorXd x = init;
  for (int i = sch.num_steps(); i >= 1; --i) {
    x = posterior_mean(model, x, sch.time(i), sch.dt(i), sch.sigma2(i),
                       condition);
    guard(x, i, "zero-noise rollout");
  }
  return x;
}

MonteCarloEstimate summarize(const std::vector<double>& values) {
  MonteCarloEstimate est;
  est.count = static_cast<long>(values.size());
  if (values.empty()) return est;
  double sum = 0.0;
  for (double v : values) sum += v;
  est.mean = sum / values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - est.mean) * (v - est.mean);
    est.standard_error =
        std::sqrt(ss / (values.size() - 1) / static_cast<double>(values.size()));
  }
  return est;
}

namespace {

// Runs n rollouts (to `last_step`) in fixed-size chunks and hands each chunk
// to `sink`. Per-trajectory streams come from one seed drawn from `rng`.
template <typename Sink>
void chunked_rollouts(const VelocityModel& model, const NoiseSchedule& sch,
                      int condition, int n, int last_step, Rng& rng,
                      Sink&& sink) {
  constexpr int kChunk = 2048;
  const std::uint64_t base = rng();
  for (int start = 0; start < n; start += kChunk) {
    const int m = std::min(kChunk, n - start);
    std::vector<int> conds(m, condition);
    std::vector<Rng> rngs;
    rngs.reserve(m);
    for (int k = 0; k < m; ++k) {
      rngs.push_back(make_stream(base, {static_cast<std::uint64_t>(start + k)}));
    }
    sink(rollout_batch(model, sch, conds, rngs, last_step));
  }
}

}  // namespace

MonteCarloEstimate mc_step_entropy(const VelocityModel& model,
                                   const NoiseSchedule& sch, int condition,
                                   int i, int n_rollouts, Rng& rng) {
  if (i < 1 || i > sch.num_steps()) throw ScheduleError("step index out of range");
  std::vector<double> neg_logp;
  neg_logp.reserve(n_rollouts);
  chunked_rollouts(model, sch, condition, n_rollouts, i, rng,
                   [&](const std::vector<Trajectory>& batch) {
                     for (const auto& t : batch) {
                       neg_logp.push_back(-t.steps.back().log_prob);
                     }
                   });
  return summarize(neg_logp);
}

std::vector<MonteCarloEstimate> mc_step_entropies(const VelocityModel& model,
                                                  const NoiseSchedule& sch,
                                                  int condition, int n_rollouts,
                                                  Rng& rng) {
  const int T = sch.num_steps();
  std::vector<std::vector<double>> per_step(T);
  chunked_rollouts(model, sch, condition, n_rollouts, 1, rng,
                   [&](const std::vector<Trajectory>& batch) {
                     for (const auto& t : batch) {
                       for (const auto& st : t.steps) {
                         per_step[st.step_index - 1].push_back(-st.log_prob);
                       }
                     }
                   });
  std::vector<MonteCarloEstimate> out;
  out.reserve(T);
  for (const auto& v : per_step) out.push_back(summarize(v));
  return out;
}

void write_trajectory_csv_header(std::ostream& out, int dim) {
  out << "run_id,condition,step,s";
  for (const char* prefix : {"x_t", "mu", "x_out"}) {
    for (int j = 0; j < dim; ++j) out << ',' << prefix << j;
  }
  out << ",log_prob\n";
}

void write_trajectory_csv(std::ostream& out, const std::string& run_id,
                          const std::string& condition_name,
                          const Trajectory& traj) {
  for (const auto& st : traj.steps) {
    out << run_id << ',' << condition_name << ',' << st.step_index << ','
        << format_double(st.time);
    for (const Eigen::VectorXd* v : {&st.state_in, &st.mean, &st.state_out}) {
      for (Eigen::Index j = 0; j < v->size(); ++j) {
        out << ',' << format_double((*v)[j]);
      }
    }
    out << ',' << format_double(st.log_prob) << '\n';
  }
}

}  // namespace percflow
