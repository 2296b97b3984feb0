#include "percflow/checks.hpp"

#include <cmath>

#include "percflow/analysis.hpp"
#include "percflow/csv.hpp"
#include "percflow/errors.hpp"
#include "percflow/flow.hpp"

namespace percflow {

namespace {

constexpr double kZLimit = 3.0;
constexpr double kFdTolerance = 1e-4;

VelocityModel toy_model(std::uint64_t seed) {
  Rng rng = make_stream(seed, {0xc4ec});
  return VelocityModel::create(2, 1, ModelSpec{}, rng);
}

double rel_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  const double scale = std::max(want.norm(), 1e-12);
  return (got - want).norm() / scale;
}

CheckItem fd_item(const std::string& name, const Eigen::VectorXd& analytic,
                  const Eigen::VectorXd& numeric) {
  CheckItem it;
  it.name = name;
  it.measured = rel_error(analytic, numeric);
  it.tolerance = kFdTolerance;
  it.passed = it.measured < kFdTolerance;
  it.detail = {{"components", analytic.size()}};
  return it;
}

// Central differences of f over the entries of x.
template <typename F>
Eigen::VectorXd central_diff(Eigen::VectorXd x, F&& f, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::VectorXd random_vector(Rng& rng, Eigen::Index n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

}  // namespace

bool CheckReport::passed() const {
  for (const auto& it : items) {
    if (!it.passed) return false;
  }
  return !items.empty();
}

nlohmann::json CheckReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& it : items) {
    arr.push_back({{"name", it.name},
                   {"passed", it.passed},
                   {"measured", it.measured},
                   {"expected", it.expected},
                   {"tolerance", it.tolerance},
                   {"detail", it.detail}});
  }
  return {{"check", which}, {"passed", passed()}, {"items", arr}};
}

std::vector<std::string> check_names() {
  return {"entropy", "corollary1", "remark1", "variance-lemma", "gradients"};
}

CheckReport check_step_entropy(const VelocityModel& model,
                               const NoiseSchedule& sch, int condition,
                               int n_rollouts, std::uint64_t seed) {
  CheckReport rep;
  rep.which = "entropy";
  Rng rng = make_stream(seed, {0xe17});
  const auto est = mc_step_entropies(model, sch, condition, n_rollouts, rng);
  for (int i = 1; i <= sch.num_steps(); ++i) {
    const auto& e = est[i - 1];
    CheckItem it;
    it.name = "step " + std::to_string(i);
    it.expected = analytic_step_entropy(model.dim, schedule_sigma2dt(sch, i));
    it.measured = e.mean;
    it.tolerance = kZLimit * e.standard_error;
    it.passed = std::abs(e.mean - it.expected) <= it.tolerance;
    it.detail = {{"standard_error", e.standard_error}, {"n", e.count}};
    rep.items.push_back(it);
  }
  return rep;
}

CheckReport check_corollary1(long n_samples, std::uint64_t seed) {
  CheckReport rep;
  rep.which = "corollary1";
  const Corollary1Config cases[] = {{0.5, 1.0, 0.0}, {0.0, 1.0, 0.0}, {0.25, 2.0, 1.0}};
  std::uint64_t idx = 0;
  for (const auto& c : cases) {
    Rng rng = make_stream(seed, {0xc01, idx++});
    const auto r = corollary1_gradient_check(c, n_samples, rng);
    const double grad = r.kl_identity_grad.norm();
    // rel_err <= 5 SE / |grad|; with grad = 0 the bound is 5 SE absolute.
    const double bound = grad > 0.0 ? 5.0 * r.standard_error / grad : 5.0 * r.standard_error;
    CheckItem it;
    it.name = "gamma=" + format_double(c.gamma) + " sigma=" + format_double(c.sigma) +
              " mu_old=" + format_double(c.mu_old);
    it.measured = r.rel_err;
    it.expected = 0.0;
    it.tolerance = bound;
    it.passed = r.cosine >= 0.99 && r.rel_err <= bound;
    it.detail = {{"reinforce_grad", r.reinforce_grad[0]},
                 {"kl_identity_grad", r.kl_identity_grad[0]},
                 {"standard_error", r.standard_error},
                 {"cosine", r.cosine},
                 {"n_samples", r.n_samples}};
    rep.items.push_back(it);
  }
  return rep;
}

CheckReport check_remark1(const VelocityModel& model, const NoiseSchedule& sch,
                          const PerceptualMap& linear_map, int condition,
                          int n_rollouts, std::uint64_t seed) {
  if (linear_map.kind() != MapKind::kLinear) {
    throw ValueError("remark1 needs a linear perceptual map");
  }
  CheckReport rep;
  rep.which = "remark1";
  std::vector<int> conds(n_rollouts, condition);
  std::vector<Rng> rngs;
  rngs.reserve(n_rollouts);
  for (int k = 0; k < n_rollouts; ++k) {
    rngs.push_back(make_stream(seed, {0x4e1, static_cast<std::uint64_t>(k)}));
  }
  const auto trajs = rollout_batch(model, sch, conds, rngs);
  const Eigen::MatrixXd& p = linear_map.matrix();
  const double tr = (p * p.transpose()).trace();
  for (int i = 1; i <= sch.num_steps(); ++i) {
    const double s2dt = schedule_sigma2dt(sch, i);
    const auto h = perceptual_step_entropy(trajs, linear_map, i);
    const double c = gaussian_log_constant(linear_map.out_dim(), s2dt);
    CheckItem it;
    it.name = "step " + std::to_string(i);
    it.measured = (h.mean + c) * 2.0 * s2dt;
    it.expected = tr * s2dt;
    it.tolerance = 0.10;
    it.passed = std::abs(it.measured - it.expected) <= it.tolerance * std::abs(it.expected);
    it.detail = {{"h_perc", h.mean}, {"c_perc", c}, {"sigma2_dt", s2dt}};
    rep.items.push_back(it);
  }
  return rep;
}

CheckReport check_variance_lemma(const VelocityModel& model,
                                 const NoiseSchedule& sch, int condition,
                                 int n, std::uint64_t seed) {
  CheckReport rep;
  rep.which = "variance-lemma";
  for (int i = 1; i <= sch.num_steps(); ++i) {
    Rng rng = make_stream(seed, {0x7a1, static_cast<std::uint64_t>(i)});
    const auto r = variance_lemma_check(model, sch, condition, i, n, rng);
    for (const auto& [label, est] :
         {std::pair{"logprob", r.from_logprob}, std::pair{"variance", r.from_variance}}) {
      CheckItem it;
      it.name = "step " + std::to_string(i) + " " + label;
      it.measured = est.mean;
      it.expected = r.analytic;
      it.tolerance = kZLimit * est.standard_error;
      it.passed = std::abs(est.mean - r.analytic) <= it.tolerance;
      it.detail = {{"standard_error", est.standard_error}, {"n", est.count}};
      rep.items.push_back(it);
    }
  }
  return rep;
}

CheckReport check_gradients(std::uint64_t seed) {
  CheckReport rep;
  rep.which = "gradients";
  Rng rng = make_stream(seed, {0x9ad});

  for (Activation act : {Activation::kTanh, Activation::kRelu}) {
    Mlp net = Mlp::glorot({3, 5, 4, 2}, act, rng);
    for (auto& b : net.biases) b = random_vector(rng, b.size(), 0.3);
    Eigen::MatrixXd x(3, 4);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x.col(j) = random_vector(rng, 3, 1.5);
    Eigen::MatrixXd w(2, 4);
    for (Eigen::Index j = 0; j < w.cols(); ++j) w.col(j) = random_vector(rng, 2, 1.0);

    // L = sum(W .* net(X))
    const GradBundle g = mlp_backward(net, mlp_forward(net, x), w);
    const auto loss_params = [&](const Eigen::VectorXd& flat) {
      Mlp m = net;
      assign_parameters(m, flat);
      return (mlp_forward(m, x).output().array() * w.array()).sum();
    };
    const auto loss_input = [&](const Eigen::VectorXd& flat) {
      const Eigen::MatrixXd xi = Eigen::Map<const Eigen::MatrixXd>(flat.data(), 3, 4);
      return (mlp_forward(net, xi).output().array() * w.array()).sum();
    };
    const Eigen::VectorXd xflat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    const Eigen::VectorXd gin = Eigen::Map<const Eigen::VectorXd>(g.input.data(), g.input.size());
    rep.items.push_back(fd_item("mlp_backward params " + to_string(act),
                                flatten_gradients(g),
                                central_diff(flatten_parameters(net), loss_params)));
    rep.items.push_back(fd_item("mlp_backward input " + to_string(act), gin,
                                central_diff(xflat, loss_input)));
  }

  // L = w . mu(x; theta) through the velocity model.
  VelocityModel model = toy_model(seed);
  for (auto& b : model.net.biases) b = random_vector(rng, b.size(), 0.3);
  const ScheduleSpec spec;
  const NoiseSchedule sch(spec);
  const Eigen::VectorXd x = random_vector(rng, 2, 2.0);
  const Eigen::VectorXd w = random_vector(rng, 2, 1.0);
  for (int i : {1, sch.num_steps() / 2, sch.num_steps()}) {
    const double s = sch.time(i), dt = sch.dt(i), s2 = sch.sigma2(i);
    const double jac = mean_velocity_jacobian(s, dt, s2);
    const std::vector<double> times{s};
    const std::vector<int> conds{0};
    MlpCache cache;
    model.velocity(x, times, conds, &cache);
    const GradBundle g = mlp_backward(model.net, cache, jac * w);
    const auto loss_params = [&](const Eigen::VectorXd& flat) {
      VelocityModel m = model;
      assign_parameters(m.net, flat);
      return w.dot(posterior_mean(m, x, s, dt, s2, 0));
    };
    const auto loss_state = [&](const Eigen::VectorXd& xi) {
      return w.dot(posterior_mean(model, xi, s, dt, s2, 0));
    };
    // d mu / dx = (1 - dt s2 / (2 s)) I + jac dv/dx
    const Eigen::VectorXd gx =
        (1.0 - dt * s2 / (2.0 * s)) * w + g.input.col(0).head(model.dim);
    const std::string tag = " step " + std::to_string(i);
    rep.items.push_back(fd_item("posterior_mean params" + tag, flatten_gradients(g),
                                central_diff(flatten_parameters(model.net), loss_params)));
    rep.items.push_back(fd_item("posterior_mean state" + tag, gx, central_diff(x, loss_state)));
  }
  return rep;
}

CheckReport run_check(const std::string& which, std::uint64_t seed) {
  const ScheduleSpec spec;
  const NoiseSchedule sch(spec);
  if (which == "entropy") {
    return check_step_entropy(toy_model(seed), sch, 0, 10000, seed);
  }
  if (which == "corollary1") return check_corollary1(100000, seed);
  if (which == "remark1") {
    Eigen::MatrixXd p(2, 2);
    p << 1.0, 0.5, -0.3, 2.0;
    return check_remark1(toy_model(seed), sch, PerceptualMap::linear("remark1", p), 0,
                         10000, seed);
  }
  if (which == "variance-lemma") {
    return check_variance_lemma(toy_model(seed), sch, 0, 10000, seed);
  }
  if (which == "gradients") return check_gradients(seed);
  std::string valid;
  for (const auto& n : check_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ValueError("unknown check '" + which + "' (valid: " + valid + ")");
}

}  // namespace percflow
