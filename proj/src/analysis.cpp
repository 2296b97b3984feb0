#include "percflow/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "percflow/errors.hpp"
#include "percflow/linalg.hpp"

namespace percflow {

double feature_variance(const Eigen::Ref<const Eigen::MatrixXd>& samples) {
  const auto n = samples.cols();
  if (n < 2) throw ValueError("feature variance needs at least two samples");
  const Eigen::VectorXd mean = samples.rowwise().mean();
  return (samples.colwise() - mean).squaredNorm() / static_cast<double>(n - 1);
}

namespace {

Eigen::MatrixXd unit_columns(const Eigen::Ref<const Eigen::MatrixXd>& f) {
  if (f.cols() < 1) throw ValueError("vendi score needs at least one sample");
  Eigen::MatrixXd u = f;
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    const double norm = u.col(k).norm();
    if (!(norm > 0.0)) {
      throw ValueError("feature vector " + std::to_string(k) + " has zero norm");
    }
    u.col(k) /= norm;
  }
  return u;
}

}  // namespace

Eigen::VectorXd vendi_spectrum(const Eigen::Ref<const Eigen::MatrixXd>& features,
                               bool use_dual) {
  const Eigen::MatrixXd u = unit_columns(features);
  const double n = static_cast<double>(u.cols());
  Eigen::MatrixXd k = use_dual ? Eigen::MatrixXd(u * u.transpose() / n)
                               : Eigen::MatrixXd(u.transpose() * u / n);
  // Round-off can leave the products a hair off symmetric.
  k = 0.5 * (k + k.transpose()).eval();
  return sym_eigvals(k);
}

double vendi_score(const Eigen::Ref<const Eigen::MatrixXd>& features) {
  if (features.cols() == 1) return 1.0;
  const Eigen::VectorXd lambda =
      vendi_spectrum(features, features.rows() < features.cols());
  double h = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda[i] > 0.0) h -= lambda[i] * std::log(lambda[i]);
  }
  return std::exp(h);
}

std::vector<double> mode_shares(const Eigen::Ref<const Eigen::MatrixXd>& samples,
                                const GmmDataset& ds, int condition,
                                double radius_multiplier) {
  const auto& cond = ds.condition(condition);
  if (samples.rows() != ds.dim) throw ShapeError("samples do not match dataset dim");
  std::vector<double> shares;
  const double n = static_cast<double>(std::max<Eigen::Index>(samples.cols(), 1));
  for (int m : cond.modes) {
    const Eigen::VectorXd mean = ds.mode_mean(m);
    const double r = radius_multiplier * ds.modes[m].std;
    long hits = 0;
    for (Eigen::Index k = 0; k < samples.cols(); ++k) {
      if ((samples.col(k) - mean).norm() <= r) ++hits;
    }
    shares.push_back(static_cast<double>(hits) / n);
  }
  return shares;
}

double mode_coverage(const Eigen::Ref<const Eigen::MatrixXd>& samples,
                     const GmmDataset& ds, int condition,
                     const CoverageOptions& opts) {
  const auto shares = mode_shares(samples, ds, condition, opts.radius_multiplier);
  if (samples.cols() == 0) return 0.0;
  int covered = 0;
  for (double s : shares) covered += s >= opts.share_threshold ? 1 : 0;
  return static_cast<double>(covered) / static_cast<double>(shares.size());
}

FitResult entropy_reward_fit(std::span<const double> h_perc,
                             std::span<const double> reward) {
  if (h_perc.size() != reward.size()) {
    throw ShapeError("entropy and reward series differ in length");
  }
  const std::size_t n = h_perc.size();
  if (n < 3) throw ValueError("entropy-reward fit needs at least three points");
  std::vector<double> x(n);
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    x[k] = std::exp(h_perc[k]);
    mx += x[k];
    my += reward[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (reward[k] - my);
    syy += (reward[k] - my) * (reward[k] - my);
  }
  if (!(sxx > 1e-300) || !(sxx > 1e-24 * mx * mx * n)) {
    throw ValueError("degenerate regressor: all entropy values are equal");
  }
  FitResult fit;
  fit.n_points = static_cast<int>(n);
  const double slope = sxy / sxx;
  fit.a = -slope;
  fit.b = my - slope * mx;
  if (fit.a == 0.0) fit.a = 0.0;  // drop a negative zero
  fit.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 0.0;
  return fit;
}

Eigen::VectorXd advantage_probabilities(const Eigen::VectorXd& advantages) {
  if (advantages.size() < 2) throw GroupSizeError("group needs at least two members");
  const double top = advantages.maxCoeff();
  Eigen::VectorXd p = (advantages.array() - top).exp().matrix();
  return p / p.sum();
}

AdvantageExtremes advantage_prob_extremes(const Eigen::VectorXd& advantages) {
  const Eigen::VectorXd p = advantage_probabilities(advantages);
  return {p.maxCoeff(), p.minCoeff()};
}

GradientCheckReport corollary1_gradient_check(const Corollary1Config& cfg,
                                              long n_samples, Rng& rng) {
  if (n_samples < 2) throw ValueError("need at least two samples");
  if (!(cfg.sigma > 0.0)) throw ValueError("sigma must be positive");
  const double s2 = cfg.sigma * cfg.sigma;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> terms(n_samples);
  for (long k = 0; k < n_samples; ++k) {
    const double x = cfg.mu_old + cfg.sigma * normal(rng);
    // A(x) * d/dmu log N(x; mu, sigma^2) at mu = mu_old
    terms[k] = cfg.gamma * x * (x - cfg.mu_old) / s2;
  }
  const MonteCarloEstimate est = summarize(terms);
  // p_A = N(mu_old + sigma^2 gamma, sigma^2); gradient of
  // -KL(p_mu | p_A) + KL(p_mu | p_old) at mu_old is (mu_A - mu_old) / sigma^2.
  const double mu_a = cfg.mu_old + s2 * cfg.gamma;
  const double analytic = (mu_a - cfg.mu_old) / s2;

  GradientCheckReport r;
  r.reinforce_grad = Eigen::VectorXd::Constant(1, est.mean);
  r.kl_identity_grad = Eigen::VectorXd::Constant(1, analytic);
  r.standard_error = est.standard_error;
  r.n_samples = n_samples;
  const double na = r.reinforce_grad.norm();
  const double nb = r.kl_identity_grad.norm();
  if (na == 0.0 && nb == 0.0) {
    r.cosine = 1.0;
  } else if (na == 0.0 || nb == 0.0) {
    r.cosine = 0.0;
  } else {
    r.cosine = r.reinforce_grad.dot(r.kl_identity_grad) / (na * nb);
  }
  const double diff = (r.reinforce_grad - r.kl_identity_grad).norm();
  r.rel_err = nb > 0.0 ? diff / nb : diff;
  return r;
}

VarianceLemmaReport variance_lemma_check(const VelocityModel& model,
                                         const NoiseSchedule& sch,
                                         int condition, int i, int n, Rng& rng,
                                         int resamples) {
  if (resamples < 2 || n < resamples) {
    throw ValueError("need n >= resamples >= 2");
  }
  const double s2dt = schedule_sigma2dt(sch, i);
  const double c = gaussian_log_constant(model.dim, s2dt);
  VarianceLemmaReport r;
  r.analytic = analytic_step_entropy(model.dim, s2dt);
  r.from_logprob = mc_step_entropy(model, sch, condition, i, n, rng);

  const int states = n / resamples;
  std::vector<int> conds(states, condition);
  std::vector<Rng> rngs;
  const std::uint64_t base = rng();
  for (int k = 0; k < states; ++k) {
    rngs.push_back(make_stream(base, {static_cast<std::uint64_t>(k)}));
  }
  const auto trajs = rollout_batch(model, sch, conds, rngs, i);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> vals;
  vals.reserve(states);
  for (const auto& t : trajs) {
    const Eigen::VectorXd& mu = t.steps.back().mean;
    Eigen::MatrixXd xs(model.dim, resamples);
    for (int k = 0; k < resamples; ++k) {
      for (int j = 0; j < model.dim; ++j) {
        xs(j, k) = mu[j] + std::sqrt(s2dt) * normal(rng);
      }
    }
    const Eigen::VectorXd xbar = xs.rowwise().mean();
    const double var = (xs.colwise() - xbar).squaredNorm() / (resamples - 1);
    vals.push_back(var / (2.0 * s2dt) - c);
  }
  r.from_variance = summarize(vals);
  return r;
}

nlohmann::json to_json(const DiversityReport& r) {
  return {{"feature_space", r.feature_space},
          {"condition", r.condition},
          {"feature_variance", r.feature_variance},
          {"vendi", r.vendi},
          {"mode_coverage", r.mode_coverage},
          {"n_samples", r.n_samples}};
}

nlohmann::json to_json(const FitResult& r) {
  return {{"a", r.a}, {"b", r.b}, {"r_squared", r.r_squared},
          {"n_points", r.n_points}};
}

}  // namespace percflow
