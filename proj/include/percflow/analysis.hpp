#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "percflow/dataset.hpp"
#include "percflow/flow.hpp"

namespace percflow {

// Trace of the sample covariance, 1/(n-1) sum |z_i - zbar|^2. Columns are
// samples.
double feature_variance(const Eigen::Ref<const Eigen::MatrixXd>& samples);

// exp of the spectral entropy of K = G / n, G the Gram matrix of the
// unit-normalized columns. Uses the d x d dual when d < n (same nonzero
// spectrum).
double vendi_score(const Eigen::Ref<const Eigen::MatrixXd>& features);

// Spectrum used by vendi_score, either route forced.
Eigen::VectorXd vendi_spectrum(const Eigen::Ref<const Eigen::MatrixXd>& features,
                               bool use_dual);

struct CoverageOptions {
  double radius_multiplier = 3.0;
  double share_threshold = 0.05;
};

// Fraction of the condition's modes holding at least share_threshold of the
// samples within radius_multiplier * std of the mode mean.
double mode_coverage(const Eigen::Ref<const Eigen::MatrixXd>& samples,
                     const GmmDataset& ds, int condition,
                     const CoverageOptions& opts = {});

// Per-mode sample shares under the same radius rule.
std::vector<double> mode_shares(const Eigen::Ref<const Eigen::MatrixXd>& samples,
                                const GmmDataset& ds, int condition,
                                double radius_multiplier = 3.0);

struct FitResult {
  double a = 0.0;
  double b = 0.0;
  double r_squared = 0.0;
  int n_points = 0;
};

// OLS of R on exp(H): R = -a exp(H) + b.
FitResult entropy_reward_fit(std::span<const double> h_perc,
                             std::span<const double> reward);

struct AdvantageExtremes {
  double p_max = 0.0;
  double p_min = 0.0;
};

// Within-group softmax of the advantages.
Eigen::VectorXd advantage_probabilities(const Eigen::VectorXd& advantages);
AdvantageExtremes advantage_prob_extremes(const Eigen::VectorXd& advantages);

// One Gaussian step N(mu_old, sigma^2) in one dimension with advantage
// A(x) = gamma x.
struct Corollary1Config {
  double gamma = 0.5;
  double sigma = 1.0;
  double mu_old = 0.0;
};

struct GradientCheckReport {
  Eigen::VectorXd reinforce_grad;
  Eigen::VectorXd kl_identity_grad;
  double standard_error = 0.0;
  double cosine = 0.0;
  double rel_err = 0.0;
  long n_samples = 0;
};

GradientCheckReport corollary1_gradient_check(const Corollary1Config& cfg,
                                              long n_samples, Rng& rng);

struct VarianceLemmaReport {
  double analytic = 0.0;
  MonteCarloEstimate from_logprob;   // -E[log p]
  MonteCarloEstimate from_variance;  // E[Var(x_{i-1}|x_i)] / (2 s2dt) - C
};

// Step-i entropy two ways; the conditional variance is estimated by
// resampling `resamples` noise draws at each of n / resamples states.
VarianceLemmaReport variance_lemma_check(const VelocityModel& model,
                                         const NoiseSchedule& sch,
                                         int condition, int i, int n, Rng& rng,
                                         int resamples = 100);

struct DiversityReport {
  std::string feature_space;
  std::string condition;
  double feature_variance = 0.0;
  double vendi = 1.0;
  double mode_coverage = 0.0;
  long n_samples = 0;
};

nlohmann::json to_json(const DiversityReport& r);
nlohmann::json to_json(const FitResult& r);

}  // namespace percflow
