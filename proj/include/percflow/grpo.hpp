#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace percflow {

inline constexpr double kAdvantageStdFloor = 1e-4;
inline constexpr double kRatioMin = 1e-6;
inline constexpr double kRatioMax = 1e6;

// (R - mean) / std with the population std; all zeros below the floor.
Eigen::VectorXd group_advantage(const Eigen::VectorXd& rewards);

// exp(new - old), clamped to [1e-6, 1e6]. Each clamp bumps *warnings.
double ratio(double new_logp, double old_logp,
             std::int64_t* warnings = nullptr);

struct SurrogateTerm {
  double value = 0.0;
  bool clipped = false;
};

// min(rho A, clip(rho, 1 - eps_low, 1 + eps_high) A). `clipped` is set when
// the clipped branch is the one selected and differs from rho A.
SurrogateTerm clipped_surrogate(double rho, double advantage, double eps_low,
                                double eps_high);

// |mu_new - mu_ref|^2 / (2 sigma2_dt): KL between isotropic Gaussians
// sharing their covariance.
double kl_ref_penalty(const Eigen::VectorXd& mu_new, const Eigen::VectorXd& mu_ref,
                      double sigma2_dt);

// (logp_i - mean logp) (A_i - mean A).
Eigen::VectorXd covariance_scores(const Eigen::VectorXd& logps,
                                  const Eigen::VectorXd& advs);

// Indices of the floor(rate N) largest scores; ties go to the lower index.
std::vector<int> top_fraction(const Eigen::VectorXd& scores, double rate);

// true marks a transition detached from the surrogate gradient.
std::vector<bool> clip_cov_mask(const Eigen::VectorXd& scores, double rate);

// beta * sum over the top floor(rate N) transitions of kl_ref_penalty.
double kl_cov_penalty(const Eigen::VectorXd& scores, double rate, double beta,
                      std::span<const Eigen::VectorXd> mu_new,
                      std::span<const Eigen::VectorXd> mu_old,
                      std::span<const double> sigma2_dt);

}  // namespace percflow
