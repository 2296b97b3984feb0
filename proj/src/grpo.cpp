#include "percflow/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "percflow/errors.hpp"

namespace percflow {

Eigen::VectorXd group_advantage(const Eigen::VectorXd& rewards) {
  const auto k = rewards.size();
  if (k < 2) throw GroupSizeError("group needs at least two members, got " +
                                  std::to_string(k));
  if (!rewards.allFinite()) throw ValueError("non-finite reward in group");
  const double mean = rewards.mean();
  const Eigen::VectorXd centered = rewards.array() - mean;
  const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(k));
  if (sd < kAdvantageStdFloor) return Eigen::VectorXd::Zero(k);
  return centered / sd;
}

double ratio(double new_logp, double old_logp, std::int64_t* warnings) {
  const double r = std::exp(new_logp - old_logp);
  if (r < kRatioMin || r > kRatioMax) {
    if (warnings != nullptr) ++*warnings;
    return std::clamp(r, kRatioMin, kRatioMax);
  }
  return r;
}

SurrogateTerm clipped_surrogate(double rho, double advantage, double eps_low,
                                double eps_high) {
  const double unclipped = rho * advantage;
  const double clipped =
      std::clamp(rho, 1.0 - eps_low, 1.0 + eps_high) * advantage;
  if (clipped < unclipped) return {clipped, true};
  return {unclipped, false};
}

double kl_ref_penalty(const Eigen::VectorXd& mu_new, const Eigen::VectorXd& mu_ref,
                      double sigma2_dt) {
  if (mu_new.size() != mu_ref.size()) throw ShapeError("mean lengths differ");
  if (!(sigma2_dt > 0.0)) throw ScheduleError("transition variance must be positive");
  return (mu_new - mu_ref).squaredNorm() / (2.0 * sigma2_dt);
}

Eigen::VectorXd covariance_scores(const Eigen::VectorXd& logps,
                                  const Eigen::VectorXd& advs) {
  if (logps.size() != advs.size()) throw ShapeError("score inputs differ in length");
  if (logps.size() < 2) throw GroupSizeError("covariance needs at least two transitions");
  const Eigen::ArrayXd dl = logps.array() - logps.mean();
  const Eigen::ArrayXd da = advs.array() - advs.mean();
  return (dl * da).matrix();
}

std::vector<int> top_fraction(const Eigen::VectorXd& scores, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) throw ValueError("rate must lie in (0, 1)");
  const auto n = static_cast<int>(scores.size());
  const int k = static_cast<int>(std::floor(rate * n));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

std::vector<bool> clip_cov_mask(const Eigen::VectorXd& scores, double rate) {
  std::vector<bool> mask(scores.size(), false);
  for (int i : top_fraction(scores, rate)) mask[i] = true;
  return mask;
}

double kl_cov_penalty(const Eigen::VectorXd& scores, double rate, double beta,
                      std::span<const Eigen::VectorXd> mu_new,
                      std::span<const Eigen::VectorXd> mu_old,
                      std::span<const double> sigma2_dt) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (mu_new.size() != n || mu_old.size() != n || sigma2_dt.size() != n) {
    throw ShapeError("one mean pair and variance per scored transition");
  }
  if (!(beta >= 0.0)) throw ValueError("beta must be non-negative");
  double total = 0.0;
  for (int i : top_fraction(scores, rate)) {
    total += kl_ref_penalty(mu_new[i], mu_old[i], sigma2_dt[i]);
  }
  return beta * total;
}

}  // namespace percflow
