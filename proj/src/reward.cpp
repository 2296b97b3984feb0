#include "percflow/reward.hpp"

#include <algorithm>
#include <cmath>

#include "percflow/errors.hpp"

namespace percflow {

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::kPeak: return "peak";
    case RewardKind::kTwinPeaks: return "twin_peaks";
    case RewardKind::kLinear: return "linear";
  }
  return "?";
}

RewardKind reward_kind_from_string(const std::string& name) {
  if (name == "peak") return RewardKind::kPeak;
  if (name == "twin_peaks") return RewardKind::kTwinPeaks;
  if (name == "linear") return RewardKind::kLinear;
  throw ValueError("unknown reward kind '" + name +
                   "' (expected peak, twin_peaks or linear)");
}

void RewardSpec::validate(int dim) const {
  const auto check_len = [&](const std::vector<double>& v, const char* what) {
    if (static_cast<int>(v.size()) != dim) {
      throw ShapeError(std::string(what) + " has length " +
                       std::to_string(v.size()) + ", expected " +
                       std::to_string(dim));
    }
  };
  switch (kind) {
    case RewardKind::kPeak:
    case RewardKind::kTwinPeaks: {
      const std::size_t need = kind == RewardKind::kPeak ? 1 : 2;
      if (centers.size() != need) {
        throw ValueError(to_string(kind) + " needs " + std::to_string(need) +
                         " center(s)");
      }
      for (const auto& c : centers) check_len(c, "reward center");
      if (!(scale > 0.0)) throw ValueError("reward scale must be positive");
      break;
    }
    case RewardKind::kLinear:
      check_len(weights, "reward weights");
      break;
  }
}

namespace {

double peak(const std::vector<double>& center, double scale,
            const Eigen::VectorXd& x) {
  double d2 = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double d = x[j] - center[j];
    d2 += d * d;
  }
  return std::exp(-d2 / (scale * scale));
}

}  // namespace

double evaluate_reward(const RewardSpec& spec, const Eigen::VectorXd& x0) {
  spec.validate(static_cast<int>(x0.size()));
  switch (spec.kind) {
    case RewardKind::kPeak:
      return peak(spec.centers[0], spec.scale, x0);
    case RewardKind::kTwinPeaks:
      return std::max(peak(spec.centers[0], spec.scale, x0),
                      peak(spec.centers[1], spec.scale, x0));
    case RewardKind::kLinear: {
      double r = 0.0;
      for (Eigen::Index j = 0; j < x0.size(); ++j) r += spec.weights[j] * x0[j];
      return r;
    }
  }
  return 0.0;
}

double compute_reward(const RewardLandscape& land, const Eigen::VectorXd& x0,
                      int c) {
  const auto it = land.by_condition.find(c);
  if (it == land.by_condition.end()) {
    throw ConditionError("no reward landscape for condition " + std::to_string(c));
  }
  return evaluate_reward(it->second, x0);
}

}  // namespace percflow
