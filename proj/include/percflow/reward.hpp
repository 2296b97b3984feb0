#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace percflow {

enum class RewardKind { kPeak, kTwinPeaks, kLinear };

std::string to_string(RewardKind k);
RewardKind reward_kind_from_string(const std::string& name);

// peak: exp(-|x - c|^2 / scale^2) with one center.
// twin_peaks: max of two such peaks.
// linear: w . x.
struct RewardSpec {
  RewardKind kind = RewardKind::kPeak;
  std::vector<std::vector<double>> centers;
  double scale = 1.0;
  std::vector<double> weights;

  void validate(int dim) const;
  bool operator==(const RewardSpec&) const = default;
};

double evaluate_reward(const RewardSpec& spec, const Eigen::VectorXd& x0);

// Per-condition reward assignment, keyed by condition id.
struct RewardLandscape {
  std::map<int, RewardSpec> by_condition;
};

// Throws ConditionError when c has no landscape.
double compute_reward(const RewardLandscape& land, const Eigen::VectorXd& x0,
                      int c);

}  // namespace percflow
