#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percflow/rng.hpp"

namespace percflow {

struct GmmMode {
  std::vector<double> mean;
  double weight = 1.0;
  double std = 0.3;

  bool operator==(const GmmMode&) const = default;
};

struct ConditionSpec {
  std::string name;
  std::vector<int> modes;

  bool operator==(const ConditionSpec&) const = default;
};

// Conditional Gaussian mixture. Each condition emits from its own subset of
// the shared mode list, with weights renormalized inside the subset.
struct GmmDataset {
  int dim = 2;
  std::vector<GmmMode> modes;
  std::vector<ConditionSpec> conditions;

  // d = 2; "portrait" has modes at (+-3, 0); "room" has modes at (+-3, +-3);
  // every mode has std 0.3 and equal weight.
  static GmmDataset default_dataset();

  void validate() const;
  int num_conditions() const { return static_cast<int>(conditions.size()); }
  int condition_id(const std::string& name) const;
  const ConditionSpec& condition(int id) const;
  std::vector<double> condition_weights(int id) const;
  Eigen::VectorXd mode_mean(int mode) const;
  std::vector<std::string> condition_names() const;

  bool operator==(const GmmDataset&) const = default;
};

// n i.i.d. draws (columns) from condition `c`'s renormalized mixture.
Eigen::MatrixXd sample_dataset(const GmmDataset& ds, int c, int n, Rng& rng);

}  // namespace percflow
