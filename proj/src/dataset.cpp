#include "percflow/dataset.hpp"

#include <random>

#include "percflow/errors.hpp"

namespace percflow {

GmmDataset GmmDataset::default_dataset() {
  GmmDataset ds;
  ds.dim = 2;
  ds.modes = {
      {{-3.0, 0.0}, 1.0, 0.3}, {{3.0, 0.0}, 1.0, 0.3},
      {{-3.0, -3.0}, 1.0, 0.3}, {{-3.0, 3.0}, 1.0, 0.3},
      {{3.0, -3.0}, 1.0, 0.3}, {{3.0, 3.0}, 1.0, 0.3},
  };
  ds.conditions = {{"portrait", {0, 1}}, {"room", {2, 3, 4, 5}}};
  return ds;
}

void GmmDataset::validate() const {
  if (dim <= 0) throw ValueError("dataset dimension must be positive");
  if (modes.empty()) throw ValueError("dataset has no modes");
  for (std::size_t m = 0; m < modes.size(); ++m) {
    const auto& mode = modes[m];
    if (static_cast<int>(mode.mean.size()) != dim) {
      throw ShapeError("mode " + std::to_string(m) + " mean has length " +
                       std::to_string(mode.mean.size()) + ", expected " +
                       std::to_string(dim));
    }
    if (!(mode.weight > 0.0)) {
      throw ValueError("mode " + std::to_string(m) + " weight must be positive");
    }
    if (!(mode.std >= 0.0)) {
      throw ValueError("mode " + std::to_string(m) + " std must be non-negative");
    }
  }
  if (conditions.empty()) throw ValueError("dataset has no conditions");
  for (const auto& c : conditions) {
    if (c.modes.empty()) {
      throw ValueError("condition '" + c.name + "' maps to no modes");
    }
    for (int m : c.modes) {
      if (m < 0 || m >= static_cast<int>(modes.size())) {
        throw ValueError("condition '" + c.name + "' references unknown mode " +
                         std::to_string(m));
      }
    }
  }
}

int GmmDataset::condition_id(const std::string& name) const {
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    if (conditions[i].name == name) return static_cast<int>(i);
  }
  throw ConditionError("unknown condition '" + name + "'");
}

const ConditionSpec& GmmDataset::condition(int id) const {
  if (id < 0 || id >= num_conditions()) {
    throw ConditionError("unknown condition id " + std::to_string(id));
  }
  return conditions[id];
}

std::vector<double> GmmDataset::condition_weights(int id) const {
  const auto& c = condition(id);
  double total = 0.0;
  for (int m : c.modes) total += modes[m].weight;
  std::vector<double> w;
  w.reserve(c.modes.size());
  for (int m : c.modes) w.push_back(modes[m].weight / total);
  return w;
}

Eigen::VectorXd GmmDataset::mode_mean(int mode) const {
  const auto& m = modes.at(mode).mean;
  return Eigen::Map<const Eigen::VectorXd>(m.data(),
                                           static_cast<Eigen::Index>(m.size()));
}

std::vector<std::string> GmmDataset::condition_names() const {
  std::vector<std::string> names;
  for (const auto& c : conditions) names.push_back(c.name);
  return names;
}

Eigen::MatrixXd sample_dataset(const GmmDataset& ds, int c, int n, Rng& rng) {
  const auto& cond = ds.condition(c);
  const auto weights = ds.condition_weights(c);
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(ds.dim, n);
  for (int k = 0; k < n; ++k) {
    const GmmMode& mode = ds.modes[cond.modes[pick(rng)]];
    for (int j = 0; j < ds.dim; ++j) {
      out(j, k) = mode.mean[j] + mode.std * normal(rng);
    }
  }
  return out;
}

}  // namespace percflow
