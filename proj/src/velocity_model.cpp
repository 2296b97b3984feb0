#include "percflow/velocity_model.hpp"

#include <cmath>
#include <numbers>

#include "percflow/errors.hpp"

namespace percflow {

VelocityModel VelocityModel::create(int dim, int num_conditions,
                                    const ModelSpec& spec, Rng& rng) {
  if (dim <= 0 || num_conditions <= 0 || spec.time_frequencies < 0) {
    throw ShapeError("invalid velocity model dimensions");
  }
  VelocityModel m;
  m.dim = dim;
  m.num_conditions = num_conditions;
  m.time_frequencies = spec.time_frequencies;
  std::vector<int> sizes{m.input_dim()};
  sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
  sizes.push_back(dim);
  m.net = Mlp::glorot(sizes, spec.activation, rng);
  return m;
}

void VelocityModel::check_condition(int condition) const {
  if (condition < 0 || condition >= num_conditions) {
    throw ConditionError("condition id " + std::to_string(condition) +
                         " outside the model's vocabulary of " +
                         std::to_string(num_conditions));
  }
}

void VelocityModel::write_features(const Eigen::Ref<const Eigen::VectorXd>& x,
                                   double s, int condition,
                                   Eigen::Ref<Eigen::VectorXd> out) const {
  if (x.size() != dim) {
    throw ShapeError("state has length " + std::to_string(x.size()) +
                     ", model dimension is " + std::to_string(dim));
  }
  check_condition(condition);
  out.head(dim) = x;
  int k = dim;
  out[k++] = s;
  double freq = std::numbers::pi;
  for (int f = 0; f < time_frequencies; ++f, freq *= 2.0) {
    out[k++] = std::sin(freq * s);
    out[k++] = std::cos(freq * s);
  }
  out.tail(num_conditions).setZero();
  out[k + condition] = 1.0;
}

Eigen::MatrixXd VelocityModel::features(
    const Eigen::Ref<const Eigen::MatrixXd>& xs, std::span<const double> times,
    std::span<const int> conditions) const {
  const auto n = xs.cols();
  if (static_cast<Eigen::Index>(times.size()) != n ||
      static_cast<Eigen::Index>(conditions.size()) != n) {
    throw ShapeError("batch times/conditions do not match the state count");
  }
  Eigen::MatrixXd in(input_dim(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    write_features(xs.col(j), times[j], conditions[j], in.col(j));
  }
  return in;
}

Eigen::VectorXd VelocityModel::velocity(const Eigen::VectorXd& x, double s,
                                        int condition) const {
  Eigen::VectorXd in(input_dim());
  write_features(x, s, condition, in);
  return mlp_apply(net, in);
}

Eigen::MatrixXd VelocityModel::velocity(
    const Eigen::Ref<const Eigen::MatrixXd>& xs, std::span<const double> times,
    std::span<const int> conditions, MlpCache* cache) const {
  MlpCache local = mlp_forward(net, features(xs, times, conditions));
  Eigen::MatrixXd out = local.output();
  if (cache != nullptr) *cache = std::move(local);
  return out;
}

}  // namespace percflow
