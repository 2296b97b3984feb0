#include "percflow/mlp.hpp"

#include <cmath>

#include "percflow/errors.hpp"

namespace percflow {

std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ValueError("unknown activation '" + name + "' (expected tanh or relu)");
}

namespace {

void check_sizes(const std::vector<int>& layer_sizes) {
  if (layer_sizes.size() < 2) {
    throw ShapeError("an Mlp needs at least an input and an output layer");
  }
  for (int s : layer_sizes) {
    if (s <= 0) throw ShapeError("layer sizes must be positive");
  }
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::kTanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

// d act / d z, expressed through the cached pre- and post-activations.
Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& pre,
                                      const Eigen::MatrixXd& post,
                                      Activation a) {
  if (a == Activation::kTanh) return (1.0 - post.array().square()).matrix();
  return (pre.array() > 0.0).cast<double>().matrix();
}

}  // namespace

Mlp Mlp::glorot(const std::vector<int>& layer_sizes, Activation activation,
                Rng& rng) {
  Mlp net = zeros(layer_sizes, activation);
  for (int l = 0; l < net.num_layers(); ++l) {
    const double limit =
        std::sqrt(6.0 / (layer_sizes[l] + layer_sizes[l + 1]));
    std::uniform_real_distribution<double> uni(-limit, limit);
    Eigen::MatrixXd& w = net.weights[l];
    // Row-major fill order so the draw sequence does not depend on Eigen's
    // storage order.
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = uni(rng);
  }
  return net;
}

Mlp Mlp::zeros(const std::vector<int>& layer_sizes, Activation activation) {
  check_sizes(layer_sizes);
  Mlp net;
  net.layer_sizes = layer_sizes;
  net.activation = activation;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    net.weights.push_back(
        Eigen::MatrixXd::Zero(layer_sizes[l + 1], layer_sizes[l]));
    net.biases.push_back(Eigen::VectorXd::Zero(layer_sizes[l + 1]));
  }
  return net;
}

std::size_t Mlp::num_parameters() const {
  std::size_t n = 0;
  for (int l = 0; l < num_layers(); ++l) {
    n += weights[l].size() + biases[l].size();
  }
  return n;
}

bool Mlp::operator==(const Mlp& other) const {
  if (layer_sizes != other.layer_sizes || activation != other.activation ||
      weights.size() != other.weights.size() ||
      biases.size() != other.biases.size()) {
    return false;
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& a = weights[l];
    const auto& b = other.weights[l];
    if (a.rows() != b.rows() || a.cols() != b.cols() || a != b) return false;
    if (biases[l].size() != other.biases[l].size() ||
        biases[l] != other.biases[l]) {
      return false;
    }
  }
  return true;
}

void Mlp::validate() const {
  check_sizes(layer_sizes);
  if (weights.size() + 1 != layer_sizes.size() ||
      biases.size() + 1 != layer_sizes.size()) {
    throw ShapeError("layer count does not match layer_sizes");
  }
  for (int l = 0; l < num_layers(); ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] ||
        weights[l].cols() != layer_sizes[l] ||
        biases[l].size() != layer_sizes[l + 1]) {
      throw ShapeError("layer " + std::to_string(l) +
                       " parameters do not match layer_sizes");
    }
  }
}

GradBundle GradBundle::zeros_like(const Mlp& net) {
  GradBundle g;
  for (int l = 0; l < net.num_layers(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(),
                                              net.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
  }
  return g;
}

GradBundle& GradBundle::operator+=(const GradBundle& other) {
  if (other.weights.size() != weights.size()) {
    throw ShapeError("gradient bundles have different layer counts");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

GradBundle& GradBundle::operator*=(double scale) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= scale;
    biases[l] *= scale;
  }
  input *= scale;
  return *this;
}

bool GradBundle::all_zero() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].isZero(0.0) || !biases[l].isZero(0.0)) return false;
  }
  return true;
}

bool GradBundle::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

MlpCache mlp_forward(const Mlp& net,
                     const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
  if (inputs.rows() != net.input_dim()) {
    throw ShapeError("input has " + std::to_string(inputs.rows()) +
                     " rows, network expects " +
                     std::to_string(net.input_dim()));
  }
  MlpCache cache;
  cache.post.reserve(net.num_layers() + 1);
  cache.pre.reserve(net.num_layers());
  cache.post.emplace_back(inputs);
  for (int l = 0; l < net.num_layers(); ++l) {
    Eigen::MatrixXd z(net.weights[l].rows(), inputs.cols());
    z.noalias() = net.weights[l] * cache.post.back();
    z.colwise() += net.biases[l];
    const bool last = l + 1 == net.num_layers();
    cache.post.push_back(last ? z : activate(z, net.activation));
    cache.pre.push_back(std::move(z));
  }
  return cache;
}

Eigen::VectorXd mlp_apply(const Mlp& net, const Eigen::VectorXd& input) {
  return mlp_forward(net, Eigen::Ref<const Eigen::MatrixXd>(input)).output();
}

GradBundle mlp_backward(const Mlp& net, const MlpCache& cache,
                        const Eigen::Ref<const Eigen::MatrixXd>& output_grad) {
  const int layers = net.num_layers();
  if (static_cast<int>(cache.pre.size()) != layers ||
      static_cast<int>(cache.post.size()) != layers + 1) {
    throw CacheError("activation record has the wrong number of layers");
  }
  for (int l = 0; l < layers; ++l) {
    if (cache.post[l].rows() != net.layer_sizes[l] ||
        cache.pre[l].rows() != net.layer_sizes[l + 1]) {
      throw CacheError("activation record does not match the network shape");
    }
  }
  if (output_grad.rows() != net.output_dim() ||
      output_grad.cols() != cache.batch_size()) {
    throw CacheError("output gradient does not match the cached batch");
  }

  GradBundle g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Eigen::MatrixXd delta = output_grad;
  for (int l = layers - 1; l >= 0; --l) {
    g.weights[l].noalias() = delta * cache.post[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    Eigen::MatrixXd upstream(net.layer_sizes[l], delta.cols());
    upstream.noalias() = net.weights[l].transpose() * delta;
    if (l > 0) {
      delta = upstream.cwiseProduct(activation_derivative(
          cache.pre[l - 1], cache.post[l], net.activation));
    } else {
      g.input = std::move(upstream);
    }
  }
  return g;
}

Eigen::VectorXd flatten_parameters(const Mlp& net) {
  Eigen::VectorXd flat(net.num_parameters());
  Eigen::Index k = 0;
  for (int l = 0; l < net.num_layers(); ++l) {
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c)
        flat[k++] = net.weights[l](r, c);
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r)
      flat[k++] = net.biases[l][r];
  }
  return flat;
}

void assign_parameters(Mlp& net, const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != net.num_parameters()) {
    throw ShapeError("flat parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (int l = 0; l < net.num_layers(); ++l) {
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c)
        net.weights[l](r, c) = flat[k++];
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r)
      net.biases[l][r] = flat[k++];
  }
}

Eigen::VectorXd flatten_gradients(const GradBundle& grads) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    n += grads.weights[l].size() + grads.biases[l].size();
  }
  Eigen::VectorXd flat(n);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    for (Eigen::Index r = 0; r < grads.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < grads.weights[l].cols(); ++c)
        flat[k++] = grads.weights[l](r, c);
    for (Eigen::Index r = 0; r < grads.biases[l].size(); ++r)
      flat[k++] = grads.biases[l][r];
  }
  return flat;
}

}  // namespace percflow
