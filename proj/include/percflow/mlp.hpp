#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "percflow/rng.hpp"

namespace percflow {

enum class Activation { kTanh, kRelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Fully connected network. Hidden layers share one activation; the output
// layer is affine. weights[i] maps layer i (size layer_sizes[i]) to layer i+1.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::kTanh;

  // Uniform Glorot init in +-sqrt(6 / (fan_in + fan_out)); zero biases.
  static Mlp glorot(const std::vector<int>& layer_sizes, Activation activation,
                    Rng& rng);
  static Mlp zeros(const std::vector<int>& layer_sizes, Activation activation);

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }
  std::size_t num_parameters() const;

  // Throws ShapeError unless weights/biases agree with layer_sizes.
  void validate() const;

  // Exact parameter equality; false on any shape mismatch.
  bool operator==(const Mlp& other) const;
};

// Activation record of a batched forward pass. Column j of every matrix
// belongs to input column j. pre[l] is the pre-activation of layer l+1,
// post[0] is the input and post[l+1] = act(pre[l]) (affine for the last).
struct MlpCache {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;

  const Eigen::MatrixXd& output() const { return post.back(); }
  Eigen::Index batch_size() const { return post.front().cols(); }
};

// Parameter gradients (summed over the batch) plus the gradient with respect
// to every input column.
struct GradBundle {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd input;

  static GradBundle zeros_like(const Mlp& net);
  GradBundle& operator+=(const GradBundle& other);
  GradBundle& operator*=(double scale);
  bool all_zero() const;
  bool all_finite() const;
};

MlpCache mlp_forward(const Mlp& net, const Eigen::Ref<const Eigen::MatrixXd>& inputs);
Eigen::VectorXd mlp_apply(const Mlp& net, const Eigen::VectorXd& input);

GradBundle mlp_backward(const Mlp& net, const MlpCache& cache,
                        const Eigen::Ref<const Eigen::MatrixXd>& output_grad);

// Flattened views used by finite-difference checks and hashing.
Eigen::VectorXd flatten_parameters(const Mlp& net);
void assign_parameters(Mlp& net, const Eigen::VectorXd& flat);
Eigen::VectorXd flatten_gradients(const GradBundle& grads);

}  // namespace percflow
