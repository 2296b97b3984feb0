#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace percflow {

using Rng = std::mt19937_64;

// Derives an independent generator from a base seed and a path of stream
// indices (e.g. {update, group, member}). Identical inputs always yield the
// same stream, which is what makes rollouts reproducible and order-free.
inline Rng make_stream(std::uint64_t seed,
                       std::initializer_list<std::uint64_t> path = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * path.size());
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (std::uint64_t p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline Eigen::VectorXd standard_normal(Rng& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd out(dim);
  for (int i = 0; i < dim; ++i) out[i] = normal(rng);
  return out;
}

}  // namespace percflow
