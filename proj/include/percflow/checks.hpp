#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "percflow/perceptual.hpp"
#include "percflow/velocity_model.hpp"

namespace percflow {

struct CheckItem {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double expected = 0.0;
  double tolerance = 0.0;
  nlohmann::json detail = nlohmann::json::object();
};

struct CheckReport {
  std::string which;
  std::vector<CheckItem> items;

  bool passed() const;
  nlohmann::json to_json() const;
};

// Self-contained suites behind `percflow check`. Each builds its own model
// or analytic case from `seed`.
std::vector<std::string> check_names();
CheckReport run_check(const std::string& which, std::uint64_t seed);

// Per-step Monte Carlo entropy against d/2 - C_t, |z| <= 3.
CheckReport check_step_entropy(const VelocityModel& model,
                               const NoiseSchedule& sch, int condition,
                               int n_rollouts, std::uint64_t seed);
// The three analytic Gaussian cases at n samples.
CheckReport check_corollary1(long n_samples, std::uint64_t seed);
// (H_perc + C_perc) 2 s2dt against trace(P P^T) s2dt per step, 10%.
CheckReport check_remark1(const VelocityModel& model, const NoiseSchedule& sch,
                          const PerceptualMap& linear_map, int condition,
                          int n_rollouts, std::uint64_t seed);
// Both variance-lemma estimates against the closed form per step, 3 SE.
CheckReport check_variance_lemma(const VelocityModel& model,
                                 const NoiseSchedule& sch, int condition,
                                 int n, std::uint64_t seed);
// Central differences on mlp_backward (both activations) and on the chain
// through posterior_mean, rel. err < 1e-4.
CheckReport check_gradients(std::uint64_t seed);

}  // namespace percflow
