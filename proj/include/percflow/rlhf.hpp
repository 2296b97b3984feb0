#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "percflow/adam.hpp"
#include "percflow/analysis.hpp"
#include "percflow/dataset.hpp"
#include "percflow/flow.hpp"
#include "percflow/perceptual.hpp"
#include "percflow/regularizer.hpp"
#include "percflow/reward.hpp"

namespace percflow {

// K old-policy trajectories for one condition.
struct RolloutGroup {
  int condition = 0;
  std::vector<Trajectory> members;
  Eigen::VectorXd raw_rewards;
  Eigen::VectorXd shaped_rewards;
  Eigen::VectorXd advantages;
};

// Rolls out one group per entry of `group_conditions`. Member k of group g in
// update u draws from make_stream(seed, {u, g, k}) so the noise never depends
// on the regularizer.
std::vector<RolloutGroup> collect_groups(const VelocityModel& model,
                                         const NoiseSchedule& sch,
                                         const RewardLandscape& land,
                                         std::span<const int> group_conditions,
                                         int group_size, std::uint64_t seed,
                                         std::uint64_t update);

// Fills shaped rewards (pec / pcvae shaping with `map`, identity otherwise)
// and group-standardized advantages.
void assign_advantages(std::vector<RolloutGroup>& groups,
                       const RegularizerSpec& spec, const PerceptualMap* map);

struct RlhfContext {
  const NoiseSchedule* schedule = nullptr;
  const VelocityModel* reference = nullptr;  // kl_ref
  const PerceptualMap* map = nullptr;        // entropy_reg(perceptual)
};

struct LossTerms {
  double loss = 0.0;
  GradBundle grads;
  double clipped_frac = 0.0;
  double mean_ratio = 0.0;
  Eigen::VectorXd cov_scores;
  std::int64_t ratio_warnings = 0;
};

// Negative mean clipped surrogate over every transition plus the
// regularizer losses of `spec`, with its gradient.
LossTerms rlhf_loss(const VelocityModel& model,
                    std::span<const RolloutGroup> groups,
                    const RegularizerSpec& spec, const RlhfContext& ctx);

struct UpdateStats {
  int step = 0;
  double mean_raw_reward = 0.0;
  double std_raw_reward = 0.0;  // mean within-group population std
  double mean_shaped_reward = 0.0;
  double clipped_frac = 0.0;
  double mean_ratio = 0.0;
  double analytic_entropy = 0.0;  // mean per-step H_t
  double perc_entropy = 0.0;
  double mode_coverage = 0.0;
  double vendi = 0.0;
  double p_adv_max = 0.0;
  double p_adv_min = 0.0;
  double cov_q10 = 0.0;
  double cov_q50 = 0.0;
  double cov_q90 = 0.0;
  std::int64_t ratio_warnings = 0;
};

// `inner_updates` optimizer steps on the same old-policy groups. Returns the
// surrogate statistics of the first pass.
UpdateStats rlhf_step(VelocityModel& model, AdamState& adam,
                      std::span<const RolloutGroup> groups,
                      const RegularizerSpec& spec, const RlhfContext& ctx,
                      int inner_updates = 1);

struct RlhfOptions {
  int group_size = 8;
  int groups_per_step = 16;
  int num_updates = 300;
  int inner_updates = 1;
  double learning_rate = 1e-3;
  std::vector<int> conditions{0};  // cycled over the groups of a step
  int checkpoint_every = 50;
  std::uint64_t seed = 0;
  CoverageOptions coverage;

  void validate() const;
  bool operator==(const RlhfOptions& o) const {
    return group_size == o.group_size && groups_per_step == o.groups_per_step &&
           num_updates == o.num_updates && inner_updates == o.inner_updates &&
           learning_rate == o.learning_rate && conditions == o.conditions &&
           checkpoint_every == o.checkpoint_every && seed == o.seed &&
           coverage.radius_multiplier == o.coverage.radius_multiplier &&
           coverage.share_threshold == o.coverage.share_threshold;
  }
};

struct RlhfMaps {
  const PerceptualMap* regularizer = nullptr;  // pec / pcvae / entropy_reg
  const PerceptualMap* metrics = nullptr;      // perc_entropy and vendi
};

struct RlhfCallbacks {
  std::function<void(const UpdateStats&)> on_stats;
  std::function<void(int step, const VelocityModel&)> on_checkpoint;
};

// Batch diversity metrics of the pre-update groups.
void fill_batch_metrics(UpdateStats& stats, std::span<const RolloutGroup> groups,
                        const GmmDataset& ds, const PerceptualMap& metric_map,
                        const NoiseSchedule& sch, const CoverageOptions& cov);

// Fine-tunes `model` in place; the reference policy for kl_ref is its
// starting point.
std::vector<UpdateStats> rlhf_train(VelocityModel& model, const GmmDataset& ds,
                                    const RewardLandscape& land,
                                    const RegularizerSpec& spec,
                                    const NoiseSchedule& sch,
                                    const RlhfMaps& maps,
                                    const RlhfOptions& opts,
                                    const RlhfCallbacks& callbacks = {});

}  // namespace percflow
