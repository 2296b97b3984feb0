#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "percflow/dataset.hpp"
#include "percflow/perceptual.hpp"
#include "percflow/pretrain.hpp"
#include "percflow/regularizer.hpp"
#include "percflow/reward.hpp"
#include "percflow/schedule.hpp"
#include "percflow/velocity_model.hpp"

namespace percflow {

struct RunSection {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/run";
  std::string checkpoint;  // pretrained checkpoint for rlhf
  int eval_samples = 2000;

  bool operator==(const RunSection&) const = default;
};

struct RlhfSection {
  int group_size = 8;
  int groups_per_step = 16;
  int num_updates = 300;
  int inner_updates = 1;
  double learning_rate = 2e-3;
  std::vector<std::string> conditions{"portrait"};
  int checkpoint_every = 50;
  double coverage_radius = 3.0;
  double coverage_share = 0.05;
  std::string metrics_map = "mlp";

  bool operator==(const RlhfSection&) const = default;
};

// Sections: run, dataset, schedule, model, pretrain, perceptual_maps,
// landscape, regularizer, rlhf. Only run and dataset are required.
struct ExperimentConfig {
  RunSection run;
  GmmDataset dataset;
  ScheduleSpec schedule;
  ModelSpec model;
  PretrainConfig pretrain;  // seed mirrors run.seed
  std::vector<MapSpec> perceptual_maps;
  std::map<std::string, RewardSpec> landscape;  // keyed by condition name
  RegularizerSpec regularizer;
  RlhfSection rlhf;

  // Cross-section checks (condition names, map ids, shapes).
  void validate() const;
  const MapSpec* find_map(const std::string& id) const;

  bool operator==(const ExperimentConfig&) const = default;
};

// The built-in experiment: default dataset, twin peaks on "portrait",
// frozen_mlp map "mlp" plus linear map "proj".
ExperimentConfig default_config();

// Throws ConfigError (with the offending line when known) on syntax errors,
// unknown keys, missing sections or invalid values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string emit_config(const ExperimentConfig& cfg);

// Applies PERCFLOW_SEED if it is set.
void apply_seed_override(ExperimentConfig& cfg);

RewardLandscape build_landscape(const ExperimentConfig& cfg);
std::vector<PerceptualMap> build_maps(const ExperimentConfig& cfg);

}  // namespace percflow
