#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "percflow/analysis.hpp"
#include "percflow/config.hpp"

namespace percflow {

inline constexpr const char* kVersion = "percflow 0.1.0";

// manifest.json, metrics.csv, samples.csv, checkpoints/, plots/
struct RunLayout {
  std::filesystem::path dir;

  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
  std::filesystem::path samples() const { return dir / "samples.csv"; }
  std::filesystem::path checkpoints() const { return dir / "checkpoints"; }
  std::filesystem::path plots() const { return dir / "plots"; }
  std::filesystem::path final_checkpoint() const { return checkpoints() / "final.json"; }
};

// Written atomically on every save. Paths inside are relative to the run
// directory.
class RunManifest {
 public:
  static RunManifest begin(const RunLayout& layout, const std::string& command,
                           const ExperimentConfig& cfg);
  // Throws IoError naming the file when the run has no manifest.
  static RunManifest load(const RunLayout& layout);

  void add_checkpoint(int step, const std::filesystem::path& rel);
  // Registers an output once; re-registering refreshes nothing.
  void add_output(const std::filesystem::path& rel, const std::string& kind);
  void complete();
  void abort(const std::string& reason);
  void save() const;

  // Config snapshot re-parsed from the stored YAML.
  ExperimentConfig config() const;
  bool completed() const;
  nlohmann::json& data() { return json_; }
  const nlohmann::json& data() const { return json_; }

 private:
  RunLayout layout_;
  nlohmann::json json_;
};

struct RunOptions {
  bool force = false;  // replace an existing run directory
};

// Each returns the run directory. Divergence is recorded as an aborted
// manifest before the error propagates.
std::filesystem::path run_pretrain(const ExperimentConfig& cfg, const RunOptions& opts = {});
std::filesystem::path run_rlhf(const ExperimentConfig& cfg, const RunOptions& opts = {});

// n rollouts per condition from the final checkpoint; one report per
// (feature space, condition), identity space first.
std::vector<DiversityReport> run_eval(const std::filesystem::path& dir, int n_samples);

// Fit of mean_raw_reward on exp(perc_entropy) plus plots/fit.svg.
FitResult run_fit(const std::filesystem::path& dir);

std::vector<std::string> plot_kinds();
// One SVG under the first run's plots/, registered in its manifest.
std::filesystem::path run_plot(const std::vector<std::filesystem::path>& dirs,
                               const std::string& kind);

// Resolves run.checkpoint: a checkpoint file or a run directory.
std::filesystem::path resolve_checkpoint(const std::string& ref);

std::string utc_timestamp();

}  // namespace percflow
