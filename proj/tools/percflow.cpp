// percflow: pretrain, rlhf, eval, check, fit, plot.
//
// Exit codes: 0 success, 1 usage or config error, 2 run failure,
// 3 check-suite failure.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "percflow/checks.hpp"
#include "percflow/config.hpp"
#include "percflow/errors.hpp"
#include "percflow/experiment.hpp"
#include "percflow/regularizer.hpp"

namespace fs = std::filesystem;
using namespace percflow;

namespace {

constexpr int kUsageError = 1;
constexpr int kRunFailure = 2;
constexpr int kCheckFailure = 3;

ExperimentConfig load(const std::string& path, const std::string& output) {
  ExperimentConfig cfg = load_config(path);
  apply_seed_override(cfg);
  if (!output.empty()) cfg.run.output_dir = output;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching RLHF lab with perceptual-entropy regularizers"};
  app.require_subcommand(1);

  std::string config_path, output, regularizer, checkpoint, which, kind, report_path;
  std::string run_dir;
  std::vector<std::string> run_dirs;
  bool force = false;
  int samples = 2000;
  std::uint64_t check_seed = 0;

  auto* pretrain = app.add_subcommand("pretrain", "train the base velocity model");
  pretrain->add_option("config", config_path, "experiment config (YAML)")->required();
  pretrain->add_option("--output", output, "override run.output_dir");
  pretrain->add_flag("--force", force, "replace an existing run directory");

  auto* rlhf = app.add_subcommand("rlhf", "GRPO fine-tuning from a pretrained checkpoint");
  rlhf->add_option("config", config_path, "experiment config (YAML)")->required();
  rlhf->add_option("--regularizer", regularizer,
                   "override the regularizer, e.g. pec:lambda=0.05");
  rlhf->add_option("--checkpoint", checkpoint, "override run.checkpoint (file or run dir)");
  rlhf->add_option("--output", output, "override run.output_dir");
  rlhf->add_flag("--force", force, "replace an existing run directory");

  auto* eval = app.add_subcommand("eval", "diversity report for a completed run");
  eval->add_option("run_dir", run_dir)->required();
  eval->add_option("--samples", samples, "rollouts per condition")->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("check", "analytic oracle suites");
  check->add_option("--which", which, "entropy, corollary1, remark1, variance-lemma, gradients")
      ->check(CLI::IsMember(check_names()));
  check->add_option("--seed", check_seed, "seed of the check models");
  check->add_option("--report", report_path, "also write the JSON report here");

  auto* fit = app.add_subcommand("fit", "fit R = -a exp(H_perc) + b on a run's metrics");
  fit->add_option("run_dir", run_dir)->required();

  auto* plot = app.add_subcommand("plot", "SVG plots over one or more runs");
  plot->add_option("run_dirs", run_dirs)->required();
  plot->add_option("--kind", kind, "reward, reward-std, entropy, coverage, scatter")
      ->required()
      ->check(CLI::IsMember(plot_kinds()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*pretrain) {
      const ExperimentConfig cfg = load(config_path, output);
      const fs::path dir = run_pretrain(cfg, {force});
      std::cout << "pretrain run written to " << dir.string() << "\n";
    } else if (*rlhf) {
      ExperimentConfig cfg = load(config_path, output);
      if (!regularizer.empty()) cfg.regularizer = parse_regularizer(regularizer);
      if (!checkpoint.empty()) cfg.run.checkpoint = checkpoint;
      const fs::path dir = run_rlhf(cfg, {force});
      std::cout << "rlhf run (" << format_regularizer(cfg.regularizer) << ") written to "
                << dir.string() << "\n";
    } else if (*eval) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& r : run_eval(run_dir, samples)) out.push_back(to_json(r));
      std::cout << out.dump(2) << "\n";
    } else if (*check) {
      const std::vector<std::string> names =
          which.empty() ? check_names() : std::vector<std::string>{which};
      nlohmann::json out = nlohmann::json::array();
      bool ok = true;
      for (const auto& n : names) {
        const CheckReport rep = run_check(n, check_seed);
        ok = ok && rep.passed();
        out.push_back(rep.to_json());
      }
      std::cout << out.dump(2) << "\n";
      if (!report_path.empty()) std::ofstream(report_path) << out.dump(2) << "\n";
      return ok ? 0 : kCheckFailure;
    } else if (*fit) {
      std::cout << to_json(run_fit(run_dir)).dump(2) << "\n";
    } else if (*plot) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      std::cout << run_plot(dirs, kind).string() << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ValueError& e) {
    // bad --regularizer / option values surface here
    std::cerr << "error: " << e.what() << "\n";
    return *rlhf || *check ? kUsageError : kRunFailure;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kRunFailure;
  }
  return 0;
}
