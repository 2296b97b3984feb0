// End-to-end acceptance run. Pretrains the default 2-mode model, fine-tunes
// it under several regularizers and prints one PASS/FAIL line per criterion.
// Exit status is 0 only when every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "percflow/analysis.hpp"
#include "percflow/checkpoint.hpp"
#include "percflow/checks.hpp"
#include "percflow/config.hpp"
#include "percflow/csv.hpp"
#include "percflow/experiment.hpp"
#include "percflow/grpo.hpp"
#include "percflow/rlhf.hpp"

using namespace percflow;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kZ = 3.0;                 // per-step entropy agreement, SE units
constexpr double kHomogeneityZ = 3.09;     // one-sided p = 0.001 for the spread test
constexpr double kCrnSpread = 1e-9;        // common-noise spread across checkpoints
constexpr double kCollapseRewardGain = 0.1;
constexpr double kPecRewardGain = 0.05;
constexpr double kStdShrink = 0.5;
constexpr int kSeeds = 5;
constexpr int kSeedsNeeded = 4;
constexpr int kEvalSamples = 2000;
constexpr int kEntropyRollouts = 10000;
constexpr int kWindow = 10;                // updates averaged for initial/final std
constexpr double kPcvaeTol = 1e-9;
constexpr double kKlCovTol = 1e-12;
constexpr double kFdTol = 1e-4;
constexpr double kVendiTol = 1e-9;
constexpr double kAdvTol = 1e-5;
constexpr double kFitR2 = 0.8;

int failures = 0;

void report(int id, bool ok, const std::string& text) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", text.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path source(const std::string& rel) { return fs::path(PERCFLOW_SOURCE_DIR) / rel; }

// Wilson-Hilferty upper quantile of chi-square with k dof.
double chi2_upper(int k, double z) {
  const double c = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - c + z * std::sqrt(c), 3);
}

struct Eval {
  double reward = 0.0;
  double coverage = 0.0;
  double h_perc = 0.0;
  std::vector<double> shares;
};

// Fixed evaluation noise so every checkpoint sees the same draws.
Eval evaluate(const VelocityModel& m, const ExperimentConfig& cfg,
              const RewardLandscape& land, const PerceptualMap& map) {
  const NoiseSchedule sch(cfg.schedule);
  std::vector<int> conds(kEvalSamples, 0);
  std::vector<Rng> rngs;
  for (int k = 0; k < kEvalSamples; ++k) {
    rngs.push_back(make_stream(0xacce, {static_cast<std::uint64_t>(k)}));
  }
  const auto tr = rollout_batch(m, sch, conds, rngs);
  Eigen::MatrixXd x(cfg.dataset.dim, kEvalSamples);
  Eval e;
  for (int k = 0; k < kEvalSamples; ++k) {
    x.col(k) = tr[k].final_state;
    e.reward += compute_reward(land, tr[k].final_state, 0) / kEvalSamples;
  }
  const CoverageOptions cov{cfg.rlhf.coverage_radius, cfg.rlhf.coverage_share};
  e.coverage = mode_coverage(x, cfg.dataset, 0, cov);
  e.shares = mode_shares(x, cfg.dataset, 0, cov.radius_multiplier);
  e.h_perc = perceptual_entropy_estimate(tr, map).mean;
  return e;
}

double window_mean(const std::vector<double>& v, bool tail) {
  const int n = std::min<int>(kWindow, static_cast<int>(v.size()));
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += tail ? v[v.size() - 1 - k] : v[k];
  return s / n;
}

struct SeedRun {
  std::uint64_t seed = 0;
  Eval final;
  std::vector<double> reward, std, h_perc;
};

SeedRun fine_tune(ExperimentConfig cfg, const fs::path& out, std::uint64_t seed,
                  const RewardLandscape& land, const PerceptualMap& map) {
  cfg.run.seed = seed;
  cfg.run.output_dir = out.string();
  cfg.run.name = out.filename().string();
  run_rlhf(cfg);
  SeedRun r;
  r.seed = seed;
  r.final = evaluate(load_checkpoint(RunLayout{out}.final_checkpoint()), cfg, land, map);
  const CsvTable t = read_csv(RunLayout{out}.metrics());
  r.reward = t.numeric_column("mean_raw_reward");
  r.std = t.numeric_column("std_raw_reward");
  r.h_perc = t.numeric_column("perc_entropy");
  return r;
}

// Central differences of f over every network parameter.
template <typename F>
Eigen::VectorXd param_fd(const VelocityModel& m, F&& f, double h = 1e-5) {
  Eigen::VectorXd theta = flatten_parameters(m.net);
  Eigen::VectorXd g(theta.size());
  VelocityModel probe = m;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double keep = theta[k];
    theta[k] = keep + h;
    assign_parameters(probe.net, theta);
    const double up = f(probe);
    theta[k] = keep - h;
    assign_parameters(probe.net, theta);
    const double down = f(probe);
    theta[k] = keep;
    g[k] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = fs::temp_directory_path() / "percflow_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  ExperimentConfig pre_cfg = load_config(source("configs/pretrain.yaml"));
  pre_cfg.run.output_dir = (root / "pretrain").string();
  run_pretrain(pre_cfg);
  const VelocityModel pretrained = load_checkpoint(RunLayout{root / "pretrain"}.final_checkpoint());

  ExperimentConfig none_cfg = load_config(source("configs/rlhf_none.yaml"));
  none_cfg.run.checkpoint = (root / "pretrain").string();
  ExperimentConfig pec_cfg = load_config(source("configs/rlhf_pec.yaml"));
  pec_cfg.run.checkpoint = none_cfg.run.checkpoint;
  const RewardLandscape land = build_landscape(none_cfg);
  const std::vector<PerceptualMap> maps = build_maps(none_cfg);
  const PerceptualMap& mlp_map = maps.at(0);
  const NoiseSchedule sch(none_cfg.schedule);
  const Eval before = evaluate(pretrained, none_cfg, land, mlp_map);
  std::printf("pretrained: reward %.4f coverage %.2f shares %.3f/%.3f H_perc %.4f\n",
              before.reward, before.coverage, before.shares[0], before.shares[1],
              before.h_perc);

  // 1. Per-step policy entropy stays at its closed form across a long run.
  {
    ExperimentConfig c = none_cfg;
    c.run.output_dir = (root / "entropy_run").string();
    c.run.seed = 11;
    c.rlhf.num_updates = 500;
    c.rlhf.checkpoint_every = 100;
    run_rlhf(c);
    const RunManifest m = RunManifest::load(RunLayout{root / "entropy_run"});
    std::vector<VelocityModel> ckpts;
    for (const auto& e : m.data()["checkpoints"]) {
      if (e["path"] == "checkpoints/final.json") continue;
      ckpts.push_back(load_checkpoint(root / "entropy_run" / e["path"].get<std::string>()));
    }
    bool within = true;
    double worst_z = 0.0, crn_spread = 0.0;
    std::vector<double> first;
    double chi2 = 0.0;
    for (std::size_t c_idx = 0; c_idx < ckpts.size(); ++c_idx) {
      const CheckReport rep = check_step_entropy(ckpts[c_idx], sch, 0, kEntropyRollouts, 1);
      for (std::size_t i = 0; i < rep.items.size(); ++i) {
        const auto& it = rep.items[i];
        within = within && it.passed;
        worst_z = std::max(worst_z, std::abs(it.measured - it.expected) / (it.tolerance / kZ));
        if (c_idx == 0) first.push_back(it.measured);
        crn_spread = std::max(crn_spread, std::abs(it.measured - first[i]));
      }
    }
    // Independent noise per checkpoint: pooled chi-square of the deviations
    // from the per-step mean.
    const int steps = sch.num_steps();
    std::vector<std::vector<MonteCarloEstimate>> ind;
    for (std::size_t c_idx = 0; c_idx < ckpts.size(); ++c_idx) {
      Rng rng = make_stream(0x5b7ead, {c_idx});
      ind.push_back(mc_step_entropies(ckpts[c_idx], sch, 0, kEntropyRollouts, rng));
    }
    for (int i = 0; i < steps; ++i) {
      double w = 0.0, wm = 0.0;
      for (const auto& e : ind) {
        const double wi = 1.0 / (e[i].standard_error * e[i].standard_error);
        w += wi;
        wm += wi * e[i].mean;
      }
      wm /= w;
      for (const auto& e : ind) chi2 += std::pow((e[i].mean - wm) / e[i].standard_error, 2);
    }
    const int dof = steps * static_cast<int>(ckpts.size() - 1);
    const double crit = chi2_upper(dof, kHomogeneityZ);
    const bool ok = ckpts.size() >= 5 && within && crn_spread <= kCrnSpread && chi2 <= crit;
    report(1, ok,
           std::to_string(ckpts.size()) + " checkpoints, max |z| " + fmt("%.2f", worst_z) +
               ", common-noise spread " + fmt("%.1e", crn_spread) + ", chi2 " +
               fmt("%.1f", chi2) + " / crit " + fmt("%.1f", crit) + " (dof " +
               std::to_string(dof) + ")");
  }

  // 2 and 3. Twin-peak fine-tuning without and with the perceptual constraint.
  std::vector<SeedRun> none_runs, pec_runs;
  for (int s = 1; s <= kSeeds; ++s) {
    none_runs.push_back(fine_tune(none_cfg, root / ("none_" + std::to_string(s)), s, land, mlp_map));
    pec_runs.push_back(fine_tune(pec_cfg, root / ("pec_" + std::to_string(s)), s, land, mlp_map));
  }
  {
    int hits = 0;
    std::string detail;
    for (const auto& r : none_runs) {
      const double gain = r.final.reward - before.reward;
      const double shrink = window_mean(r.std, true) / window_mean(r.std, false);
      const bool ok = gain >= kCollapseRewardGain && r.final.coverage == 0.5 && shrink < kStdShrink;
      hits += ok;
      std::printf("  none seed %llu: dR %+.3f coverage %.2f shares %.3f/%.3f std ratio %.3f %s\n",
                  static_cast<unsigned long long>(r.seed), gain, r.final.coverage,
                  r.final.shares[0], r.final.shares[1], shrink, ok ? "collapsed" : "-");
    }
    report(2, hits >= kSeedsNeeded,
           std::to_string(hits) + "/" + std::to_string(kSeeds) +
               " seeds collapse to one mode with reward gain >= 0.1 and std halved");
  }
  {
    int hits = 0, higher = 0;
    for (int k = 0; k < kSeeds; ++k) {
      const auto& r = pec_runs[k];
      const double gain = r.final.reward - before.reward;
      const bool ok = r.final.coverage == 1.0 && gain >= kPecRewardGain;
      hits += ok;
      higher += r.final.h_perc > none_runs[k].final.h_perc;
      std::printf("  pec seed %llu: dR %+.3f coverage %.2f shares %.3f/%.3f H_perc %.4f (none %.4f)\n",
                  static_cast<unsigned long long>(r.seed), gain, r.final.coverage,
                  r.final.shares[0], r.final.shares[1], r.final.h_perc,
                  none_runs[k].final.h_perc);
    }
    report(3, hits >= kSeedsNeeded && higher >= kSeedsNeeded,
           std::to_string(hits) + "/" + std::to_string(kSeeds) +
               " seeds keep both modes with reward gain >= 0.05; H_perc above the none run in " +
               std::to_string(higher) + "/" + std::to_string(kSeeds));
  }

  // 4. pcvae through the identity map reproduces the unregularized run.
  {
    const PerceptualMap id = PerceptualMap::identity(2);
    RlhfOptions o;
    o.num_updates = 20;
    o.learning_rate = none_cfg.rlhf.learning_rate;
    o.seed = 3;
    VelocityModel a = pretrained;
    rlhf_train(a, none_cfg.dataset, land, RegularizerSpec{}, sch, {nullptr, &id}, o);
    double worst = 0.0;
    for (double lambda : {0.01, 0.1, 1.0, 10.0}) {
      RegularizerSpec spec = parse_regularizer("pcvae:map=identity");
      spec.lambda = lambda;
      VelocityModel b = pretrained;
      rlhf_train(b, none_cfg.dataset, land, spec, sch, {&id, &id}, o);
      worst = std::max(worst, (flatten_parameters(a.net) - flatten_parameters(b.net))
                                  .lpNorm<Eigen::Infinity>());
    }
    report(4, worst <= kPcvaeTol,
           "max parameter gap over lambda in {0.01, 0.1, 1, 10}: " + fmt("%.1e", worst));
  }

  // Shared batch for the gradient criteria.
  const std::vector<int> group_conds(4, 0);
  std::vector<RolloutGroup> groups = collect_groups(pretrained, sch, land, group_conds, 4, 21, 0);
  assign_advantages(groups, RegularizerSpec{}, nullptr);
  const RlhfContext ctx{&sch, nullptr, nullptr};

  // 5. The analytic policy-entropy bonus leaves every gradient entry unchanged.
  {
    const Eigen::VectorXd base = flatten_gradients(rlhf_loss(pretrained, groups, {}, ctx).grads);
    bool same = true;
    double loss_shift = 0.0;
    for (double w : {0.05, 1.0, 100.0}) {
      RegularizerSpec spec = parse_regularizer("entropy_reg");
      spec.entropy_weight = w;
      const LossTerms lt = rlhf_loss(pretrained, groups, spec, ctx);
      same = same && flatten_gradients(lt.grads) == base;
      loss_shift = std::max(loss_shift, std::abs(lt.loss - rlhf_loss(pretrained, groups, {}, ctx).loss));
    }
    report(5, same && base.norm() > 0.0,
           std::string("gradient bit-identical for weights {0.05, 1, 100}: ") +
               (same ? "yes" : "no") + ", loss shifts by up to " + fmt("%.3g", loss_shift));
  }

  // 6. Advantage-weighted score gradient against the tilted-target identity.
  {
    const CheckReport rep = check_corollary1(100000, 1);
    std::string detail;
    for (const auto& it : rep.items) {
      detail += it.name + " cos " + fmt("%.4f", it.detail.value("cosine", 0.0)) + "; ";
    }
    report(6, rep.passed(), detail);
  }

  // 7. Variance lemma and the linear-map trace identity.
  {
    const CheckReport vl = run_check("variance-lemma", 1);
    const CheckReport r1 = run_check("remark1", 1);
    double worst = 0.0;
    for (const auto& it : r1.items) {
      worst = std::max(worst, std::abs(it.measured - it.expected) / std::abs(it.expected));
    }
    report(7, vl.passed() && r1.passed(),
           std::string("variance lemma ") + (vl.passed() ? "ok" : "off") +
               ", trace identity worst rel. gap " + fmt("%.3f", worst));
  }

  // 8. Entropy-reward fit on the logged series of the unregularized runs.
  {
    int hits = 0;
    for (const auto& r : none_runs) {
      const FitResult f = entropy_reward_fit(r.h_perc, r.reward);
      const bool ok = f.a > 0.0 && f.r_squared >= kFitR2;
      hits += ok;
      std::printf("  fit seed %llu: a %.4g b %.4g r2 %.3f\n",
                  static_cast<unsigned long long>(r.seed), f.a, f.b, f.r_squared);
    }
    report(8, hits >= kSeedsNeeded,
           std::to_string(hits) + "/" + std::to_string(kSeeds) + " runs with a > 0 and r2 >= 0.8");
  }

  // 9. Covariance-selected masking and penalty.
  {
    bool card = true;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n01;
    for (int n : {4, 8, 17, 100}) {
      Eigen::VectorXd s(n);
      for (int k = 0; k < n; ++k) s[k] = n01(rng);
      const auto mask = clip_cov_mask(s, 0.25);
      card = card && std::count(mask.begin(), mask.end(), true) == n / 4;
    }
    const std::vector<Eigen::VectorXd> mu_new{Eigen::Vector2d(0.3, -0.4), Eigen::Vector2d(1, 1),
                                              Eigen::Vector2d(2, 0), Eigen::Vector2d(0, 5)};
    const std::vector<Eigen::VectorXd> mu_old(4, Eigen::VectorXd::Zero(2));
    const std::vector<double> s2{0.02, 0.02, 0.02, 0.02};
    const double beta = 2.0;
    const double kl = kl_cov_penalty(Eigen::Vector4d(5, -1, 0.5, 2), 0.25, beta, mu_new, mu_old, s2);
    const double expect = beta * 0.25 / (2 * 0.02);
    const bool kl_ok = std::abs(kl - expect) <= kKlCovTol;

    const RegularizerSpec spec = parse_regularizer("clip_cov:rate=0.25");
    const LossTerms lt = rlhf_loss(pretrained, groups, spec, ctx);
    const auto mask = clip_cov_mask(lt.cov_scores, 0.25);
    const Eigen::VectorXd numeric = param_fd(pretrained, [&](const VelocityModel& m) {
      double total = 0.0;
      std::size_t j = 0;
      for (const auto& g : groups) {
        for (std::size_t k = 0; k < g.members.size(); ++k) {
          for (const auto& st : g.members[k].steps) {
            if (!mask[j++]) {
              const int i = st.step_index;
              const double lp = transition_logprob(
                  st.state_out,
                  posterior_mean(m, st.state_in, st.time, sch.dt(i), sch.sigma2(i), g.condition),
                  st.sigma2_dt);
              total += std::exp(lp - st.log_prob) * g.advantages[static_cast<Eigen::Index>(k)];
            }
          }
        }
      }
      return -total / static_cast<double>(j);
    });
    const double rel = (flatten_gradients(lt.grads) - numeric).norm() / numeric.norm();
    report(9, card && kl_ok && rel < kFdTol,
           std::string("mask sizes ") + (card ? "ok" : "wrong") + ", kl_cov " + fmt("%.12g", kl) +
               " vs " + fmt("%.12g", expect) + ", masked-gradient FD rel. err " + fmt("%.1e", rel));
  }

  // 10. Numerical building blocks.
  {
    const CheckReport grads = check_gradients(1);
    Eigen::MatrixXd two(2, 4);
    two << 1, 1, 0, 0,
           0, 0, 1, 1;
    const double v1 = vendi_score(Eigen::MatrixXd::Constant(3, 5, 0.4));
    const double v3 = vendi_score(Eigen::MatrixXd::Identity(3, 3));
    const double v2 = vendi_score(two);
    const bool vendi_ok = std::abs(v1 - 1) <= kVendiTol && std::abs(v3 - 3) <= kVendiTol &&
                          std::abs(v2 - 2) <= kVendiTol;
    const Eigen::VectorXd adv = group_advantage(Eigen::Vector3d(1, 2, 3));
    const bool adv_ok = (adv - Eigen::Vector3d(-1.22474, 0, 1.22474)).lpNorm<Eigen::Infinity>() <= kAdvTol;
    double worst = 0.0;
    for (const auto& it : grads.items) worst = std::max(worst, it.measured);
    report(10, grads.passed() && vendi_ok && adv_ok,
           "worst FD rel. err " + fmt("%.1e", worst) + ", vendi " + fmt("%.9f", v1) + "/" +
               fmt("%.9f", v2) + "/" + fmt("%.9f", v3) + ", advantages " + fmt("%.5f", adv[0]) +
               " " + fmt("%.5f", adv[1]) + " " + fmt("%.5f", adv[2]));
  }

  std::printf("%d of 10 criteria failed; %.0f s\n", failures,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return failures == 0 ? 0 : 1;
}
