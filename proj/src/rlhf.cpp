#include "percflow/rlhf.hpp"

#include <algorithm>
#include <cmath>

#include "percflow/errors.hpp"
#include "percflow/grpo.hpp"

namespace percflow {

std::vector<RolloutGroup> collect_groups(const VelocityModel& model,
                                         const NoiseSchedule& sch,
                                         const RewardLandscape& land,
                                         std::span<const int> group_conditions,
                                         int group_size, std::uint64_t seed,
                                         std::uint64_t update) {
  if (group_size < 2) throw GroupSizeError("group size must be at least 2");
  if (group_conditions.empty()) throw ValueError("no groups requested");
  const auto G = group_conditions.size();
  std::vector<int> conds;
  std::vector<Rng> rngs;
  conds.reserve(G * group_size);
  rngs.reserve(G * group_size);
  for (std::size_t g = 0; g < G; ++g) {
    for (int k = 0; k < group_size; ++k) {
      conds.push_back(group_conditions[g]);
      rngs.push_back(make_stream(seed, {update, g, static_cast<std::uint64_t>(k)}));
    }
  }
  auto trajs = rollout_batch(model, sch, conds, rngs);
  std::vector<RolloutGroup> groups(G);
  for (std::size_t g = 0; g < G; ++g) {
    auto& grp = groups[g];
    grp.condition = group_conditions[g];
    grp.raw_rewards.resize(group_size);
    for (int k = 0; k < group_size; ++k) {
      grp.members.push_back(std::move(trajs[g * group_size + k]));
      grp.raw_rewards[k] =
          compute_reward(land, grp.members.back().final_state, grp.condition);
    }
  }
  return groups;
}

void assign_advantages(std::vector<RolloutGroup>& groups,
                       const RegularizerSpec& spec, const PerceptualMap* map) {
  const bool shaped = spec.kind == RegularizerKind::kPec ||
                      spec.kind == RegularizerKind::kPcvae;
  if (shaped && map == nullptr) {
    throw ValueError(to_string(spec.kind) + " needs a perceptual map");
  }
  for (auto& grp : groups) {
    const auto K = static_cast<Eigen::Index>(grp.members.size());
    grp.shaped_rewards = grp.raw_rewards;
    if (shaped) {
      for (Eigen::Index k = 0; k < K; ++k) {
        const auto pts = perceptual_transitions(grp.members[k], *map);
        std::vector<double> perc, gen;
        for (const auto& p : pts) {
          perc.push_back(p.log_p_perc);
          gen.push_back(p.log_p_gen);
        }
        grp.shaped_rewards[k] =
            spec.kind == RegularizerKind::kPec
                ? pec_shaped_reward(grp.raw_rewards[k], perc, spec.lambda)
                : pcvae_shaped_reward(grp.raw_rewards[k], perc, gen, spec.lambda);
      }
    }
    grp.advantages = group_advantage(grp.shaped_rewards);
  }
}

LossTerms rlhf_loss(const VelocityModel& model,
                    std::span<const RolloutGroup> groups,
                    const RegularizerSpec& spec, const RlhfContext& ctx) {
  if (groups.empty()) throw ValueError("empty group set");
  if (ctx.schedule == nullptr) throw ValueError("loss needs the noise schedule");
  const NoiseSchedule& sch = *ctx.schedule;
  const int d = model.dim;

  // Flatten every transition of every trajectory into one batch.
  std::vector<const TransitionStep*> steps;
  std::vector<double> adv, times;
  std::vector<int> conds;
  for (const auto& grp : groups) {
    if (grp.advantages.size() != static_cast<Eigen::Index>(grp.members.size())) {
      throw ValueError("group advantages were not assigned");
    }
    for (std::size_t k = 0; k < grp.members.size(); ++k) {
      for (const auto& st : grp.members[k].steps) {
        steps.push_back(&st);
        adv.push_back(grp.advantages[static_cast<Eigen::Index>(k)]);
        times.push_back(st.time);
        conds.push_back(grp.condition);
      }
    }
  }
  const auto N = static_cast<Eigen::Index>(steps.size());
  const double inv_n = 1.0 / static_cast<double>(N);
  Eigen::MatrixXd xs(d, N);
  for (Eigen::Index j = 0; j < N; ++j) xs.col(j) = steps[j]->state_in;

  MlpCache cache;
  const Eigen::MatrixXd v = model.velocity(xs, times, conds, &cache);
  Eigen::MatrixXd mu(d, N);
  Eigen::VectorXd logp(N), jac(N);
  for (Eigen::Index j = 0; j < N; ++j) {
    const auto& st = *steps[j];
    const int i = st.step_index;
    const double dt = sch.dt(i), s2 = sch.sigma2(i);
    mu.col(j) = posterior_mean_from_velocity(st.state_in, v.col(j), st.time, dt, s2);
    logp[j] = transition_logprob(st.state_out, mu.col(j), st.sigma2_dt);
    jac[j] = mean_velocity_jacobian(st.time, dt, s2);
  }

  LossTerms out;
  const Eigen::VectorXd advs = Eigen::Map<const Eigen::VectorXd>(adv.data(), N);
  out.cov_scores = covariance_scores(logp, advs);
  std::vector<bool> masked(N, false);
  if (spec.kind == RegularizerKind::kClipCov) {
    masked = clip_cov_mask(out.cov_scores, spec.rate);
  }

  // dLoss/dmu, one column per transition.
  Eigen::MatrixXd g_mu = Eigen::MatrixXd::Zero(d, N);
  const double eps_low = spec.surrogate_eps_low();
  const double eps_high = spec.surrogate_eps_high();
  double surrogate = 0.0, ratio_sum = 0.0;
  long clipped = 0;
  for (Eigen::Index j = 0; j < N; ++j) {
    const auto& st = *steps[j];
    const double rho = ratio(logp[j], st.log_prob, &out.ratio_warnings);
    const bool clamped = rho == kRatioMin || rho == kRatioMax;
    const SurrogateTerm term = clipped_surrogate(rho, advs[j], eps_low, eps_high);
    surrogate += term.value;
    ratio_sum += rho;
    clipped += term.clipped ? 1 : 0;
    if (term.clipped || masked[j] || clamped) continue;
    const double dloss_dlogp = -rho * advs[j] * inv_n;
    g_mu.col(j) += dloss_dlogp * (st.state_out - mu.col(j)) / st.sigma2_dt;
  }
  out.loss = -surrogate * inv_n;
  out.mean_ratio = ratio_sum * inv_n;
  out.clipped_frac = static_cast<double>(clipped) * inv_n;

  switch (spec.kind) {
    case RegularizerKind::kKlRef: {
      if (ctx.reference == nullptr) throw ValueError("kl_ref needs a reference model");
      const Eigen::MatrixXd v_ref = ctx.reference->velocity(xs, times, conds);
      for (Eigen::Index j = 0; j < N; ++j) {
        const auto& st = *steps[j];
        const int i = st.step_index;
        const Eigen::VectorXd mu_ref = posterior_mean_from_velocity(
            st.state_in, v_ref.col(j), st.time, sch.dt(i), sch.sigma2(i));
        out.loss += spec.kl_weight * inv_n *
                    kl_ref_penalty(mu.col(j), mu_ref, st.sigma2_dt);
        g_mu.col(j) += spec.kl_weight * inv_n * (mu.col(j) - mu_ref) / st.sigma2_dt;
      }
      break;
    }
    case RegularizerKind::kKlCov: {
      for (int j : top_fraction(out.cov_scores, spec.rate)) {
        const auto& st = *steps[j];
        out.loss += spec.beta * inv_n * kl_ref_penalty(mu.col(j), st.mean, st.sigma2_dt);
        g_mu.col(j) += spec.beta * inv_n * (mu.col(j) - st.mean) / st.sigma2_dt;
      }
      break;
    }
    case RegularizerKind::kEntropyReg: {
      // Reparameterized -log p(mu + sqrt(s2dt) eps | mu) in the chosen space.
      // In generation space the sample and the mean move together, so the two
      // pullbacks are the same vector and cancel.
      PerceptualMap id = PerceptualMap::identity(d);
      const PerceptualMap* phi = &id;
      if (spec.entropy_space == EntropySpace::kPerceptual) {
        if (ctx.map == nullptr) throw ValueError("perceptual entropy needs a map");
        phi = ctx.map;
      }
      Eigen::MatrixXd xr(d, N);
      for (Eigen::Index j = 0; j < N; ++j) {
        xr.col(j) = mu.col(j) + std::sqrt(steps[j]->sigma2_dt) * steps[j]->noise;
      }
      const Eigen::MatrixXd zx = phi->apply_batch(xr);
      const Eigen::MatrixXd zm = phi->apply_batch(mu);
      Eigen::MatrixXd gz = zx - zm;
      double h = 0.0;
      for (Eigen::Index j = 0; j < N; ++j) {
        const double s2dt = steps[j]->sigma2_dt;
        h -= perceptual_logprob(zx.col(j), zm.col(j), s2dt);
        gz.col(j) /= s2dt;
      }
      out.loss -= spec.entropy_weight * inv_n * h;
      const Eigen::MatrixXd dh_dmu = phi->pullback(xr, gz) - phi->pullback(mu, gz);
      g_mu -= spec.entropy_weight * inv_n * dh_dmu;
      break;
    }
    default:
      break;
  }

  const Eigen::MatrixXd g_v = g_mu * jac.asDiagonal();
  out.grads = mlp_backward(model.net, cache, g_v);
  return out;
}

UpdateStats rlhf_step(VelocityModel& model, AdamState& adam,
                      std::span<const RolloutGroup> groups,
                      const RegularizerSpec& spec, const RlhfContext& ctx,
                      int inner_updates) {
  if (groups.empty()) throw ValueError("empty group set");
  if (inner_updates < 1) throw ValueError("inner_updates must be positive");
  UpdateStats stats;
  for (int u = 0; u < inner_updates; ++u) {
    LossTerms lt = rlhf_loss(model, groups, spec, ctx);
    if (!std::isfinite(lt.loss)) throw DivergenceError("non-finite RLHF loss", -1);
    if (u == 0) {
      stats.clipped_frac = lt.clipped_frac;
      stats.mean_ratio = lt.mean_ratio;
      std::vector<double> sc(lt.cov_scores.data(),
                             lt.cov_scores.data() + lt.cov_scores.size());
      std::sort(sc.begin(), sc.end());
      const auto q = [&](double p) {
        return sc[static_cast<std::size_t>(p * static_cast<double>(sc.size() - 1))];
      };
      stats.cov_q10 = q(0.1);
      stats.cov_q50 = q(0.5);
      stats.cov_q90 = q(0.9);
    }
    stats.ratio_warnings += lt.ratio_warnings;
    try {
      adam_step(model.net, lt.grads, adam);
    } catch (const NonFiniteGradientError& e) {
      throw DivergenceError(e.what(), -1);
    }
  }
  double raw = 0.0, shaped = 0.0, sd = 0.0;
  long count = 0;
  for (const auto& grp : groups) {
    raw += grp.raw_rewards.sum();
    shaped += grp.shaped_rewards.sum();
    count += grp.raw_rewards.size();
    const double m = grp.raw_rewards.mean();
    sd += std::sqrt((grp.raw_rewards.array() - m).square().mean());
  }
  stats.mean_raw_reward = raw / count;
  stats.mean_shaped_reward = shaped / count;
  stats.std_raw_reward = sd / static_cast<double>(groups.size());
  return stats;
}

void RlhfOptions::validate() const {
  if (group_size < 2) throw GroupSizeError("group size must be at least 2");
  if (groups_per_step < 1 || num_updates < 0 || inner_updates < 1 ||
      checkpoint_every < 1) {
    throw ValueError("groups_per_step, inner_updates and checkpoint_every must "
                     "be positive and num_updates non-negative");
  }
  if (!(learning_rate > 0.0)) throw ValueError("learning_rate must be positive");
  if (conditions.empty()) throw ValueError("no training conditions");
}

void fill_batch_metrics(UpdateStats& stats, std::span<const RolloutGroup> groups,
                        const GmmDataset& ds, const PerceptualMap& metric_map,
                        const NoiseSchedule& sch, const CoverageOptions& cov) {
  std::vector<Trajectory> all;
  std::map<int, std::vector<Eigen::VectorXd>> finals;
  double pmax = 0.0, pmin = 0.0;
  for (const auto& grp : groups) {
    for (const auto& t : grp.members) {
      all.push_back(t);
      finals[grp.condition].push_back(t.final_state);
    }
    const auto ex = advantage_prob_extremes(grp.advantages);
    pmax += ex.p_max;
    pmin += ex.p_min;
  }
  stats.p_adv_max = pmax / groups.size();
  stats.p_adv_min = pmin / groups.size();
  stats.perc_entropy = perceptual_entropy_estimate(all, metric_map).mean;

  double h = 0.0;
  for (int i = 1; i <= sch.num_steps(); ++i) {
    h += analytic_step_entropy(ds.dim, schedule_sigma2dt(sch, i));
  }
  stats.analytic_entropy = h / sch.num_steps();

  double coverage = 0.0;
  Eigen::MatrixXd feats(metric_map.in_dim(), static_cast<Eigen::Index>(all.size()));
  for (std::size_t k = 0; k < all.size(); ++k) {
    feats.col(static_cast<Eigen::Index>(k)) = all[k].final_state;
  }
  for (const auto& [c, xs] : finals) {
    Eigen::MatrixXd m(ds.dim, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t k = 0; k < xs.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = xs[k];
    coverage += mode_coverage(m, ds, c, cov);
  }
  stats.mode_coverage = coverage / static_cast<double>(finals.size());
  stats.vendi = vendi_score(metric_map.apply_batch(feats));
}

std::vector<UpdateStats> rlhf_train(VelocityModel& model, const GmmDataset& ds,
                                    const RewardLandscape& land,
                                    const RegularizerSpec& spec,
                                    const NoiseSchedule& sch,
                                    const RlhfMaps& maps,
                                    const RlhfOptions& opts,
                                    const RlhfCallbacks& callbacks) {
  opts.validate();
  spec.validate();
  for (int c : opts.conditions) {
    model.check_condition(c);
    if (!land.by_condition.contains(c)) {
      throw ConditionError("no reward landscape for training condition " +
                           ds.condition(c).name);
    }
  }
  const PerceptualMap identity = PerceptualMap::identity(model.dim);
  const PerceptualMap& metric_map = maps.metrics ? *maps.metrics : identity;
  const VelocityModel reference = model;
  RlhfContext ctx{&sch, &reference, maps.regularizer};
  AdamOptions ao;
  ao.learning_rate = opts.learning_rate;
  AdamState adam = AdamState::for_net(model.net, ao);

  std::vector<int> group_conds(opts.groups_per_step);
  for (int g = 0; g < opts.groups_per_step; ++g) {
    group_conds[g] = opts.conditions[g % opts.conditions.size()];
  }
  std::vector<UpdateStats> rows;
  if (callbacks.on_checkpoint) callbacks.on_checkpoint(0, model);
  for (int step = 1; step <= opts.num_updates; ++step) {
    auto groups = collect_groups(model, sch, land, group_conds, opts.group_size,
                                 opts.seed, static_cast<std::uint64_t>(step));
    assign_advantages(groups, spec, maps.regularizer);
    UpdateStats st = rlhf_step(model, adam, groups, spec, ctx, opts.inner_updates);
    st.step = step;
    fill_batch_metrics(st, groups, ds, metric_map, sch, opts.coverage);
    rows.push_back(st);
    if (callbacks.on_stats) callbacks.on_stats(st);
    if (callbacks.on_checkpoint &&
        (step % opts.checkpoint_every == 0 || step == opts.num_updates)) {
      callbacks.on_checkpoint(step, model);
    }
  }
  return rows;
}

}  // namespace percflow
