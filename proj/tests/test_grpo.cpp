#include <cmath>

#include <gtest/gtest.h>

#include "percflow/errors.hpp"
#include "percflow/grpo.hpp"
#include "percflow/regularizer.hpp"
#include "percflow/reward.hpp"
#include "percflow/rlhf.hpp"

using namespace percflow;

namespace {

RewardLandscape twin_peaks(double scale = 0.5) {
  RewardLandscape land;
  land.by_condition[0] = {RewardKind::kTwinPeaks, {{-3, 0}, {3, 0}}, scale, {}};
  return land;
}

// Small random policy; biases shifted so the outputs are not symmetric.
VelocityModel small_model(std::uint64_t seed) {
  Rng rng = make_stream(seed);
  VelocityModel m = VelocityModel::create(2, 2, ModelSpec{{16}, Activation::kTanh, 2}, rng);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& b : m.net.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = u(rng);
  }
  return m;
}

struct Fixture {
  VelocityModel model = small_model(3);
  NoiseSchedule sch{ScheduleSpec{}};
  RewardLandscape land = twin_peaks(2.0);
  std::vector<RolloutGroup> groups;

  explicit Fixture(const RegularizerSpec& spec = {}, int num_groups = 2) {
    const std::vector<int> conds(num_groups, 0);
    groups = collect_groups(model, sch, land, conds, 4, 17, 0);
    assign_advantages(groups, spec, nullptr);
  }
};

double transition_logp(const VelocityModel& m, const NoiseSchedule& sch,
                       const TransitionStep& st, int c) {
  const int i = st.step_index;
  return transition_logprob(st.state_out,
                            posterior_mean(m, st.state_in, st.time, sch.dt(i), sch.sigma2(i), c),
                            st.sigma2_dt);
}

// -(1/N) sum_j rho_j A_j over transitions with keep[j]; no clipping (valid
// near theta_old).
double unclipped_objective(const VelocityModel& m, const Fixture& f,
                           const std::vector<bool>& keep) {
  double total = 0.0;
  std::size_t j = 0, n = 0;
  for (const auto& g : f.groups) {
    for (std::size_t k = 0; k < g.members.size(); ++k) {
      for (const auto& st : g.members[k].steps) {
        if (keep[j]) {
          total += std::exp(transition_logp(m, f.sch, st, g.condition) - st.log_prob) *
                   g.advantages[static_cast<Eigen::Index>(k)];
        }
        ++j;
        ++n;
      }
    }
  }
  return -total / static_cast<double>(n);
}

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

TEST(Reward, Examples) {
  EXPECT_DOUBLE_EQ(evaluate_reward({RewardKind::kPeak, {{3, 0}}, 1.0, {}}, Eigen::Vector2d(3, 0)), 1.0);
  EXPECT_DOUBLE_EQ(compute_reward(twin_peaks(1.0), Eigen::Vector2d(-3, 0), 0), 1.0);
  EXPECT_DOUBLE_EQ(evaluate_reward({RewardKind::kLinear, {}, 1.0, {1, 0}}, Eigen::Vector2d(0.5, 7)), 0.5);
  EXPECT_NEAR(compute_reward(twin_peaks(1.0), Eigen::Vector2d(3, 1), 0), std::exp(-1.0), 1e-15);
  EXPECT_THROW(compute_reward(twin_peaks(), Eigen::Vector2d(0, 0), 1), ConditionError);
}

TEST(GroupAdvantage, Examples) {
  const Eigen::VectorXd a = group_advantage(Eigen::Vector3d(1, 2, 3));
  EXPECT_NEAR(a[0], -1.22474, 1e-5);
  EXPECT_NEAR(a[1], 0.0, 1e-15);
  EXPECT_NEAR(a[2], 1.22474, 1e-5);
  EXPECT_TRUE(group_advantage(Eigen::Vector4d(5, 5, 5, 5)).isZero(0.0));
  EXPECT_THROW(group_advantage(Eigen::VectorXd::Ones(1)), GroupSizeError);
}

TEST(GroupAdvantage, AffineInvariantAndStandardized) {
  const Eigen::VectorXd r = (Eigen::VectorXd(6) << 0.3, -1.0, 2.5, 0.0, 0.7, 1.1).finished();
  const Eigen::VectorXd a = group_advantage(r);
  EXPECT_TRUE(group_advantage((3.5 * r.array() - 2.0).matrix()).isApprox(a, 1e-9));
  EXPECT_NEAR(a.mean(), 0.0, 1e-12);
  EXPECT_NEAR(std::sqrt(a.array().square().mean()), 1.0, 1e-12);
}

TEST(Ratio, ExamplesAndClamp) {
  EXPECT_DOUBLE_EQ(ratio(-3.2, -3.2), 1.0);
  EXPECT_NEAR(ratio(std::log(2.0), 0.0), 2.0, 1e-15);
  std::int64_t warnings = 0;
  EXPECT_EQ(ratio(-100.0, 0.0, &warnings), kRatioMin);
  EXPECT_EQ(warnings, 1);
  EXPECT_EQ(ratio(100.0, 0.0, &warnings), kRatioMax);
  EXPECT_EQ(warnings, 2);
}

TEST(ClippedSurrogate, Examples) {
  const SurrogateTerm on = clipped_surrogate(1.0, -0.7, 0.2, 0.2);
  EXPECT_DOUBLE_EQ(on.value, -0.7);
  EXPECT_FALSE(on.clipped);
  const SurrogateTerm up = clipped_surrogate(1.3, 1.0, 0.2, 0.2);
  EXPECT_NEAR(up.value, 1.2, 1e-15);
  EXPECT_TRUE(up.clipped);
  const SurrogateTerm neg = clipped_surrogate(1.3, -1.0, 0.2, 0.2);
  EXPECT_DOUBLE_EQ(neg.value, -1.3);
  EXPECT_FALSE(neg.clipped);
  // asymmetric bounds
  EXPECT_NEAR(clipped_surrogate(1.5, 1.0, 0.2, 0.3).value, 1.3, 1e-15);
  EXPECT_NEAR(clipped_surrogate(0.5, -1.0, 0.2, 0.3).value, -0.8, 1e-15);
}

TEST(KlRefPenalty, Examples) {
  const Eigen::Vector2d mu(0.4, -0.2);
  EXPECT_EQ(kl_ref_penalty(mu, mu, 0.01), 0.0);
  EXPECT_NEAR(kl_ref_penalty(Eigen::Vector2d(0.1, 0), Eigen::Vector2d::Zero(), 0.01), 0.5, 1e-12);
  EXPECT_NEAR(kl_ref_penalty(Eigen::Vector2d(0.2, 0), Eigen::Vector2d::Zero(), 0.01), 2.0, 1e-12);
}

TEST(CovarianceScores, Examples) {
  const Eigen::VectorXd s = covariance_scores(Eigen::Vector2d(-1, -2), Eigen::Vector2d(1, -1));
  EXPECT_NEAR(s[0], 0.5, 1e-15);
  EXPECT_NEAR(s[1], 0.5, 1e-15);
  EXPECT_TRUE(covariance_scores(Eigen::Vector3d::Constant(-4.0), Eigen::Vector3d(1, 2, 3)).isZero(0.0));
}

TEST(CovarianceScores, MeanIsTwoPassCovariance) {
  Rng rng = make_stream(4);
  std::normal_distribution<double> n01;
  Eigen::VectorXd lp(50), a(50);
  for (int i = 0; i < 50; ++i) {
    lp[i] = n01(rng) - 3.0;
    a[i] = 0.5 * lp[i] + n01(rng);
  }
  double ml = 0, ma = 0;
  for (int i = 0; i < 50; ++i) { ml += lp[i]; ma += a[i]; }
  ml /= 50;
  ma /= 50;
  double cov = 0;
  for (int i = 0; i < 50; ++i) cov += (lp[i] - ml) * (a[i] - ma);
  cov /= 50;
  EXPECT_NEAR(covariance_scores(lp, a).mean(), cov, 1e-12);
}

TEST(ClipCovMask, CardinalityAndTies) {
  for (int n : {4, 8, 17, 100}) {
    const Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(n, -1.0, 1.0);
    const auto mask = clip_cov_mask(s, 0.25);
    EXPECT_EQ(std::count(mask.begin(), mask.end(), true), n / 4) << n;
  }
  const auto tie = clip_cov_mask(Eigen::VectorXd::Zero(8), 0.25);
  EXPECT_TRUE(tie[0] && tie[1]);
  EXPECT_EQ(std::count(tie.begin(), tie.end(), true), 2);
  const auto top = top_fraction((Eigen::VectorXd(5) << 0.1, 0.9, -0.3, 0.9, 0.5).finished(), 0.5);
  EXPECT_EQ(top, (std::vector<int>{1, 3}));
}

TEST(KlCovPenalty, Examples) {
  const std::vector<Eigen::VectorXd> mu_new{Eigen::Vector2d(0.1, 0), Eigen::Vector2d(5, 5)};
  const std::vector<Eigen::VectorXd> mu_old{Eigen::Vector2d(0, 0), Eigen::Vector2d(0, 0)};
  const std::vector<double> s2{0.01, 0.01};
  const Eigen::Vector2d scores(2.0, -1.0);
  EXPECT_EQ(kl_cov_penalty(scores, 0.5, 0.0, mu_new, mu_old, s2), 0.0);
  EXPECT_NEAR(kl_cov_penalty(scores, 0.5, 3.0, mu_new, mu_old, s2), 3.0 * 0.5, 1e-12);
  EXPECT_EQ(kl_cov_penalty(scores, 0.5, 3.0, mu_old, mu_old, s2), 0.0);
}

TEST(Regularizer, ParseExamples) {
  const RegularizerSpec pec = parse_regularizer("pec:lambda=0.05");
  EXPECT_EQ(pec.kind, RegularizerKind::kPec);
  EXPECT_DOUBLE_EQ(pec.lambda, 0.05);
  const RegularizerSpec ch = parse_regularizer("clip_higher:eps_low=0.25");
  EXPECT_DOUBLE_EQ(ch.surrogate_eps_low(), 0.25);
  EXPECT_DOUBLE_EQ(ch.surrogate_eps_high(), 0.35);
  EXPECT_EQ(parse_regularizer("kl_cov").rate, 0.25);
  EXPECT_EQ(parse_regularizer("entropy_reg").entropy_weight, 0.05);
  EXPECT_EQ(parse_regularizer("kl_ref").kl_weight, 0.001);
  for (const auto& tag : regularizer_tags()) {
    const RegularizerSpec s = parse_regularizer(tag);
    EXPECT_EQ(parse_regularizer(format_regularizer(s)), s) << tag;
  }
}

TEST(Regularizer, BogusListsTags) {
  try {
    parse_regularizer("bogus");
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find(
                  "{none, kl_ref, entropy_reg, clip_higher, clip_cov, kl_cov, pec, pcvae}"),
              std::string::npos);
  }
  EXPECT_THROW(parse_regularizer("pec:rate=0.1"), ValueError);
  EXPECT_THROW(parse_regularizer("pec:lambda=abc"), ValueError);
  EXPECT_THROW(parse_regularizer("clip_cov:rate=1.5"), ValueError);
}

TEST(RlhfLoss, OnPolicyRatiosAreOne) {
  const Fixture f;
  const RlhfContext ctx{&f.sch, nullptr, nullptr};
  const LossTerms lt = rlhf_loss(f.model, f.groups, RegularizerSpec{}, ctx);
  EXPECT_NEAR(lt.mean_ratio, 1.0, 1e-12);
  EXPECT_EQ(lt.clipped_frac, 0.0);
  EXPECT_EQ(lt.ratio_warnings, 0);
}

TEST(RlhfLoss, OnPolicyGradientIsReinforce) {
  const Fixture f;
  const RlhfContext ctx{&f.sch, nullptr, nullptr};
  const Eigen::VectorXd analytic =
      flatten_gradients(rlhf_loss(f.model, f.groups, RegularizerSpec{}, ctx).grads);
  const std::vector<bool> all(80, true);
  const Eigen::VectorXd numeric =
      param_fd(f.model, [&](const VelocityModel& m) { return unclipped_objective(m, f, all); });
  EXPECT_GT(numeric.norm(), 0.0);
  EXPECT_LT((analytic - numeric).norm() / numeric.norm(), 1e-4);
}

TEST(RlhfLoss, ClipCovMaskedTransitionsCarryNoGradient) {
  const Fixture f;
  const RlhfContext ctx{&f.sch, nullptr, nullptr};
  const RegularizerSpec spec = parse_regularizer("clip_cov:rate=0.25");
  const LossTerms lt = rlhf_loss(f.model, f.groups, spec, ctx);
  const auto mask = clip_cov_mask(lt.cov_scores, 0.25);
  std::vector<bool> keep(mask.size());
  for (std::size_t j = 0; j < mask.size(); ++j) keep[j] = !mask[j];
  const Eigen::VectorXd numeric =
      param_fd(f.model, [&](const VelocityModel& m) { return unclipped_objective(m, f, keep); });
  EXPECT_LT((flatten_gradients(lt.grads) - numeric).norm() / numeric.norm(), 1e-4);
  const Eigen::VectorXd full = flatten_gradients(rlhf_loss(f.model, f.groups, {}, ctx).grads);
  EXPECT_GT((full - numeric).norm(), 1e-6);
}

TEST(RlhfLoss, KlCovIsFlatAtOldPolicy) {
  const Fixture f;
  const RlhfContext ctx{&f.sch, nullptr, nullptr};
  const LossTerms none = rlhf_loss(f.model, f.groups, RegularizerSpec{}, ctx);
  const LossTerms kc = rlhf_loss(f.model, f.groups, parse_regularizer("kl_cov:beta=5"), ctx);
  EXPECT_NEAR(kc.loss, none.loss, 1e-15);
  EXPECT_LT((flatten_gradients(kc.grads) - flatten_gradients(none.grads)).norm(), 1e-12);
}

TEST(RlhfLoss, KlRefGradientMatchesFiniteDifferences) {
  const Fixture f;
  VelocityModel reference = small_model(99);
  const RlhfContext ctx{&f.sch, &reference, nullptr};
  const RegularizerSpec spec = parse_regularizer("kl_ref:weight=0.3");
  const Eigen::VectorXd analytic = flatten_gradients(rlhf_loss(f.model, f.groups, spec, ctx).grads);
  const std::vector<bool> all(80, true);
  const Eigen::VectorXd numeric = param_fd(f.model, [&](const VelocityModel& m) {
    double kl = 0.0;
    std::size_t n = 0;
    for (const auto& g : f.groups) {
      for (const auto& t : g.members) {
        for (const auto& st : t.steps) {
          const int i = st.step_index;
          kl += kl_ref_penalty(
              posterior_mean(m, st.state_in, st.time, f.sch.dt(i), f.sch.sigma2(i), 0),
              posterior_mean(reference, st.state_in, st.time, f.sch.dt(i), f.sch.sigma2(i), 0),
              st.sigma2_dt);
          ++n;
        }
      }
    }
    return unclipped_objective(m, f, all) + 0.3 * kl / static_cast<double>(n);
  });
  EXPECT_LT((analytic - numeric).norm() / numeric.norm(), 1e-4);
}

TEST(RlhfLoss, GenerationEntropyTermChangesNoGradient) {
  const Fixture f;
  const RlhfContext ctx{&f.sch, nullptr, nullptr};
  const LossTerms none = rlhf_loss(f.model, f.groups, RegularizerSpec{}, ctx);
  const LossTerms ent =
      rlhf_loss(f.model, f.groups, parse_regularizer("entropy_reg:weight=10"), ctx);
  EXPECT_EQ(flatten_gradients(ent.grads), flatten_gradients(none.grads));
  EXPECT_NE(ent.loss, none.loss);
}

TEST(RlhfStep, ZeroAdvantagesAreANoOp) {
  Fixture f;
  for (auto& g : f.groups) {
    g.raw_rewards.setConstant(0.7);
    g.shaped_rewards = g.raw_rewards;
    g.advantages = group_advantage(g.shaped_rewards);
  }
  VelocityModel m = f.model;
  AdamState adam = AdamState::for_net(m.net);
  const RlhfContext ctx{&f.sch, nullptr, nullptr};
  rlhf_step(m, adam, f.groups, RegularizerSpec{}, ctx);
  EXPECT_TRUE(m == f.model);
}

TEST(RlhfStep, AffineRewardGivesIdenticalUpdate) {
  Fixture a, b;
  for (auto& g : b.groups) {
    g.raw_rewards = (4.0 * g.raw_rewards.array() + 1.5).matrix();
    g.shaped_rewards = g.raw_rewards;
    g.advantages = group_advantage(g.shaped_rewards);
  }
  for (std::size_t k = 0; k < a.groups.size(); ++k) {
    EXPECT_TRUE(a.groups[k].advantages.isApprox(b.groups[k].advantages, 1e-9));
  }
  const RlhfContext ctx{&a.sch, nullptr, nullptr};
  const Eigen::VectorXd ga = flatten_gradients(rlhf_loss(a.model, a.groups, {}, ctx).grads);
  const Eigen::VectorXd gb = flatten_gradients(rlhf_loss(b.model, b.groups, {}, ctx).grads);
  EXPECT_LT((ga - gb).norm(), 1e-9 * ga.norm());
}

TEST(CollectGroups, NoiseIndependentOfRegularizer) {
  const VelocityModel m = small_model(3);
  const NoiseSchedule sch{ScheduleSpec{}};
  const std::vector<int> conds{0, 0, 0};
  const auto g1 = collect_groups(m, sch, twin_peaks(), conds, 4, 5, 7);
  const auto g2 = collect_groups(m, sch, twin_peaks(), conds, 4, 5, 7);
  const auto g3 = collect_groups(m, sch, twin_peaks(), conds, 4, 5, 8);
  EXPECT_EQ(g1[2].members[3].final_state, g2[2].members[3].final_state);
  EXPECT_NE(g1[2].members[3].final_state, g3[2].members[3].final_state);
  EXPECT_NE(g1[0].members[0].final_state, g1[1].members[0].final_state);
}

namespace {

std::vector<UpdateStats> short_run(const RegularizerSpec& spec, const PerceptualMap* map,
                                   VelocityModel& m, int updates = 6) {
  const GmmDataset ds = GmmDataset::default_dataset();
  const NoiseSchedule sch{ScheduleSpec{}};
  RlhfOptions o;
  o.group_size = 4;
  o.groups_per_step = 3;
  o.num_updates = updates;
  o.learning_rate = 5e-3;
  o.seed = 21;
  const PerceptualMap id = PerceptualMap::identity(2);
  return rlhf_train(m, ds, twin_peaks(), spec, sch, {map, &id}, o);
}

}  // namespace

TEST(RlhfTrain, SeedReproducible) {
  VelocityModel a = small_model(3), b = small_model(3);
  const auto sa = short_run({}, nullptr, a);
  const auto sb = short_run({}, nullptr, b);
  ASSERT_EQ(sa.size(), 6u);
  for (std::size_t k = 0; k < sa.size(); ++k) {
    EXPECT_EQ(sa[k].mean_raw_reward, sb[k].mean_raw_reward);
    EXPECT_EQ(sa[k].perc_entropy, sb[k].perc_entropy);
  }
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == small_model(3));
}

TEST(RlhfTrain, PcvaeWithIdentityMatchesNone) {
  const PerceptualMap id = PerceptualMap::identity(2);
  VelocityModel a = small_model(3);
  short_run({}, nullptr, a);
  for (double lambda : {0.03, 0.5, 7.0}) {
    RegularizerSpec spec = parse_regularizer("pcvae");
    spec.lambda = lambda;
    VelocityModel b = small_model(3);
    short_run(spec, &id, b);
    const Eigen::VectorXd d = flatten_parameters(a.net) - flatten_parameters(b.net);
    EXPECT_LE(d.lpNorm<Eigen::Infinity>(), 1e-9) << lambda;
  }
}

TEST(RlhfTrain, StatsColumnsAreSane) {
  VelocityModel m = small_model(3);
  const auto rows = short_run({}, nullptr, m, 2);
  for (const auto& r : rows) {
    EXPECT_GE(r.mode_coverage, 0.0);
    EXPECT_LE(r.mode_coverage, 1.0);
    EXPECT_GE(r.vendi, 1.0);
    EXPECT_LE(r.p_adv_min, 0.25 + 1e-12);
    EXPECT_GE(r.p_adv_max, 0.25 - 1e-12);
    EXPECT_NEAR(r.mean_ratio, 1.0, 1e-12);
  }
}
