#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "percflow/errors.hpp"
#include "percflow/perceptual.hpp"

using namespace percflow;

namespace {

MapSpec mlp_spec() {
  MapSpec s;
  s.id = "mlp";
  s.kind = MapKind::kFrozenMlp;
  return s;
}

VelocityModel model(std::uint64_t seed) {
  Rng rng = make_stream(seed);
  return VelocityModel::create(2, 1, ModelSpec{}, rng);
}

// One hand-made transition at step 4 of the default schedule.
Trajectory transcript() {
  const NoiseSchedule sch(ScheduleSpec{});
  Trajectory t;
  t.init = Eigen::Vector2d(0.5, -0.5);
  t.steps.push_back(make_transition(t.init, Eigen::Vector2d(0.4, -0.3),
                                    Eigen::Vector2d(1.0, -2.0), 4, sch));
  t.steps.push_back(make_transition(t.steps[0].state_out, Eigen::Vector2d(0.2, 0.1),
                                    Eigen::Vector2d(-0.5, 0.5), 3, sch));
  t.final_state = t.steps.back().state_out;
  return t;
}

}  // namespace

TEST(PerceptualMap, ApplyExamples) {
  const PerceptualMap id = PerceptualMap::identity(2);
  EXPECT_EQ(id.apply(Eigen::Vector2d(3, -5)), Eigen::Vector2d(3, -5));
  MapSpec lin;
  lin.id = "proj";
  lin.kind = MapKind::kLinear;
  lin.matrix = {{1, 0}};
  const PerceptualMap p = PerceptualMap::build(lin, 2);
  EXPECT_EQ(p.out_dim(), 1);
  EXPECT_EQ(p.apply(Eigen::Vector2d(3, -5))[0], 3.0);
  const PerceptualMap m = PerceptualMap::build(mlp_spec(), 2);
  const Eigen::Vector2d x(0.3, 1.7);
  EXPECT_EQ(m.apply(x), m.apply(x));
  EXPECT_EQ(PerceptualMap::build(mlp_spec(), 2).apply(x), m.apply(x));
  MapSpec other = mlp_spec();
  other.seed = 8;
  EXPECT_NE(PerceptualMap::build(other, 2).apply(x), m.apply(x));
}

TEST(PerceptualMap, BuildErrors) {
  MapSpec lin;
  lin.kind = MapKind::kLinear;
  EXPECT_THROW(PerceptualMap::build(lin, 2), ValueError);
  lin.matrix = {{1, 0, 0}};
  EXPECT_THROW(PerceptualMap::build(lin, 2), ShapeError);
  EXPECT_THROW(map_kind_from_string("dino"), ValueError);
  EXPECT_THROW(PerceptualMap::identity(2).apply(Eigen::Vector3d::Zero()), ShapeError);
}

TEST(PerceptualMap, PullbackMatchesFiniteDifferences) {
  const PerceptualMap m = PerceptualMap::build(mlp_spec(), 2);
  const Eigen::Vector2d x(0.7, -1.2), gz(0.4, -0.9);
  const Eigen::VectorXd analytic = m.pullback(x, gz);
  Eigen::Vector2d numeric;
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    Eigen::Vector2d up = x, down = x;
    up[j] += h;
    down[j] -= h;
    numeric[j] = (gz.dot(m.apply(up)) - gz.dot(m.apply(down))) / (2 * h);
  }
  EXPECT_LT((analytic - numeric).norm() / numeric.norm(), 1e-6);
}

TEST(PerceptualMap, JsonCarriesRealizedParameters) {
  const PerceptualMap m = PerceptualMap::build(mlp_spec(), 2);
  const nlohmann::json j = m.to_json();
  EXPECT_EQ(j.at("kind"), "frozen_mlp");
  EXPECT_EQ(j.at("seed"), 7);
  EXPECT_EQ(j.dump().find("null"), std::string::npos);
  EXPECT_NE(j.dump().find("weights"), std::string::npos);
}

TEST(PerceptualLogprob, Examples) {
  const Eigen::Vector2d z(1.0, 2.0);
  EXPECT_NEAR(perceptual_logprob(z, z, 0.01), 2.76729, 1e-5);
  // constant uses d_p
  EXPECT_NEAR(perceptual_logprob(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), 0.01),
              -0.5 * std::log(2 * std::numbers::pi * 0.01), 1e-14);
}

TEST(PerceptualTransitions, IdentityReducesToGenerationSpace) {
  const Trajectory t = transcript();
  const auto pts = perceptual_transitions(t, PerceptualMap::identity(2));
  ASSERT_EQ(pts.size(), 2u);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    EXPECT_EQ(pts[k].log_p_perc, t.steps[k].log_prob);
    EXPECT_EQ(pts[k].log_p_gen, t.steps[k].log_prob);
  }
}

TEST(PerceptualTransitions, LinearHandEvaluation) {
  const Trajectory t = transcript();
  const PerceptualMap p = PerceptualMap::linear("p", (Eigen::MatrixXd(1, 2) << 0.6, 0.8).finished());
  const auto pts = perceptual_transitions(t, p);
  const auto& st = t.steps[0];
  const double v = st.sigma2_dt;
  // x_out - m = sqrt(v) [1, -2]; P (x_out - m) = sqrt(v) (0.6 - 1.6) = -sqrt(v)
  const double expected = -v / (2 * v) - 0.5 * std::log(2 * std::numbers::pi * v);
  EXPECT_NEAR(pts[0].log_p_perc, expected, 1e-12);
}

TEST(PerceptualEntropy, ConstantMapGivesMinusConstant) {
  const NoiseSchedule sch(ScheduleSpec{});
  const PerceptualMap zero = PerceptualMap::linear("zero", Eigen::MatrixXd::Zero(2, 2));
  Rng rng = make_stream(1);
  const VelocityModel m = model(1);
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 20; ++k) trajs.push_back(rollout(m, sch, 0, rng));
  double expected = 0.0;
  for (int i = 1; i <= 10; ++i) expected -= gaussian_log_constant(2, schedule_sigma2dt(sch, i));
  expected /= 10;
  EXPECT_NEAR(perceptual_entropy_estimate(trajs, zero).mean, expected, 1e-12);
  for (const auto& p : perceptual_transitions(trajs[0], zero)) {
    EXPECT_EQ(p.log_p_perc, gaussian_log_constant(2, p.sigma2_dt));
  }
}

TEST(PerceptualEntropy, IdentityMatchesStepAverage) {
  const NoiseSchedule sch(ScheduleSpec{});
  const VelocityModel m = model(2);
  std::vector<Rng> rngs;
  for (int k = 0; k < 5000; ++k) rngs.push_back(make_stream(3, {static_cast<std::uint64_t>(k)}));
  const auto trajs = rollout_batch(m, sch, std::vector<int>(5000, 0), rngs);
  double expected = 0.0;
  for (int i = 1; i <= 10; ++i) expected += analytic_step_entropy(2, schedule_sigma2dt(sch, i)) / 10;
  const auto est = perceptual_entropy_estimate(trajs, PerceptualMap::identity(2));
  // per-step terms are chi-square(2)/2 - C, so the step average has sd 1/sqrt(10 n)
  EXPECT_LT(std::abs(est.mean - expected), 4.0 / std::sqrt(10 * 5000.0));
}

TEST(Shaping, PecExamples) {
  const std::vector<double> lp{1.5, 2.5};
  EXPECT_EQ(pec_shaped_reward(0.3, lp, 0.0), 0.3);
  EXPECT_NEAR(pec_shaped_reward(1.0, lp, 0.1), 0.8, 1e-15);
  const std::vector<double> transcript{2.9, -0.4, 1.1, 0.6};
  EXPECT_NEAR(pec_shaped_reward(0.75, transcript, 0.05), 0.75 - 0.05 * (4.2 / 4), 1e-15);
  // affine in lambda
  const double r0 = pec_shaped_reward(0.75, transcript, 0.0);
  const double r1 = pec_shaped_reward(0.75, transcript, 1.0);
  EXPECT_NEAR(pec_shaped_reward(0.75, transcript, 0.37), r0 + 0.37 * (r1 - r0), 1e-14);
  EXPECT_THROW(pec_shaped_reward(1.0, lp, -0.1), ValueError);
}

TEST(Shaping, PcvaeExamples) {
  const Trajectory t = transcript();
  const auto id = perceptual_transitions(t, PerceptualMap::identity(2));
  std::vector<double> perc, gen;
  for (const auto& p : id) {
    perc.push_back(p.log_p_perc);
    gen.push_back(p.log_p_gen);
  }
  for (double lambda : {0.0, 0.03, 5.0}) EXPECT_EQ(pcvae_shaped_reward(0.42, perc, gen, lambda), 0.42);

  const PerceptualMap p = PerceptualMap::linear("p", (Eigen::MatrixXd(1, 2) << 0.6, 0.8).finished());
  const auto lin = perceptual_transitions(t, p);
  // hand values: perceptual term uses |P eps|^2 and d_p = 1, generation term
  // uses |eps|^2 and d = 2
  double gap = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& st = t.steps[k];
    const double pe = 0.6 * st.noise[0] + 0.8 * st.noise[1];
    const double lpp = -0.5 * pe * pe - 0.5 * std::log(2 * std::numbers::pi * st.sigma2_dt);
    const double lpg = -0.5 * st.noise.squaredNorm() - std::log(2 * std::numbers::pi * st.sigma2_dt);
    gap += (lpp - lpg) / 2;
  }
  perc.clear();
  gen.clear();
  for (const auto& q : lin) {
    perc.push_back(q.log_p_perc);
    gen.push_back(q.log_p_gen);
  }
  EXPECT_NEAR(pcvae_shaped_reward(1.0, perc, gen, 0.03), 1.0 - 0.03 * gap, 1e-12);
}

TEST(ConditionalFeatureVariance, IdentityAndLinear) {
  const NoiseSchedule sch(ScheduleSpec{});
  const VelocityModel m = model(4);
  const int i = 5;
  const double v = schedule_sigma2dt(sch, i);
  Rng rng = make_stream(5);
  const auto id = conditional_feature_variance(m, sch, PerceptualMap::identity(2), 0, i, 200, 100, rng);
  EXPECT_NEAR(id.mean, 2 * v, 0.03 * 2 * v);
  Eigen::MatrixXd p(2, 2);
  p << 1.0, 0.5, -0.3, 2.0;
  const auto lin = conditional_feature_variance(m, sch, PerceptualMap::linear("p", p), 0, i, 200, 100, rng);
  const double tr = (p * p.transpose()).trace() * v;
  EXPECT_NEAR(lin.mean, tr, 0.03 * tr);
}
