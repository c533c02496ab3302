#include <gtest/gtest.h>

#include "bsplat/optimizer.hpp"
#include "support/oracles.hpp"

using namespace bsplat;

namespace {

ModelState<double> two_gaussians() {
  GaussianSet<double> set(1);
  for (int i = 0; i < 2; ++i) {
    Gaussian<double> g;
    g.position = Vec3<double>(i, 0, 0);
    g.sh = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(4, 3);
    set.push_back(g);
  }
  return ModelState<double>(set);
}

}  // namespace

TEST(Optimizer, PositionScheduleIsLogLinear) {
  LearningRates r;
  r.position_init = 1e-2;
  r.position_final = 1e-4;
  r.position_steps = 100;
  r.position_scale = 2.0;
  EXPECT_DOUBLE_EQ(r.position_at(0), 2e-2);
  EXPECT_NEAR(r.position_at(50), 2e-3, 1e-15);
  EXPECT_NEAR(r.position_at(100), 2e-4, 1e-18);
  EXPECT_NEAR(r.position_at(1000), 2e-4, 1e-18);
  EXPECT_DOUBLE_EQ(r.for_group(ParamGroup::kOpacity, 7), r.opacity);
}

TEST(Optimizer, AdamMatchesScalarReference) {
  ModelState<double> model = two_gaussians();
  LearningRates rates;
  rates.position_steps = 0;
  rates.position_init = rates.position_final = 0.1;
  AdamSettings adam;
  double m = 0.0, v = 0.0, x = 0.0;
  const double grads[] = {0.5, -0.2, 1.5, 0.0, -3.0};
  for (int step = 1; step <= 5; ++step) {
    auto b = GradientBundle<double>::zeros(model.set, 1, 1);
    b.d_position(0, 1) = grads[step - 1];
    adam_step(model, b, rates, step, adam);
    const double g = grads[step - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, step))) / (std::sqrt(v / (1 - std::pow(0.999, step))) + 1e-15);
    EXPECT_NEAR(model.set.positions(0, 1), x, 1e-14);
  }
  EXPECT_EQ(model.set.positions(1, 1), 0.0);
  EXPECT_EQ(model.set.stats.age(0), 5);
}

TEST(Optimizer, QuaternionsRenormalizedAfterStep) {
  ModelState<double> model = two_gaussians();
  auto b = GradientBundle<double>::zeros(model.set, 1, 1);
  b.d_rotation(0, 0) = 1.0;
  b.d_rotation(0, 2) = -1.0;
  LearningRates rates;
  rates.rotation = 0.3;
  adam_step(model, b, rates, 0);
  EXPECT_NEAR(model.set.rotations.row(0).norm(), 1.0, 1e-15);
  EXPECT_GT(model.set.rotations(0, 2), 0.0);
}

TEST(Optimizer, StructuralEditsKeepMomentsAligned) {
  ModelState<double> model = two_gaussians();
  auto b = GradientBundle<double>::zeros(model.set, 1, 1);
  b.d_position(1, 0) = 1.0;
  adam_step(model, b, LearningRates{}, 0);
  const double m1 = model.adam.first[0](1, 0);
  EXPECT_NE(m1, 0.0);
  const std::vector<int> rows{1};
  model.keep(rows);
  EXPECT_EQ(model.adam.first[0].rows(), 1);
  EXPECT_EQ(model.adam.first[0](0, 0), m1);
  model.append(two_gaussians().set);
  EXPECT_EQ(model.adam.first[0].rows(), 3);
  EXPECT_EQ(model.adam.first[0](2, 0), 0.0);
  EXPECT_TRUE(model.adam.aligned_with(model.set));

  // Editing the set directly breaks alignment and is caught.
  model.set.push_back(Gaussian<double>{});
  auto bad = GradientBundle<double>::zeros(model.set, 1, 1);
  EXPECT_THROW(adam_step(model, bad, LearningRates{}, 0), ContractError);
}

TEST(Optimizer, OpacityResetClampsAndClearsMoments) {
  ModelState<double> model = two_gaussians();
  model.set.opacity_logits(0, 0) = logit(0.9);
  model.set.opacity_logits(1, 0) = logit(0.001);
  auto b = GradientBundle<double>::zeros(model.set, 1, 1);
  b.d_opacity_logit.setConstant(1.0);
  b.d_position.setConstant(1.0);
  adam_step(model, b, LearningRates{}, 0);
  const double low = model.set.opacity_logits(1, 0);
  reset_opacity(model, 0.01);
  EXPECT_NEAR(model.set.opacity(0), 0.01, 1e-15);
  EXPECT_EQ(model.set.opacity_logits(1, 0), low);
  EXPECT_EQ(model.adam.first[std::size_t(ParamGroup::kOpacity)].norm(), 0.0);
  EXPECT_NE(model.adam.first[std::size_t(ParamGroup::kPosition)].norm(), 0.0);
  reset_opacity(model, 0.01, true);
  EXPECT_EQ(model.adam.first[std::size_t(ParamGroup::kPosition)].norm(), 0.0);
}
