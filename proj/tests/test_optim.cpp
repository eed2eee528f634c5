#include <cmath>

#include <gtest/gtest.h>

#include "mic/optim.hpp"

using namespace mic;

namespace {

Model<float> tiny_model(std::uint64_t seed = 1) {
  auto s = ArchitectureSpec::cnn(8, 8, 1, 3);
  s.filters = {2};
  s.dense_width = 4;
  return build_cnn_baseline<float>(s, seed);
}

Parameter<double> scalar(double w, double l2 = 0.0) {
  return Parameter<double>("w", Tensor<double>({1}, w), l2);
}

}  // namespace

// ---------------------------------------------------------------------------
// losses

TEST(SparseCE, UniformThreeClassIsLn3) {
  const std::vector<int> y{2};
  const auto r = sparse_ce_loss(Tensor<double>({1, 3}, 1.0 / 3.0), std::span<const int>(y));
  EXPECT_NEAR(r.loss, std::log(3.0), 1e-12);
}

TEST(SparseCE, PerfectPredictionIsZero) {
  const std::vector<int> y{1};
  EXPECT_EQ(sparse_ce_loss(Tensor<double>({1, 3}, {0, 1, 0}), std::span<const int>(y)).loss, 0.0);
}

TEST(SparseCE, ZeroProbabilityIsClampedFinite) {
  const std::vector<int> y{0};
  const auto r = sparse_ce_loss(Tensor<double>({1, 3}, {0, 1, 0}), std::span<const int>(y));
  EXPECT_NEAR(r.loss, -std::log(kProbClamp), 1e-9);
}

TEST(SparseCE, GradientIsProbsMinusOneHotOverN) {
  const std::vector<int> y{0, 2};
  const auto r =
      sparse_ce_loss(Tensor<double>({2, 3}, {0.2, 0.3, 0.5, 0.1, 0.1, 0.8}), std::span<const int>(y));
  const std::vector<double> want{-0.4, 0.15, 0.25, 0.05, 0.05, -0.1};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.dlogits[i], want[i], 1e-15);
}

TEST(SparseCE, BadLabelIsRejected) {
  const std::vector<int> y{3};
  EXPECT_THROW(sparse_ce_loss(Tensor<double>({1, 3}, 1.0 / 3.0), std::span<const int>(y)),
               std::out_of_range);
}

TEST(BinaryCE, HalfIsLn2) {
  const std::vector<int> y{1};
  EXPECT_NEAR(binary_ce_loss(Tensor<double>({1, 1}, 0.5), std::span<const int>(y)).loss,
              std::log(2.0), 1e-12);
}

TEST(BinaryCE, GradientAndLabelCheck) {
  const std::vector<int> y{1, 0};
  const auto r = binary_ce_loss(Tensor<double>({2, 1}, {0.75, 0.25}), std::span<const int>(y));
  EXPECT_NEAR(r.dlogits[0], -0.125, 1e-15);
  EXPECT_NEAR(r.dlogits[1], 0.125, 1e-15);
  const std::vector<int> bad{2, 0};
  EXPECT_THROW(binary_ce_loss(Tensor<double>({2, 1}, 0.5), std::span<const int>(bad)),
               std::out_of_range);
}

TEST(L2, PenaltyAndGradient) {
  auto p = Parameter<double>("w", Tensor<double>({2}, {1.0, 1.0}), 0.01);
  auto q = Parameter<double>("b", Tensor<double>({1}, 5.0), 0.0);
  std::vector<Parameter<double>*> ps{&p, &q};
  EXPECT_NEAR(l2_penalty<double>(std::span<Parameter<double>* const>(ps)), 0.02, 1e-15);
  EXPECT_NEAR(p.grad[0], 0.02, 1e-15);
  EXPECT_EQ(q.grad[0], 0.0);

  auto r = Parameter<double>("w", Tensor<double>({1}, 2.0), 0.01);
  std::vector<Parameter<double>*> rs{&r};
  EXPECT_NEAR(l2_penalty<double>(std::span<Parameter<double>* const>(rs), false), 0.04, 1e-15);
  EXPECT_EQ(r.grad[0], 0.0);
}

// ---------------------------------------------------------------------------
// adam

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {3.0, -0.02, 100.0}) {
    auto p = scalar(1.0);
    p.grad[0] = g;
    std::vector<Parameter<double>*> ps{&p};
    adam_step<double>(std::span<Parameter<double>* const>(ps), 1e-3, 1);
    EXPECT_NEAR(p.value[0], 1.0 - 1e-3 * (g > 0 ? 1 : -1), 1e-3 * 1e-5) << g;
    EXPECT_EQ(p.grad[0], 0.0);
  }
}

TEST(Adam, ZeroGradientLeavesValue) {
  auto p = scalar(0.7);
  std::vector<Parameter<double>*> ps{&p};
  for (int t = 1; t <= 5; ++t) adam_step<double>(std::span<Parameter<double>* const>(ps), 1e-2, t);
  EXPECT_EQ(p.value[0], 0.7);
}

TEST(Adam, MomentsMatchRecurrence) {
  auto p = scalar(0.0);
  std::vector<Parameter<double>*> ps{&p};
  double m = 0, v = 0;
  for (int t = 1; t <= 4; ++t) {
    const double g = 0.5 * t;
    p.grad[0] = g;
    adam_step<double>(std::span<Parameter<double>* const>(ps), 1e-3, t);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    EXPECT_NEAR(p.adam_m[0], m, 1e-15);
    EXPECT_NEAR(p.adam_v[0], v, 1e-15);
  }
}

TEST(Adam, DescendsQuadratic) {
  auto p = scalar(3.0);
  std::vector<Parameter<double>*> ps{&p};
  for (int t = 1; t <= 500; ++t) {
    p.grad[0] = 2.0 * p.value[0];
    adam_step<double>(std::span<Parameter<double>* const>(ps), 0.05, t);
  }
  EXPECT_LT(std::abs(p.value[0]), 0.5);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto p = scalar(1.0);
  p.grad[0] = std::nan("");
  std::vector<Parameter<double>*> ps{&p};
  try {
    adam_step<double>(std::span<Parameter<double>* const>(ps), 1e-3, 1);
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_THROW(adam_step<double>(std::span<Parameter<double>* const>(ps), 1e-3, 0),
               std::invalid_argument);
}

TEST(Adam, ClassCountsSteps) {
  auto m = tiny_model();
  Adam adam;
  adam.step(m, 1e-3);
  adam.step(m, 1e-3);
  EXPECT_EQ(adam.steps(), 2);
}

// ---------------------------------------------------------------------------
// schedule

TEST(Schedule, StepDecay) {
  TrainConfig cfg;
  EXPECT_EQ(lr_at_epoch(cfg, 1), 1e-3);
  EXPECT_EQ(lr_at_epoch(cfg, 10), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 11), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 21), 2.5e-4);
  EXPECT_THROW(lr_at_epoch(cfg, 0), std::invalid_argument);
}

TEST(Schedule, UnitFactorIsConstant) {
  TrainConfig cfg;
  cfg.lr_decay_factor = 1.0;
  for (int e = 1; e <= 50; ++e) EXPECT_EQ(lr_at_epoch(cfg, e), 1e-3);
}

TEST(Schedule, NonIncreasing) {
  TrainConfig cfg;
  cfg.lr_decay_every = 3;
  for (int e = 1; e < 40; ++e) EXPECT_LE(lr_at_epoch(cfg, e + 1), lr_at_epoch(cfg, e));
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.patience = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.lr_decay_factor = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.base_lr = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// early stopping

namespace {

struct Trace {
  int stopped_at = 0;  // 0 = ran to completion
  int best_epoch = 0;
};

Trace run_trace(const std::vector<double>& losses, int patience, double min_delta = 0.0) {
  auto m = tiny_model();
  EarlyStopper<float> s(patience, min_delta);
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (s.update(int(i) + 1, losses[i], m) == StopDecision::Stop) return {int(i) + 1, s.best_epoch()};
  return {0, s.best_epoch()};
}

}  // namespace

TEST(EarlyStopping, PlateauStopsAfterPatience) {
  const auto t = run_trace({1.0, 0.9, 0.8, 0.85, 0.86, 0.87, 0.88, 0.89, 0.5}, 5);
  EXPECT_EQ(t.stopped_at, 8);
  EXPECT_EQ(t.best_epoch, 3);
}

TEST(EarlyStopping, EarlyMinimumTrace) {
  const auto t = run_trace({1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99}, 5);
  EXPECT_EQ(t.stopped_at, 7);
  EXPECT_EQ(t.best_epoch, 2);
}

TEST(EarlyStopping, StrictlyDecreasingNeverStops) {
  std::vector<double> l;
  for (int i = 0; i < 30; ++i) l.push_back(1.0 / (i + 1));
  const auto t = run_trace(l, 5);
  EXPECT_EQ(t.stopped_at, 0);
  EXPECT_EQ(t.best_epoch, 30);
}

TEST(EarlyStopping, EqualLossIsNotImprovement) {
  const auto t = run_trace({0.5, 0.5, 0.5}, 2);
  EXPECT_EQ(t.stopped_at, 3);
  EXPECT_EQ(t.best_epoch, 1);
}

TEST(EarlyStopping, MinDeltaRequiresMargin) {
  const auto t = run_trace({1.0, 0.95, 0.91, 0.5}, 2, 0.1);
  EXPECT_EQ(t.stopped_at, 3);
  EXPECT_EQ(t.best_epoch, 1);
}

TEST(EarlyStopping, NonFiniteSetsError) {
  auto m = tiny_model();
  EarlyStopper<float> s(5, 0.0);
  EXPECT_EQ(s.update(1, 1.0, m), StopDecision::Continue);
  EXPECT_EQ(s.update(2, std::nan(""), m), StopDecision::Stop);
  EXPECT_TRUE(s.error());
}

TEST(EarlyStopping, RestoresBestWeightsAndOptimizerState) {
  auto m = tiny_model();
  EarlyStopper<float> s(3, 0.0);
  s.update(1, 0.4, m, 10);
  const auto best = m.params()[0]->value;
  m.params()[0]->value.fill(9.0f);
  m.params()[0]->adam_m.fill(1.0f);
  s.update(2, 0.6, m, 20);
  EXPECT_EQ(s.restore_best(m), 10);
  EXPECT_EQ(m.params()[0]->value, best);
  EXPECT_EQ(m.params()[0]->adam_m, Tensor<float>(best.shape()));
}

TEST(EarlyStopping, InvalidPatienceAndMissingSnapshot) {
  EXPECT_THROW(EarlyStopper<float>(0, 0.0), std::invalid_argument);
  auto m = tiny_model();
  EarlyStopper<float> s(1, 0.0);
  EXPECT_FALSE(s.has_snapshot());
  EXPECT_THROW(s.restore_best(m), std::logic_error);
}
