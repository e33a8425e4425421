#include <gtest/gtest.h>

#include <cmath>

#include "pseudocam/error.hpp"
#include "pseudocam/schedule.hpp"

namespace pseudocam {
namespace {

OneCycleConfig table(std::size_t step, std::size_t total) {
  OneCycleConfig cfg;
  cfg.step_size = step;
  cfg.total_iterations = total;
  cfg.validate();
  return cfg;
}

int sign(double v) { return (v > 0) - (v < 0); }

TEST(OneCycle, Anchors) {
  const OneCycleConfig cfg = table(40, 100);
  EXPECT_EQ(lr_at(cfg, 0), 0.000055);
  EXPECT_EQ(lr_at(cfg, 40), 0.00055);
  EXPECT_EQ(lr_at(cfg, 80), 0.000055);
  EXPECT_EQ(lr_at(cfg, 99), cfg.final_lr);
  EXPECT_EQ(momentum_at(cfg, 0), 0.95);
  EXPECT_EQ(momentum_at(cfg, 40), 0.85);
  EXPECT_NEAR(momentum_at(cfg, 60), 0.90, 1e-15);
  EXPECT_EQ(momentum_at(cfg, 80), 0.95);
  EXPECT_EQ(momentum_at(cfg, 99), 0.95);
}

TEST(OneCycle, LinearInsideSegments) {
  const OneCycleConfig cfg = table(40, 100);
  EXPECT_NEAR(lr_at(cfg, 20), (0.000055 + 0.00055) / 2, 1e-18);
  EXPECT_NEAR(lr_at(cfg, 60), (0.000055 + 0.00055) / 2, 1e-18);
  // Tail: 19 intervals from lr_min down to final_lr.
  EXPECT_NEAR(lr_at(cfg, 90), 0.000055 + (cfg.final_lr - 0.000055) * 10.0 / 19.0, 1e-18);
}

TEST(OneCycle, BoundsOverLongTable) {
  const OneCycleConfig cfg = table(300, 1000);
  for (std::size_t t = 0; t < 1000; ++t) {
    EXPECT_GE(lr_at(cfg, t), cfg.final_lr);
    EXPECT_LE(lr_at(cfg, t), cfg.lr_max);
    EXPECT_GE(momentum_at(cfg, t), cfg.momentum_low);
    EXPECT_LE(momentum_at(cfg, t), cfg.momentum_high);
  }
}

TEST(OneCycle, SegmentBoundariesAgree) {
  for (std::size_t step : {1u, 7u, 100u, 333u}) {
    const OneCycleConfig cfg = table(step, 1000);
    // Endpoint of the rising ramp is the start of the falling ramp and so on.
    EXPECT_EQ(lr_at(cfg, step), std::lerp(cfg.lr_max, cfg.lr_min, 0.0));
    EXPECT_EQ(lr_at(cfg, 2 * step), std::lerp(cfg.lr_min, cfg.final_lr, 0.0));
    EXPECT_EQ(momentum_at(cfg, step), std::lerp(cfg.momentum_low, cfg.momentum_high, 0.0));
    EXPECT_EQ(momentum_at(cfg, 2 * step), cfg.momentum_high);
  }
}

TEST(OneCycle, NoJumpsBetweenConsecutiveIterations) {
  const OneCycleConfig cfg = table(300, 1000);
  const double ramp = (cfg.lr_max - cfg.lr_min) / 300.0;
  const double tail = (cfg.lr_min - cfg.final_lr) / 399.0;
  const double max_step = std::max(ramp, tail) * (1 + 1e-9);
  const double mom_step = (cfg.momentum_high - cfg.momentum_low) / 300.0 * (1 + 1e-9);
  for (std::size_t t = 0; t + 1 < 1000; ++t) {
    EXPECT_LE(std::abs(lr_at(cfg, t + 1) - lr_at(cfg, t)), max_step) << t;
    EXPECT_LE(std::abs(momentum_at(cfg, t + 1) - momentum_at(cfg, t)), mom_step) << t;
  }
}

TEST(OneCycle, MomentumMovesAgainstLearningRate) {
  const OneCycleConfig cfg = table(300, 1000);
  for (std::size_t t = 0; t + 1 <= 600; ++t) {
    const double dlr = lr_at(cfg, t + 1) - lr_at(cfg, t);
    const double dm = momentum_at(cfg, t + 1) - momentum_at(cfg, t);
    ASSERT_NE(sign(dlr), 0) << t;
    EXPECT_EQ(sign(dlr), -sign(dm)) << t;
  }
}

TEST(OneCycle, Validation) {
  EXPECT_THROW(table(50, 100), ConfigError);
  EXPECT_THROW(table(0, 100), ConfigError);
  OneCycleConfig bad;
  bad.momentum_low = 0.96;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = OneCycleConfig{};
  bad.final_lr = bad.lr_min * 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(lr_at(table(40, 100), 100), ValidationError);
}

TEST(OneCycle, MakeResolvesDefaults) {
  const OneCycleConfig cfg = make_one_cycle(OneCycleSettings{}, 35);
  EXPECT_EQ(cfg.step_size, 14u);
  EXPECT_EQ(cfg.lr_min, 0.00055 / 10.0);
  EXPECT_EQ(cfg.final_lr, 0.00055 / 10.0 / 100.0);
}

}  // namespace
}  // namespace pseudocam
