#include "pseudocam/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pseudocam/error.hpp"

namespace pseudocam {

void OneCycleConfig::validate() const {
  if (!(lr_min > 0.0 && lr_min < lr_max)) {
    throw ConfigError("one-cycle needs 0 < lr_min < lr_max, got lr_min=" + std::to_string(lr_min) +
                      " lr_max=" + std::to_string(lr_max));
  }
  if (!(final_lr > 0.0 && final_lr <= lr_min)) {
    throw ConfigError("one-cycle final_lr must be in (0, lr_min]");
  }
  if (!(momentum_low >= 0.0 && momentum_low < momentum_high && momentum_high < 1.0)) {
    throw ConfigError("one-cycle needs 0 <= momentum_low < momentum_high < 1");
  }
  if (step_size == 0 || 2 * step_size >= total_iterations) {
    throw ConfigError("one-cycle needs 0 < 2*step_size < total_iterations, got step_size=" +
                      std::to_string(step_size) + " total=" + std::to_string(total_iterations));
  }
}

OneCycleConfig make_one_cycle(const OneCycleSettings& s, std::size_t total_iterations) {
  OneCycleConfig cfg;
  cfg.lr_max = s.lr_max;
  cfg.lr_min = s.lr_min > 0.0 ? s.lr_min : s.lr_max / 10.0;
  cfg.final_lr = s.final_lr > 0.0 ? s.final_lr : cfg.lr_min / 100.0;
  cfg.momentum_high = s.momentum_high;
  cfg.momentum_low = s.momentum_low;
  cfg.total_iterations = total_iterations;
  cfg.step_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(s.step_fraction * static_cast<double>(total_iterations))));
  cfg.validate();
  return cfg;
}

namespace {

void check_index(const OneCycleConfig& cfg, std::size_t t) {
  if (t >= cfg.total_iterations) {
    throw ValidationError("iteration " + std::to_string(t) + " outside [0, " + std::to_string(cfg.total_iterations) +
                          ")");
  }
}

double fraction(std::size_t num, std::size_t den) { return static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

// std::lerp is exact at both endpoints, so segment boundaries agree bit for bit.
double lr_at(const OneCycleConfig& cfg, std::size_t t) {
  check_index(cfg, t);
  const std::size_t step = cfg.step_size;
  if (t <= step) return std::lerp(cfg.lr_min, cfg.lr_max, fraction(t, step));
  if (t <= 2 * step) return std::lerp(cfg.lr_max, cfg.lr_min, fraction(t - step, step));
  const std::size_t tail = cfg.total_iterations - 1 - 2 * step;
  return std::lerp(cfg.lr_min, cfg.final_lr, fraction(t - 2 * step, tail));
}

double momentum_at(const OneCycleConfig& cfg, std::size_t t) {
  check_index(cfg, t);
  const std::size_t step = cfg.step_size;
  if (t <= step) return std::lerp(cfg.momentum_high, cfg.momentum_low, fraction(t, step));
  if (t <= 2 * step) return std::lerp(cfg.momentum_low, cfg.momentum_high, fraction(t - step, step));
  return cfg.momentum_high;
}

}  // namespace pseudocam
