#pragma once

#include <cstddef>

namespace pseudocam {

// One-cycle learning-rate policy with cyclical momentum:
//   [0, step]            lr  lr_min -> lr_max,   momentum high -> low
//   [step, 2 step]       lr  lr_max -> lr_min,   momentum low -> high
//   [2 step, total - 1]  lr  lr_min -> final_lr, momentum held high
struct OneCycleConfig {
  double lr_max = 0.00055;
  double lr_min = 0.00055 / 10.0;
  double momentum_high = 0.95;
  double momentum_low = 0.85;
  std::size_t step_size = 40;
  std::size_t total_iterations = 100;
  double final_lr = 0.00055 / 10.0 / 100.0;

  // Throws ConfigError when an invariant is violated.
  void validate() const;
};

struct OneCycleSettings {
  double lr_max = 0.00055;
  double lr_min = 0.0;     // 0 means lr_max / 10
  double final_lr = 0.0;   // 0 means lr_min / 100
  double momentum_high = 0.95;
  double momentum_low = 0.85;
  double step_fraction = 0.4;
};

// Resolves defaults for a run of `total_iterations` steps; step size is
// floor(step_fraction * total), at least 1.
OneCycleConfig make_one_cycle(const OneCycleSettings& settings, std::size_t total_iterations);

double lr_at(const OneCycleConfig& cfg, std::size_t t);
double momentum_at(const OneCycleConfig& cfg, std::size_t t);

}  // namespace pseudocam
