#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pseudocam/layers.hpp"
#include "pseudocam/rng.hpp"
#include "pseudocam/tensor.hpp"

namespace pseudocam {

struct NetworkConfig {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::vector<LayerSpec> layers;

  bool operator==(const NetworkConfig&) const = default;
};

// conv3x3(8, no bias) -> dense_block(L=2, growth 4) -> transition(0.5) ->
// gap_gmp_concat -> batchnorm -> dropout(0.6) -> dense(1) -> sigmoid
NetworkConfig default_network_config(std::size_t channels = 3, std::size_t patch_size = 16);

enum class Mode { kTrain, kEval };

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::uint64_t version = 0;
  bool train = false;
  std::size_t batch = 0;
};

struct ForwardResult {
  Tensor probabilities;  // [N, 1]
  ForwardCache cache;
};

// One tensor per entry of Network::parameters(), same order and shapes.
struct Gradients {
  std::vector<Tensor> tensors;
};

struct LossValue {
  double value = 0.0;
  Tensor grad_wrt_output;
};

class Network {
 public:
  // Validates the shape chain; throws ConfigError naming the offending layer.
  static Network build(NetworkConfig config, Rng& rng);

  // Uses the current mode. In train mode dropout masks come from `rng`, BN
  // normalizes with batch statistics and folds them into its running
  // estimates.
  ForwardResult forward(const Tensor& batch, Rng& rng);
  // Eval-mode probabilities regardless of the current mode. Thread-safe.
  Tensor predict(const Tensor& batch) const;

  Gradients backward(const ForwardCache& cache, const Tensor& grad_loss) const;

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  std::size_t parameter_count() const;
  // Every persisted tensor (values, momentum buffers, BN running statistics)
  // under a stable name.
  StateList state();

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }
  // Bumped on every parameter update; caches from older versions are stale.
  std::uint64_t version() const { return version_; }
  void mark_updated() { ++version_; }

  const NetworkConfig& config() const { return config_; }
  const std::vector<Layer>& layers() const { return layers_; }
  Shape input_shape() const { return {config_.channels, config_.height, config_.width}; }

 private:
  Network() = default;
  Tensor run(const Tensor& batch, const ForwardContext& ctx, std::vector<LayerCache>& caches) const;
  void check_input(const Tensor& batch) const;

  NetworkConfig config_;
  std::vector<Layer> layers_;
  Mode mode_ = Mode::kTrain;
  std::uint64_t version_ = 0;
};

inline constexpr double kProbabilityClamp = 1e-7;

// Weighted binary cross-entropy over a [N, 1] batch:
//   value = (1/N) sum_i w_i * BCE(p_i, l_i)
//   grad_i = w_i * (p_i - l_i) / (p_i (1 - p_i)) / N
// with p clamped to [1e-7, 1 - 1e-7]. Empty weights mean all ones.
LossValue bce_loss(const Tensor& probabilities, const Tensor& labels, std::span<const double> weights = {});

// buffer <- momentum * buffer + grad; value <- value - lr * buffer
void sgd_momentum_step(Param& param, const Tensor& grad, double lr, double momentum);
void sgd_momentum_step(Network& net, const Gradients& grads, double lr, double momentum);

struct GradCheckEntry {
  std::string param;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const;
  bool passed(double tolerance = 1e-4) const { return max_rel_error() < tolerance; }
  // Worst relative error per top-level layer (parameter name prefix).
  std::vector<std::pair<std::string, double>> per_layer() const;
};

// |a - n| / max(|a| + |n|, floor); the floor keeps parameters whose
// gradient is numerically zero from dividing noise by noise.
inline constexpr double kGradCheckFloor = 1e-7;
double relative_error(double analytic, double numeric) noexcept;

// Analytic gradient of the unweighted BCE loss for a train-mode forward with
// dropout masks drawn from Rng(mask_seed).
Gradients loss_gradients(const Network& net, const Tensor& batch, const Tensor& labels, std::uint64_t mask_seed);

// Central differences for every parameter entry against `analytic`. Each
// evaluation replays the same dropout masks and recomputes BN batch
// statistics; the caller's network is not modified.
GradCheckReport compare_gradients(const Network& net, const Tensor& batch, const Tensor& labels,
                                  const Gradients& analytic, double eps, std::uint64_t mask_seed = 0);

GradCheckReport grad_check(const Network& net, const Tensor& batch, const Tensor& labels, double eps = 1e-5,
                           std::uint64_t mask_seed = 0);

}  // namespace pseudocam
