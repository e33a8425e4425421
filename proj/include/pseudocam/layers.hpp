#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "pseudocam/rng.hpp"
#include "pseudocam/tensor.hpp"

namespace pseudocam {

enum class LayerKind {
  kDense,
  kConv3x3,
  kBatchNorm,
  kRelu,
  kSigmoid,
  kGapGmpConcat,
  kDropout,
  kDenseBlock,
  kTransition,
};

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t units = 0;     // dense
  std::size_t channels = 0;  // conv3x3
  bool bias = true;          // conv3x3; a bias feeding straight into batchnorm is redundant
  std::size_t growth = 0;    // dense_block
  std::size_t depth = 0;     // dense_block
  double dropout = 0.6;
  double compression = 0.5;  // transition

  static LayerSpec dense(std::size_t units);
  static LayerSpec conv3x3(std::size_t channels, bool bias = true);
  static LayerSpec batchnorm();
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec gap_gmp_concat();
  static LayerSpec dropout_layer(double probability = 0.6);
  static LayerSpec dense_block(std::size_t depth, std::size_t growth);
  static LayerSpec transition(double compression = 0.5);

  bool operator==(const LayerSpec&) const = default;
};

// floor(compression * m): feature maps emitted by a transition after a block
// with m output maps.
std::size_t transition_channels(std::size_t m, double compression = 0.5);

struct Param {
  std::string name;
  Tensor value;
  Tensor velocity;  // momentum buffer, same shape as value
};

// Whatever a layer needs to replay its forward pass during backward.
struct LayerCache {
  std::vector<Tensor> saved;
  std::vector<LayerCache> children;
};

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // required in train mode when dropout is present
};

using StateList = std::vector<std::pair<std::string, Tensor*>>;

// All layers take batch-major inputs: [N, F] for flat features and
// [N, C, H, W] for maps. Shapes passed to output_shape() exclude N.

class Conv {
 public:
  Conv(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng,
       bool bias = true);

  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>& out) {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
  }
  void collect_params(std::vector<const Param*>& out) const {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
  }
  void collect_state(StateList& out);
  void commit_stats(const LayerCache&) {}

  bool has_bias() const { return bias_.has_value(); }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

 private:
  std::size_t in_;
  std::size_t out_;
  std::size_t kernel_;
  Param weight_;                // [out, in, k, k]
  std::optional<Param> bias_;   // [out]
};

class Dense {
 public:
  Dense(std::string name, std::size_t in_features, std::size_t out_features, Rng& rng);

  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  void collect_params(std::vector<const Param*>& out) const { out.push_back(&weight_); out.push_back(&bias_); }
  void collect_state(StateList& out);
  void commit_stats(const LayerCache&) {}

 private:
  std::size_t in_;
  std::size_t out_;
  Param weight_;  // [in, out], so y = x W + b
  Param bias_;    // [out]
};

// Per-channel normalization for maps, per-feature for flat inputs.
class BatchNorm {
 public:
  static constexpr double kMomentum = 0.9;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm(std::string name, std::size_t features);

  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>& out) { out.push_back(&gamma_); out.push_back(&beta_); }
  void collect_params(std::vector<const Param*>& out) const { out.push_back(&gamma_); out.push_back(&beta_); }
  void collect_state(StateList& out);
  // Folds the batch statistics recorded in a train-mode cache into the
  // running estimates.
  void commit_stats(const LayerCache& cache);

  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

 private:
  std::string name_;
  std::size_t features_;
  Param gamma_;
  Param beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

class Relu {
 public:
  Shape output_shape(const Shape& in) const { return in; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>&) {}
  void collect_params(std::vector<const Param*>&) const {}
  void collect_state(StateList&) {}
  void commit_stats(const LayerCache&) {}
};

class Sigmoid {
 public:
  Shape output_shape(const Shape& in) const { return in; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>&) {}
  void collect_params(std::vector<const Param*>&) const {}
  void collect_state(StateList&) {}
  void commit_stats(const LayerCache&) {}
};

// [N, C, H, W] -> [N, 2C]: channel means followed by channel maxima.
class GapGmpConcat {
 public:
  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>&) {}
  void collect_params(std::vector<const Param*>&) const {}
  void collect_state(StateList&) {}
  void commit_stats(const LayerCache&) {}
};

// Inverted dropout: kept units are scaled by 1/(1-p) in train mode, eval is
// the identity.
class Dropout {
 public:
  explicit Dropout(double probability);

  Shape output_shape(const Shape& in) const { return in; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>&) {}
  void collect_params(std::vector<const Param*>&) const {}
  void collect_state(StateList&) {}
  void commit_stats(const LayerCache&) {}

  double probability() const { return p_; }

 private:
  double p_;
};

// Densely connected block without bottlenecks. Unit l sees the block input
// concatenated with the outputs of units 0..l-1 and applies BN -> ReLU ->
// conv3x3(growth); the block emits everything concatenated.
class DenseBlock {
 public:
  DenseBlock(std::string name, std::size_t in_channels, std::size_t depth, std::size_t growth, Rng& rng);

  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>& out);
  void collect_params(std::vector<const Param*>& out) const;
  void collect_state(StateList& out);
  void commit_stats(const LayerCache& cache);

  std::size_t depth() const { return units_.size(); }
  std::size_t out_channels() const { return in_ + growth_ * units_.size(); }
  // Feature sources consumed across all units (each unit reads the block
  // input plus every earlier unit).
  std::size_t connection_count() const;

 private:
  struct Unit {
    BatchNorm norm;
    Conv conv;
  };
  std::size_t in_;
  std::size_t growth_;
  std::vector<Unit> units_;
};

// BN -> ReLU -> conv1x1(floor(compression * m)) -> 2x2 average pool.
class Transition {
 public:
  Transition(std::string name, std::size_t in_channels, double compression, Rng& rng);

  Shape output_shape(const Shape& in) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const;
  void collect_params(std::vector<Param*>& out);
  void collect_params(std::vector<const Param*>& out) const;
  void collect_state(StateList& out);
  void commit_stats(const LayerCache& cache);

  std::size_t out_channels() const { return conv_.out_channels(); }

 private:
  BatchNorm norm_;
  Conv conv_;
};

using Layer = std::variant<Conv, Dense, BatchNorm, Relu, Sigmoid, GapGmpConcat, Dropout, DenseBlock, Transition>;

// Channel-axis helpers for [N, C, H, W] tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& t, std::size_t begin, std::size_t end);

}  // namespace pseudocam
