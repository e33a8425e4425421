#include "pseudocam/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <type_traits>

#include "pseudocam/error.hpp"

namespace pseudocam {

NetworkConfig default_network_config(std::size_t channels, std::size_t patch_size) {
  NetworkConfig cfg;
  cfg.channels = channels;
  cfg.height = patch_size;
  cfg.width = patch_size;
  cfg.layers = {
      LayerSpec::conv3x3(8, false),
      LayerSpec::dense_block(2, 4),
      LayerSpec::transition(0.5),
      LayerSpec::gap_gmp_concat(),
      LayerSpec::batchnorm(),
      LayerSpec::dropout_layer(0.6),
      LayerSpec::dense(1),
      LayerSpec::sigmoid(),
  };
  return cfg;
}

namespace {

std::string layer_label(std::size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(layer_kind_name(kind)) + ")";
}

Layer make_layer(const LayerSpec& spec, const std::string& name, const Shape& in, Rng& rng) {
  switch (spec.kind) {
    case LayerKind::kConv3x3:
      if (in.size() != 3) throw ShapeError("conv3x3 needs [C, H, W] input, got " + to_string(in));
      if (spec.channels == 0) throw ConfigError("conv3x3 needs channels >= 1");
      return Conv(name, in[0], spec.channels, 3, rng, spec.bias);
    case LayerKind::kDense:
      if (in.size() != 1) throw ShapeError("dense needs flat input, got " + to_string(in));
      if (spec.units == 0) throw ConfigError("dense needs units >= 1");
      return Dense(name, in[0], spec.units, rng);
    case LayerKind::kBatchNorm:
      if (in.empty()) throw ShapeError("batchnorm needs a channel axis");
      return BatchNorm(name, in[0]);
    case LayerKind::kRelu:
      return Relu{};
    case LayerKind::kSigmoid:
      return Sigmoid{};
    case LayerKind::kGapGmpConcat:
      return GapGmpConcat{};
    case LayerKind::kDropout:
      return Dropout(spec.dropout);
    case LayerKind::kDenseBlock:
      if (in.size() != 3) throw ShapeError("dense_block needs [C, H, W] input, got " + to_string(in));
      return DenseBlock(name, in[0], spec.depth, spec.growth, rng);
    case LayerKind::kTransition:
      if (in.size() != 3) throw ShapeError("transition needs [C, H, W] input, got " + to_string(in));
      return Transition(name, in[0], spec.compression, rng);
  }
  throw ConfigError("unhandled layer kind");
}

}  // namespace

Network Network::build(NetworkConfig config, Rng& rng) {
  if (config.channels == 0 || config.height == 0 || config.width == 0) {
    throw ConfigError("input dimensions must be positive");
  }
  if (config.layers.empty() || config.layers.back().kind != LayerKind::kSigmoid) {
    throw ConfigError("network must end in a sigmoid output layer");
  }
  Network net;
  Shape shape = {config.channels, config.height, config.width};
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& spec = config.layers[i];
    const std::string name = "layer" + std::to_string(i) + "_" + std::string(layer_kind_name(spec.kind));
    try {
      Layer layer = make_layer(spec, name, shape, rng);
      shape = std::visit([&](const auto& l) { return l.output_shape(shape); }, layer);
      net.layers_.push_back(std::move(layer));
    } catch (const Error& e) {
      throw ConfigError(layer_label(i, spec.kind) + ": " + e.what());
    }
  }
  if (shape != Shape{1}) {
    throw ConfigError("output must be a single sigmoid unit, network produces " + to_string(shape));
  }
  net.config_ = std::move(config);
  return net;
}

void Network::check_input(const Tensor& batch) const {
  const Shape expected = input_shape();
  if (batch.rank() != 4 || !std::equal(expected.begin(), expected.end(), batch.shape().begin() + 1)) {
    throw ShapeError("network expects [N, " + std::to_string(config_.channels) + ", " + std::to_string(config_.height) +
                     ", " + std::to_string(config_.width) + "] input, got " + to_string(batch.shape()));
  }
}

Tensor Network::run(const Tensor& batch, const ForwardContext& ctx, std::vector<LayerCache>& caches) const {
  check_input(batch);
  caches.assign(layers_.size(), LayerCache{});
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      x = std::visit([&](const auto& l) { return l.forward(x, ctx, caches[i]); }, layers_[i]);
    } catch (const NumericError& e) {
      throw NumericError(layer_label(i, config_.layers[i].kind) + ": " + e.what());
    }
    if (!all_finite(x)) {
      require_finite(x, "forward " + layer_label(i, config_.layers[i].kind));
    }
  }
  return x;
}

ForwardResult Network::forward(const Tensor& batch, Rng& rng) {
  ForwardResult result;
  const ForwardContext ctx{mode_ == Mode::kTrain, &rng};
  result.probabilities = run(batch, ctx, result.cache.layers);
  result.cache.version = version_;
  result.cache.train = ctx.train;
  result.cache.batch = batch.dim(0);
  if (ctx.train) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::visit([&](auto& l) { l.commit_stats(result.cache.layers[i]); }, layers_[i]);
    }
  }
  return result;
}

Tensor Network::predict(const Tensor& batch) const {
  std::vector<LayerCache> caches;
  return run(batch, ForwardContext{false, nullptr}, caches);
}

Gradients Network::backward(const ForwardCache& cache, const Tensor& grad_loss) const {
  if (!cache.train) throw Error("backward needs a cache from a train-mode forward");
  if (cache.version != version_ || cache.layers.size() != layers_.size()) {
    throw Error("stale forward cache: parameters changed since the forward pass");
  }
  if (grad_loss.shape() != Shape{cache.batch, 1}) {
    throw ShapeError("loss gradient must be [" + std::to_string(cache.batch) + "x1], got " +
                     to_string(grad_loss.shape()));
  }
  std::vector<std::vector<Tensor>> per_layer(layers_.size());
  Tensor g = grad_loss;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = std::visit([&](const auto& l) { return l.backward(g, cache.layers[i], per_layer[i]); }, layers_[i]);
  }
  Gradients grads;
  for (auto& lg : per_layer) {
    for (Tensor& t : lg) grads.tensors.push_back(std::move(t));
  }
  return grads;
}

std::vector<Param*> Network::parameters() {
  std::vector<Param*> out;
  for (Layer& layer : layers_) std::visit([&](auto& l) { l.collect_params(out); }, layer);
  return out;
}

std::vector<const Param*> Network::parameters() const {
  std::vector<const Param*> out;
  for (const Layer& layer : layers_) std::visit([&](const auto& l) { l.collect_params(out); }, layer);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : parameters()) n += p->value.size();
  return n;
}

StateList Network::state() {
  StateList out;
  for (Layer& layer : layers_) std::visit([&](auto& l) { l.collect_state(out); }, layer);
  return out;
}

LossValue bce_loss(const Tensor& probabilities, const Tensor& labels, std::span<const double> weights) {
  if (probabilities.rank() != 2 || probabilities.dim(1) != 1 || labels.shape() != probabilities.shape()) {
    throw ShapeError("bce_loss needs matching [N, 1] tensors, got " + to_string(probabilities.shape()) + " and " +
                     to_string(labels.shape()));
  }
  const std::size_t n = probabilities.dim(0);
  if (!weights.empty() && weights.size() != n) {
    throw ShapeError("bce_loss weights have " + std::to_string(weights.size()) + " entries for a batch of " +
                     std::to_string(n));
  }
  LossValue loss;
  loss.grad_wrt_output = Tensor::zeros_like(probabilities);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = labels[i];
    if (l != 0.0 && l != 1.0) {
      throw ValidationError("label at row " + std::to_string(i) + " is " + std::to_string(l) + ", expected 0 or 1");
    }
    const double w = weights.empty() ? 1.0 : weights[i];
    if (!(w >= 0.0)) throw ValidationError("negative loss weight at row " + std::to_string(i));
    const double p = std::clamp(probabilities[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    total += w * (l == 1.0 ? -std::log(p) : -std::log(1.0 - p));
    loss.grad_wrt_output[i] = w * (p - l) / (p * (1.0 - p)) / static_cast<double>(n);
  }
  loss.value = total / static_cast<double>(n);
  return loss;
}

void sgd_momentum_step(Param& param, const Tensor& grad, double lr, double momentum) {
  if (grad.shape() != param.value.shape()) {
    throw ShapeError("gradient " + to_string(grad.shape()) + " does not match parameter " + param.name + " " +
                     to_string(param.value.shape()));
  }
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    param.velocity[i] = momentum * param.velocity[i] + grad[i];
    param.value[i] -= lr * param.velocity[i];
  }
}

void sgd_momentum_step(Network& net, const Gradients& grads, double lr, double momentum) {
  std::vector<Param*> params = net.parameters();
  if (params.size() != grads.tensors.size()) {
    throw ShapeError("got " + std::to_string(grads.tensors.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) sgd_momentum_step(*params[i], grads.tensors[i], lr, momentum);
  net.mark_updated();
}

double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), kGradCheckFloor);
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

std::vector<std::pair<std::string, double>> GradCheckReport::per_layer() const {
  std::map<std::string, double> worst;
  for (const auto& e : entries) {
    const std::string layer = e.param.substr(0, e.param.find('.'));
    worst[layer] = std::max(worst[layer], e.max_rel_error);
  }
  return {worst.begin(), worst.end()};
}

namespace {

double loss_at(Network& net, const Tensor& batch, const Tensor& labels, std::uint64_t mask_seed) {
  Rng rng(mask_seed);
  return bce_loss(net.forward(batch, rng).probabilities, labels).value;
}

}  // namespace

Gradients loss_gradients(const Network& net, const Tensor& batch, const Tensor& labels, std::uint64_t mask_seed) {
  Network work = net;
  work.set_mode(Mode::kTrain);
  Rng rng(mask_seed);
  ForwardResult fr = work.forward(batch, rng);
  const LossValue loss = bce_loss(fr.probabilities, labels);
  return work.backward(fr.cache, loss.grad_wrt_output);
}

GradCheckReport compare_gradients(const Network& net, const Tensor& batch, const Tensor& labels,
                                  const Gradients& analytic, double eps, std::uint64_t mask_seed) {
  Network work = net;
  work.set_mode(Mode::kTrain);
  std::vector<Param*> params = work.parameters();
  if (params.size() != analytic.tensors.size()) {
    throw ShapeError("analytic gradient count does not match the parameter count");
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Param& param = *params[p];
    GradCheckEntry entry{param.name, param.value.size(), 0.0};
    for (std::size_t i = 0; i < param.value.size(); ++i) {
      const double original = param.value[i];
      param.value[i] = original + eps;
      const double up = loss_at(work, batch, labels, mask_seed);
      param.value[i] = original - eps;
      const double down = loss_at(work, batch, labels, mask_seed);
      param.value[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic.tensors[p][i], numeric));
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

GradCheckReport grad_check(const Network& net, const Tensor& batch, const Tensor& labels, double eps,
                           std::uint64_t mask_seed) {
  return compare_gradients(net, batch, labels, loss_gradients(net, batch, labels, mask_seed), eps, mask_seed);
}

}  // namespace pseudocam
