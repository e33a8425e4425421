#include "pseudocam/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pseudocam/error.hpp"

namespace pseudocam {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv3x3: return "conv3x3";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kGapGmpConcat: return "gap_gmp_concat";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kDenseBlock: return "dense_block";
    case LayerKind::kTransition: return "transition";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kConv3x3, LayerKind::kBatchNorm, LayerKind::kRelu,
                      LayerKind::kSigmoid, LayerKind::kGapGmpConcat, LayerKind::kDropout,
                      LayerKind::kDenseBlock, LayerKind::kTransition}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.units = units;
  return s;
}
LayerSpec LayerSpec::conv3x3(std::size_t channels, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::kConv3x3;
  s.channels = channels;
  s.bias = bias;
  return s;
}
LayerSpec LayerSpec::batchnorm() {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  return s;
}
LayerSpec LayerSpec::relu() { return LayerSpec{}; }
LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::kSigmoid;
  return s;
}
LayerSpec LayerSpec::gap_gmp_concat() {
  LayerSpec s;
  s.kind = LayerKind::kGapGmpConcat;
  return s;
}
LayerSpec LayerSpec::dropout_layer(double probability) {
  LayerSpec s;
  s.kind = LayerKind::kDropout;
  s.dropout = probability;
  return s;
}
LayerSpec LayerSpec::dense_block(std::size_t depth, std::size_t growth) {
  LayerSpec s;
  s.kind = LayerKind::kDenseBlock;
  s.depth = depth;
  s.growth = growth;
  return s;
}
LayerSpec LayerSpec::transition(double compression) {
  LayerSpec s;
  s.kind = LayerKind::kTransition;
  s.compression = compression;
  return s;
}

std::size_t transition_channels(std::size_t m, double compression) {
  return static_cast<std::size_t>(std::floor(compression * static_cast<double>(m)));
}

namespace {

Param make_param(std::string name, Shape shape) {
  Tensor value(shape);
  return Param{std::move(name), std::move(value), Tensor(std::move(shape))};
}

void he_init(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : w.values()) v = rng.normal(0.0, stddev);
}

void require_rank(const Tensor& x, std::size_t rank, const char* layer) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(layer) + " expects rank-" + std::to_string(rank) + " input, got " +
                     to_string(x.shape()));
  }
}

// Spatial extent of a [N, C, ...] tensor.
std::size_t spatial_size(const Tensor& x) { return x.size() / (x.dim(0) * x.dim(1)); }

}  // namespace

// ---------------------------------------------------------------------------
// Conv

Conv::Conv(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng,
           bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      weight_(make_param(name + ".weight", {out_channels, in_channels, kernel, kernel})) {
  if (bias) bias_ = make_param(name + ".bias", {out_channels});
  if (kernel % 2 == 0) throw ConfigError("conv kernel must be odd");
  he_init(weight_.value, in_channels * kernel * kernel, rng);
}

Shape Conv::output_shape(const Shape& in) const {
  if (in.size() != 3 || in[0] != in_) {
    throw ShapeError("conv expects [" + std::to_string(in_) + ", H, W] input, got " + to_string(in));
  }
  return {out_, in[1], in[2]};
}

Tensor Conv::forward(const Tensor& x, const ForwardContext&, LayerCache& cache) const {
  require_rank(x, 4, "conv");
  const std::size_t n_batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (x.dim(1) != in_) throw ShapeError("conv channel mismatch: " + to_string(x.shape()));
  const long pad = static_cast<long>(kernel_ / 2);
  const long hh = static_cast<long>(h), ww = static_cast<long>(w);
  Tensor y({n_batch, out_, h, w});
  const auto xs = x.values();
  auto ys = y.values();
  const auto ws = weight_.value.values();
  const std::size_t plane = h * w;

  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < out_; ++o) {
      double* out_plane = &ys[(n * out_ + o) * plane];
      std::fill(out_plane, out_plane + plane, bias_ ? bias_->value[o] : 0.0);
      for (std::size_t c = 0; c < in_; ++c) {
        const double* in_plane = &xs[(n * in_ + c) * plane];
        for (std::size_t kh = 0; kh < kernel_; ++kh) {
          const long dy = static_cast<long>(kh) - pad;
          for (std::size_t kw = 0; kw < kernel_; ++kw) {
            const long dx = static_cast<long>(kw) - pad;
            const double wv = ws[((o * in_ + c) * kernel_ + kh) * kernel_ + kw];
            const long r0 = std::max(0L, -dy), r1 = std::min(hh, hh - dy);
            const long c0 = std::max(0L, -dx), c1 = std::min(ww, ww - dx);
            for (long r = r0; r < r1; ++r) {
              double* dst = out_plane + r * ww;
              const double* src = in_plane + (r + dy) * ww + dx;
              for (long col = c0; col < c1; ++col) dst[col] += wv * src[col];
            }
          }
        }
      }
    }
  }
  cache.saved = {x};
  return y;
}

Tensor Conv::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  const Tensor& x = cache.saved.at(0);
  const std::size_t n_batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const long pad = static_cast<long>(kernel_ / 2);
  const long hh = static_cast<long>(h), ww = static_cast<long>(w);
  const std::size_t plane = h * w;
  Tensor gx = Tensor::zeros_like(x);
  Tensor gw = Tensor::zeros_like(weight_.value);
  Tensor gb = bias_ ? Tensor::zeros_like(bias_->value) : Tensor{};
  const auto xs = x.values();
  const auto gys = grad_out.values();
  const auto ws = weight_.value.values();
  auto gxs = gx.values();
  auto gws = gw.values();

  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < out_; ++o) {
      const double* gy_plane = &gys[(n * out_ + o) * plane];
      if (bias_) {
        double bsum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) bsum += gy_plane[i];
        gb[o] += bsum;
      }
      for (std::size_t c = 0; c < in_; ++c) {
        const double* in_plane = &xs[(n * in_ + c) * plane];
        double* gin_plane = &gxs[(n * in_ + c) * plane];
        for (std::size_t kh = 0; kh < kernel_; ++kh) {
          const long dy = static_cast<long>(kh) - pad;
          for (std::size_t kw = 0; kw < kernel_; ++kw) {
            const long dx = static_cast<long>(kw) - pad;
            const std::size_t widx = ((o * in_ + c) * kernel_ + kh) * kernel_ + kw;
            const double wv = ws[widx];
            const long r0 = std::max(0L, -dy), r1 = std::min(hh, hh - dy);
            const long c0 = std::max(0L, -dx), c1 = std::min(ww, ww - dx);
            double acc = 0.0;
            for (long r = r0; r < r1; ++r) {
              const double* g = gy_plane + r * ww;
              const double* src = in_plane + (r + dy) * ww + dx;
              double* dst = gin_plane + (r + dy) * ww + dx;
              for (long col = c0; col < c1; ++col) {
                acc += g[col] * src[col];
                dst[col] += wv * g[col];
              }
            }
            gws[widx] += acc;
          }
        }
      }
    }
  }
  grads.clear();
  grads.push_back(std::move(gw));
  if (bias_) grads.push_back(std::move(gb));
  return gx;
}

void Conv::collect_state(StateList& out) {
  out.emplace_back(weight_.name, &weight_.value);
  out.emplace_back(weight_.name + ".velocity", &weight_.velocity);
  if (bias_) {
    out.emplace_back(bias_->name, &bias_->value);
    out.emplace_back(bias_->name + ".velocity", &bias_->velocity);
  }
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, std::size_t in_features, std::size_t out_features, Rng& rng)
    : in_(in_features),
      out_(out_features),
      weight_(make_param(name + ".weight", {in_features, out_features})),
      bias_(make_param(name + ".bias", {out_features})) {
  he_init(weight_.value, in_features, rng);
}

Shape Dense::output_shape(const Shape& in) const {
  if (in.size() != 1 || in[0] != in_) {
    throw ShapeError("dense expects [" + std::to_string(in_) + "] input, got " + to_string(in));
  }
  return {out_};
}

Tensor Dense::forward(const Tensor& x, const ForwardContext&, LayerCache& cache) const {
  require_rank(x, 2, "dense");
  Tensor y = matmul(x, weight_.value);
  for (std::size_t n = 0; n < y.dim(0); ++n) {
    for (std::size_t j = 0; j < out_; ++j) y.at(n, j) += bias_.value[j];
  }
  cache.saved = {x};
  return y;
}

Tensor Dense::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  const Tensor& x = cache.saved.at(0);
  Tensor gw = matmul(transpose(x), grad_out);
  Tensor gb({out_});
  for (std::size_t n = 0; n < grad_out.dim(0); ++n) {
    for (std::size_t j = 0; j < out_; ++j) gb[j] += grad_out.at(n, j);
  }
  Tensor gx = matmul(grad_out, transpose(weight_.value));
  grads = {std::move(gw), std::move(gb)};
  return gx;
}

void Dense::collect_state(StateList& out) {
  out.emplace_back(weight_.name, &weight_.value);
  out.emplace_back(weight_.name + ".velocity", &weight_.velocity);
  out.emplace_back(bias_.name, &bias_.value);
  out.emplace_back(bias_.name + ".velocity", &bias_.velocity);
}

// ---------------------------------------------------------------------------
// BatchNorm
//
// Train-mode cache layout: saved = {x_hat, inv_std, batch_mean, batch_var}.

BatchNorm::BatchNorm(std::string name, std::size_t features)
    : name_(std::move(name)),
      features_(features),
      gamma_(make_param(name_ + ".gamma", {features})),
      beta_(make_param(name_ + ".beta", {features})),
      running_mean_({features}, 0.0),
      running_var_({features}, 1.0) {
  gamma_.value.fill(1.0);
}

Shape BatchNorm::output_shape(const Shape& in) const {
  if ((in.size() != 1 && in.size() != 3) || in[0] != features_) {
    throw ShapeError("batchnorm expects " + std::to_string(features_) + " features, got " + to_string(in));
  }
  return in;
}

Tensor BatchNorm::forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const {
  if ((x.rank() != 2 && x.rank() != 4) || x.dim(1) != features_) {
    throw ShapeError("batchnorm input " + to_string(x.shape()) + " does not have " + std::to_string(features_) +
                     " channels");
  }
  const std::size_t n_batch = x.dim(0), s = spatial_size(x), f = features_;
  Tensor y = Tensor::zeros_like(x);
  if (!ctx.train) {
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t c = 0; c < f; ++c) {
        const double scale = gamma_.value[c] / std::sqrt(running_var_[c] + kEpsilon);
        const std::size_t base = (n * f + c) * s;
        for (std::size_t i = 0; i < s; ++i) {
          y[base + i] = scale * (x[base + i] - running_mean_[c]) + beta_.value[c];
        }
      }
    }
    cache.saved.clear();
    return y;
  }

  const double count = static_cast<double>(n_batch * s);
  Tensor mean({f}), var({f}), inv_std({f});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t base = (n * f + c) * s;
      for (std::size_t i = 0; i < s; ++i) mean[c] += x[base + i];
    }
  }
  for (double& m : mean.values()) m /= count;
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t base = (n * f + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        const double d = x[base + i] - mean[c];
        var[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < f; ++c) {
    var[c] /= count;
    inv_std[c] = 1.0 / std::sqrt(var[c] + kEpsilon);
  }
  Tensor x_hat = Tensor::zeros_like(x);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t base = (n * f + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        x_hat[base + i] = (x[base + i] - mean[c]) * inv_std[c];
        y[base + i] = gamma_.value[c] * x_hat[base + i] + beta_.value[c];
      }
    }
  }
  cache.saved = {std::move(x_hat), std::move(inv_std), std::move(mean), std::move(var)};
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  if (cache.saved.size() != 4) throw Error("batchnorm backward needs a train-mode cache");
  const Tensor& x_hat = cache.saved[0];
  const Tensor& inv_std = cache.saved[1];
  const std::size_t n_batch = x_hat.dim(0), s = spatial_size(x_hat), f = features_;
  const double count = static_cast<double>(n_batch * s);

  Tensor g_gamma({f}), g_beta({f});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t base = (n * f + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        g_beta[c] += grad_out[base + i];
        g_gamma[c] += grad_out[base + i] * x_hat[base + i];
      }
    }
  }
  Tensor gx = Tensor::zeros_like(x_hat);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < f; ++c) {
      const double k = gamma_.value[c] * inv_std[c] / count;
      const std::size_t base = (n * f + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        gx[base + i] = k * (count * grad_out[base + i] - g_beta[c] - x_hat[base + i] * g_gamma[c]);
      }
    }
  }
  grads = {std::move(g_gamma), std::move(g_beta)};
  return gx;
}

void BatchNorm::commit_stats(const LayerCache& cache) {
  if (cache.saved.size() != 4) return;
  const Tensor& mean = cache.saved[2];
  const Tensor& var = cache.saved[3];
  const double count = static_cast<double>(cache.saved[0].size() / features_);
  const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
  for (std::size_t c = 0; c < features_; ++c) {
    running_mean_[c] = kMomentum * running_mean_[c] + (1.0 - kMomentum) * mean[c];
    running_var_[c] = kMomentum * running_var_[c] + (1.0 - kMomentum) * var[c] * unbias;
  }
}

void BatchNorm::collect_state(StateList& out) {
  out.emplace_back(gamma_.name, &gamma_.value);
  out.emplace_back(gamma_.name + ".velocity", &gamma_.velocity);
  out.emplace_back(beta_.name, &beta_.value);
  out.emplace_back(beta_.name + ".velocity", &beta_.velocity);
  out.emplace_back(name_ + ".running_mean", &running_mean_);
  out.emplace_back(name_ + ".running_var", &running_var_);
}

// ---------------------------------------------------------------------------
// Activations

Tensor Relu::forward(const Tensor& x, const ForwardContext&, LayerCache& cache) const {
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = relu(x[i]);
  cache.saved = {x};
  return y;
}

Tensor Relu::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  const Tensor& x = cache.saved.at(0);
  Tensor gx = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  grads.clear();
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x, const ForwardContext&, LayerCache& cache) const {
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  cache.saved = {y};
  return y;
}

Tensor Sigmoid::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  const Tensor& y = cache.saved.at(0);
  Tensor gx = Tensor::zeros_like(y);
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  grads.clear();
  return gx;
}

// ---------------------------------------------------------------------------
// GAP + GMP

Shape GapGmpConcat::output_shape(const Shape& in) const {
  if (in.size() != 3) throw ShapeError("gap_gmp_concat expects [C, H, W], got " + to_string(in));
  return {2 * in[0]};
}

Tensor GapGmpConcat::forward(const Tensor& x, const ForwardContext&, LayerCache& cache) const {
  require_rank(x, 4, "gap_gmp_concat");
  const std::size_t n_batch = x.dim(0), c_count = x.dim(1), s = spatial_size(x);
  Tensor y({n_batch, 2 * c_count});
  Tensor argmax({n_batch, c_count});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < c_count; ++c) {
      const std::size_t base = (n * c_count + c) * s;
      double sum = 0.0;
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < s; ++i) {
        sum += x[base + i];
        if (x[base + i] > best) {
          best = x[base + i];
          best_i = i;
        }
      }
      y.at(n, c) = sum / static_cast<double>(s);
      y.at(n, c_count + c) = best;
      argmax.at(n, c) = static_cast<double>(best_i);
    }
  }
  cache.saved = {std::move(argmax), Tensor({x.rank()}, {static_cast<double>(x.dim(0)), static_cast<double>(x.dim(1)),
                                                        static_cast<double>(x.dim(2)), static_cast<double>(x.dim(3))})};
  return y;
}

Tensor GapGmpConcat::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  const Tensor& argmax = cache.saved.at(0);
  const Tensor& dims = cache.saved.at(1);
  Shape shape;
  for (double d : dims.values()) shape.push_back(static_cast<std::size_t>(d));
  Tensor gx(shape);
  const std::size_t n_batch = shape[0], c_count = shape[1], s = shape[2] * shape[3];
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < c_count; ++c) {
      const std::size_t base = (n * c_count + c) * s;
      const double g_mean = grad_out.at(n, c) / static_cast<double>(s);
      for (std::size_t i = 0; i < s; ++i) gx[base + i] = g_mean;
      gx[base + static_cast<std::size_t>(argmax.at(n, c))] += grad_out.at(n, c_count + c);
    }
  }
  grads.clear();
  return gx;
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(double probability) : p_(probability) {
  if (!(probability >= 0.0 && probability < 1.0)) {
    throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(probability));
  }
}

Tensor Dropout::forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const {
  if (!ctx.train || p_ == 0.0) {
    cache.saved.clear();
    return x;
  }
  if (ctx.rng == nullptr) throw Error("train-mode dropout needs a random stream");
  Tensor mask = Tensor::zeros_like(x);
  const double keep_scale = 1.0 / (1.0 - p_);
  for (double& m : mask.values()) m = ctx.rng->uniform() >= p_ ? keep_scale : 0.0;
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
  cache.saved = {std::move(mask)};
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  grads.clear();
  if (cache.saved.empty()) return grad_out;
  const Tensor& mask = cache.saved[0];
  Tensor gx = Tensor::zeros_like(grad_out);
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = grad_out[i] * mask[i];
  return gx;
}

// ---------------------------------------------------------------------------
// Channel helpers

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("cannot concatenate " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t n_batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), s = a.dim(2) * a.dim(3);
  Tensor out({n_batch, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < n_batch; ++n) {
    std::copy_n(&a.values()[n * ca * s], ca * s, &out.values()[n * (ca + cb) * s]);
    std::copy_n(&b.values()[n * cb * s], cb * s, &out.values()[(n * (ca + cb) + ca) * s]);
  }
  return out;
}

Tensor slice_channels(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() != 4 || begin >= end || end > t.dim(1)) {
    throw ShapeError("bad channel slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     to_string(t.shape()));
  }
  const std::size_t n_batch = t.dim(0), c_all = t.dim(1), c = end - begin, s = t.dim(2) * t.dim(3);
  Tensor out({n_batch, c, t.dim(2), t.dim(3)});
  for (std::size_t n = 0; n < n_batch; ++n) {
    std::copy_n(&t.values()[(n * c_all + begin) * s], c * s, &out.values()[n * c * s]);
  }
  return out;
}

namespace {

void add_into(Tensor& acc, const Tensor& t) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
}

void append(std::vector<Tensor>& dst, std::vector<Tensor>& src) {
  for (Tensor& t : src) dst.push_back(std::move(t));
  src.clear();
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseBlock
//
// Cache: children[3 * l + {0, 1, 2}] = {bn, relu, conv} of unit l.

DenseBlock::DenseBlock(std::string name, std::size_t in_channels, std::size_t depth, std::size_t growth, Rng& rng)
    : in_(in_channels), growth_(growth) {
  if (depth == 0) throw ConfigError("dense_block depth must be >= 1");
  if (growth == 0) throw ConfigError("dense_block growth must be >= 1");
  units_.reserve(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t c = in_channels + l * growth;
    const std::string prefix = name + ".unit" + std::to_string(l);
    units_.push_back(Unit{BatchNorm(prefix + ".bn", c), Conv(prefix + ".conv", c, growth, 3, rng, false)});
  }
}

Shape DenseBlock::output_shape(const Shape& in) const {
  if (in.size() != 3 || in[0] != in_) {
    throw ShapeError("dense_block expects [" + std::to_string(in_) + ", H, W], got " + to_string(in));
  }
  return {out_channels(), in[1], in[2]};
}

std::size_t DenseBlock::connection_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < units_.size(); ++l) {
    // Sources visible to unit l: the block input and each earlier unit.
    const std::size_t input_channels = units_[l].conv.in_channels();
    total += 1 + (input_channels - in_) / growth_;
  }
  return total;
}

Tensor DenseBlock::forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const {
  cache.saved.clear();
  cache.children.assign(3 * units_.size(), LayerCache{});
  Tensor features = x;
  const Relu act;
  for (std::size_t l = 0; l < units_.size(); ++l) {
    Tensor h = units_[l].norm.forward(features, ctx, cache.children[3 * l]);
    h = act.forward(h, ctx, cache.children[3 * l + 1]);
    Tensor y = units_[l].conv.forward(h, ctx, cache.children[3 * l + 2]);
    features = concat_channels(features, y);
  }
  return features;
}

Tensor DenseBlock::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  std::vector<std::vector<Tensor>> unit_grads(units_.size());
  Tensor g = grad_out;
  const Relu act;
  std::vector<Tensor> scratch;
  for (std::size_t l = units_.size(); l-- > 0;) {
    const std::size_t c_in = in_ + l * growth_;
    Tensor g_new = slice_channels(g, c_in, c_in + growth_);
    Tensor g_prefix = slice_channels(g, 0, c_in);

    std::vector<Tensor> conv_grads, bn_grads;
    Tensor gh = units_[l].conv.backward(g_new, cache.children.at(3 * l + 2), conv_grads);
    gh = act.backward(gh, cache.children.at(3 * l + 1), scratch);
    Tensor gx = units_[l].norm.backward(gh, cache.children.at(3 * l), bn_grads);
    add_into(g_prefix, gx);
    g = std::move(g_prefix);

    append(unit_grads[l], bn_grads);
    append(unit_grads[l], conv_grads);
  }
  grads.clear();
  for (auto& ug : unit_grads) append(grads, ug);
  return g;
}

void DenseBlock::collect_params(std::vector<Param*>& out) {
  for (Unit& u : units_) {
    u.norm.collect_params(out);
    u.conv.collect_params(out);
  }
}

void DenseBlock::collect_params(std::vector<const Param*>& out) const {
  for (const Unit& u : units_) {
    u.norm.collect_params(out);
    u.conv.collect_params(out);
  }
}

void DenseBlock::collect_state(StateList& out) {
  for (Unit& u : units_) {
    u.norm.collect_state(out);
    u.conv.collect_state(out);
  }
}

void DenseBlock::commit_stats(const LayerCache& cache) {
  for (std::size_t l = 0; l < units_.size() && 3 * l < cache.children.size(); ++l) {
    units_[l].norm.commit_stats(cache.children[3 * l]);
  }
}

// ---------------------------------------------------------------------------
// Transition
//
// Cache: children = {bn, relu, conv}; saved = {conv output} for the pool.

namespace {

std::size_t checked_transition_channels(std::size_t in_channels, double compression) {
  const std::size_t out = transition_channels(in_channels, compression);
  if (out == 0) throw ConfigError("transition after " + std::to_string(in_channels) + " maps would emit zero maps");
  return out;
}

}  // namespace

Transition::Transition(std::string name, std::size_t in_channels, double compression, Rng& rng)
    : norm_(name + ".bn", in_channels),
      conv_(name + ".conv", in_channels, checked_transition_channels(in_channels, compression), 1, rng, false) {}

Shape Transition::output_shape(const Shape& in) const {
  if (in.size() != 3 || in[0] != conv_.in_channels()) {
    throw ShapeError("transition expects [" + std::to_string(conv_.in_channels()) + ", H, W], got " + to_string(in));
  }
  if (in[1] < 2 || in[2] < 2) throw ShapeError("transition pooling needs maps of at least 2x2, got " + to_string(in));
  return {conv_.out_channels(), in[1] / 2, in[2] / 2};
}

Tensor Transition::forward(const Tensor& x, const ForwardContext& ctx, LayerCache& cache) const {
  cache.children.assign(3, LayerCache{});
  Tensor h = norm_.forward(x, ctx, cache.children[0]);
  h = Relu{}.forward(h, ctx, cache.children[1]);
  Tensor z = conv_.forward(h, ctx, cache.children[2]);

  const std::size_t n_batch = z.dim(0), c_count = z.dim(1), hh = z.dim(2), ww = z.dim(3);
  const std::size_t oh = hh / 2, ow = ww / 2;
  Tensor y({n_batch, c_count, oh, ow});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < c_count; ++c) {
      const double* src = &z.values()[(n * c_count + c) * hh * ww];
      double* dst = &y.values()[(n * c_count + c) * oh * ow];
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t col = 0; col < ow; ++col) {
          const double* p = src + 2 * r * ww + 2 * col;
          dst[r * ow + col] = 0.25 * (p[0] + p[1] + p[ww] + p[ww + 1]);
        }
      }
    }
  }
  cache.saved = {Tensor({4}, {static_cast<double>(n_batch), static_cast<double>(c_count), static_cast<double>(hh),
                              static_cast<double>(ww)})};
  return y;
}

Tensor Transition::backward(const Tensor& grad_out, const LayerCache& cache, std::vector<Tensor>& grads) const {
  const Tensor& dims = cache.saved.at(0);
  const std::size_t n_batch = static_cast<std::size_t>(dims[0]), c_count = static_cast<std::size_t>(dims[1]);
  const std::size_t hh = static_cast<std::size_t>(dims[2]), ww = static_cast<std::size_t>(dims[3]);
  const std::size_t oh = hh / 2, ow = ww / 2;
  Tensor gz({n_batch, c_count, hh, ww});
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < c_count; ++c) {
      double* dst = &gz.values()[(n * c_count + c) * hh * ww];
      const double* src = &grad_out.values()[(n * c_count + c) * oh * ow];
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t col = 0; col < ow; ++col) {
          const double g = 0.25 * src[r * ow + col];
          double* p = dst + 2 * r * ww + 2 * col;
          p[0] = g;
          p[1] = g;
          p[ww] = g;
          p[ww + 1] = g;
        }
      }
    }
  }
  std::vector<Tensor> conv_grads, bn_grads, scratch;
  Tensor gh = conv_.backward(gz, cache.children.at(2), conv_grads);
  gh = Relu{}.backward(gh, cache.children.at(1), scratch);
  Tensor gx = norm_.backward(gh, cache.children.at(0), bn_grads);
  grads.clear();
  append(grads, bn_grads);
  append(grads, conv_grads);
  return gx;
}

void Transition::collect_params(std::vector<Param*>& out) {
  norm_.collect_params(out);
  conv_.collect_params(out);
}

void Transition::collect_params(std::vector<const Param*>& out) const {
  norm_.collect_params(out);
  conv_.collect_params(out);
}

void Transition::collect_state(StateList& out) {
  norm_.collect_state(out);
  conv_.collect_state(out);
}

void Transition::commit_stats(const LayerCache& cache) {
  if (!cache.children.empty()) norm_.commit_stats(cache.children[0]);
}

}  // namespace pseudocam
