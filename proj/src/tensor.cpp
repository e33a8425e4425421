#include "pseudocam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pseudocam/error.hpp"

namespace pseudocam {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

void check_dims(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool all_finite(const Tensor& t) noexcept {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const std::string& where) {
  const auto values = t.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(where + ": non-finite value at index " + std::to_string(i));
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
  require_finite(out, "matmul");
  return out;
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transpose needs a matrix, got " + to_string(m.shape()));
  const std::size_t r = m.dim(0), c = m.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m[i * c + j];
  }
  return out;
}

Tensor map_elementwise(const Tensor& t, const std::function<double(double)>& f) {
  Tensor out = Tensor::zeros_like(t);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = f(t[i]);
    if (!std::isfinite(v)) {
      throw NumericError("map_elementwise: non-finite value at index " + std::to_string(i));
    }
    out[i] = v;
  }
  return out;
}

Tensor reduce(const Tensor& t, std::span<const std::size_t> axes, ReduceMode mode) {
  const std::size_t rank = t.rank();
  std::vector<bool> dropped(rank, false);
  for (std::size_t axis : axes) {
    if (axis >= rank) {
      throw ShapeError("reduce axis " + std::to_string(axis) + " invalid for " + to_string(t.shape()));
    }
    dropped[axis] = true;
  }
  if (t.empty()) throw ShapeError("reduce over an empty extent");

  Shape out_shape;
  for (std::size_t d = 0; d < rank; ++d) {
    if (!dropped[d]) out_shape.push_back(t.dim(d));
  }
  Tensor out(out_shape, mode == ReduceMode::kMax ? -std::numeric_limits<double>::infinity() : 0.0);
  const std::size_t count = t.size() / out.size();

  // Walk the input in row-major order; accumulation order is fixed.
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t flat = 0; flat < t.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      if (!dropped[d]) o = o * t.dim(d) + index[d];
    }
    if (mode == ReduceMode::kMean) {
      out[o] += t[flat];
    } else {
      out[o] = std::max(out[o], t[flat]);
    }
    for (std::size_t d = rank; d-- > 0;) {
      if (++index[d] < t.dim(d)) break;
      index[d] = 0;
    }
  }
  if (mode == ReduceMode::kMean) {
    for (double& v : out.values()) v /= static_cast<double>(count);
  }
  return out;
}

Tensor reduce(const Tensor& t, std::initializer_list<std::size_t> axes, ReduceMode mode) {
  return reduce(t, std::span<const std::size_t>(axes.begin(), axes.size()), mode);
}

Tensor axpby(double alpha, const Tensor& a, double beta, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("axpby shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor out = Tensor::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i] + beta * b[i];
  return out;
}

double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace pseudocam
