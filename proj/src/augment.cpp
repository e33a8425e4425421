#include "pseudocam/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "pseudocam/error.hpp"

namespace pseudocam {

std::string_view augment_kind_name(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::kHflip: return "hflip";
    case AugmentKind::kVflip: return "vflip";
    case AugmentKind::kRotate: return "rotate";
    case AugmentKind::kCropPad: return "crop_pad";
    case AugmentKind::kScale: return "scale";
    case AugmentKind::kTranslate: return "translate";
    case AugmentKind::kSharpenBlend: return "sharpen_blend";
    case AugmentKind::kEmbossBlend: return "emboss_blend";
    case AugmentKind::kGaussianNoise: return "gaussian_noise";
    case AugmentKind::kHueSaturation: return "hue_saturation";
    case AugmentKind::kBrightness: return "brightness";
    case AugmentKind::kContrast: return "contrast";
  }
  return "unknown";
}

namespace {

bool is_quarter_turn(double degrees) { return std::fmod(degrees, 90.0) == 0.0; }

void require_within(const Range& r, double lo, double hi, AugmentKind kind) {
  if (!(r.lo <= r.hi && r.lo >= lo && r.hi <= hi)) {
    throw ValidationError(std::string(augment_kind_name(kind)) + " range [" + std::to_string(r.lo) + ", " +
                          std::to_string(r.hi) + "] outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace

void AugmentSpec::validate() const {
  switch (kind) {
    case AugmentKind::kHflip:
    case AugmentKind::kVflip: return;
    case AugmentKind::kRotate:
      if (a.lo == a.hi && is_quarter_turn(a.lo)) return;
      require_within(a, -45.0, 45.0, kind);
      return;
    case AugmentKind::kCropPad: require_within(a, 0.0, 0.2, kind); return;
    case AugmentKind::kScale: require_within(a, 0.8, 1.2, kind); return;
    case AugmentKind::kTranslate:
      require_within(a, -0.2, 0.2, kind);
      require_within(b, -0.2, 0.2, kind);
      return;
    case AugmentKind::kSharpenBlend:
    case AugmentKind::kEmbossBlend: require_within(a, 0.0, 1.0, kind); return;
    case AugmentKind::kGaussianNoise: require_within(a, 0.0, 0.5, kind); return;
    case AugmentKind::kHueSaturation:
      require_within(a, -0.5, 0.5, kind);
      require_within(b, 0.0, 2.0, kind);
      return;
    case AugmentKind::kBrightness: require_within(a, -0.5, 0.5, kind); return;
    case AugmentKind::kContrast: require_within(a, 0.2, 3.0, kind); return;
  }
}

namespace {

double draw(const Range& r, Rng& rng) { return r.lo + (r.hi - r.lo) * rng.uniform(); }

double reflect(double v, double n) {
  if (n <= 1.0) return 0.0;
  const double period = 2.0 * (n - 1.0);
  v = std::fmod(std::abs(v), period);
  return v > n - 1.0 ? period - v : v;
}

double bilinear(const Tensor& img, std::size_t c, double y, double x) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  y = reflect(y, static_cast<double>(h));
  x = reflect(x, static_cast<double>(w));
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  auto at = [&](std::size_t yy, std::size_t xx) { return img[(c * h + yy) * w + xx]; };
  if (fy == 0.0 && fx == 0.0) return at(y0, x0);
  return (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
}

// out(y, x) = img(src(y, x)) for every channel.
template <typename Map>
Tensor resample(const Tensor& img, Map src) {
  const std::size_t c_count = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out = Tensor::zeros_like(img);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto [sy, sx] = src(static_cast<double>(y), static_cast<double>(x));
      for (std::size_t c = 0; c < c_count; ++c) out[(c * h + y) * w + x] = bilinear(img, c, sy, sx);
    }
  }
  return out;
}

Tensor flip(const Tensor& img, bool horizontal) {
  const std::size_t c_count = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out = Tensor::zeros_like(img);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = horizontal ? y : h - 1 - y;
        const std::size_t sx = horizontal ? w - 1 - x : x;
        out[(c * h + y) * w + x] = img[(c * h + sy) * w + sx];
      }
    }
  }
  return out;
}

// Inverse map: src = center + R(-theta) (p - center).
Tensor rotate(const Tensor& img, double degrees) {
  const std::size_t c_count = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (is_quarter_turn(degrees) && h == w) {
    const long turns = ((static_cast<long>(degrees / 90.0) % 4) + 4) % 4;
    if (turns == 0) return img;
    Tensor out = Tensor::zeros_like(img);
    const std::size_t n = h;
    for (std::size_t c = 0; c < c_count; ++c) {
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          std::size_t sy = y, sx = x;
          if (turns == 1) {
            sy = n - 1 - x;
            sx = y;
          } else if (turns == 2) {
            sy = n - 1 - y;
            sx = n - 1 - x;
          } else {
            sy = x;
            sx = n - 1 - y;
          }
          out[(c * n + y) * n + x] = img[(c * n + sy) * n + sx];
        }
      }
    }
    return out;
  }
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
  return resample(img, [&](double y, double x) {
    const double dx = x - cx, dy = y - cy;
    return std::pair{cy - sn * dx + cs * dy, cx + cs * dx + sn * dy};
  });
}

Tensor convolve3x3(const Tensor& img, const std::array<double, 9>& k) {
  const std::size_t c_count = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out = Tensor::zeros_like(img);
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double sy = reflect(static_cast<double>(y) + dy, static_cast<double>(h));
            const double sx = reflect(static_cast<double>(x) + dx, static_cast<double>(w));
            acc += k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] *
                   img[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
          }
        }
        out[(c * h + y) * w + x] = acc;
      }
    }
  }
  return out;
}

Tensor blend(const Tensor& original, const Tensor& effect, double alpha) {
  if (alpha == 0.0) return original;
  return axpby(1.0 - alpha, original, alpha, effect);
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = h * 6.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
  const double m = v - c;
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hh) % 6) {
    case 0: r1 = c, g1 = x; break;
    case 1: r1 = x, g1 = c; break;
    case 2: g1 = c, b1 = x; break;
    case 3: g1 = x, b1 = c; break;
    case 4: r1 = x, b1 = c; break;
    default: r1 = c, b1 = x; break;
  }
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

Tensor hue_saturation(const Tensor& img, double hue_shift, double saturation) {
  if (img.dim(0) != 3 || (hue_shift == 0.0 && saturation == 1.0)) return img;
  const std::size_t plane = img.dim(1) * img.dim(2);
  Tensor out = Tensor::zeros_like(img);
  for (std::size_t i = 0; i < plane; ++i) {
    double h, s, v;
    rgb_to_hsv(img[i], img[plane + i], img[2 * plane + i], h, s, v);
    h = std::fmod(h + hue_shift + 1.0, 1.0);
    s = std::clamp(s * saturation, 0.0, 1.0);
    hsv_to_rgb(h, s, v, out[i], out[plane + i], out[2 * plane + i]);
  }
  return out;
}

void clamp_unit(Tensor& t) {
  for (double& v : t.values()) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

Tensor apply_augment(const Tensor& patch, const AugmentSpec& spec, Rng& rng) {
  if (patch.rank() != 3 || patch.empty()) throw ShapeError("augment needs a [C, H, W] patch");
  spec.validate();
  const double h = static_cast<double>(patch.dim(1)), w = static_cast<double>(patch.dim(2));
  Tensor out;
  switch (spec.kind) {
    case AugmentKind::kHflip: out = flip(patch, true); break;
    case AugmentKind::kVflip: out = flip(patch, false); break;
    case AugmentKind::kRotate: out = rotate(patch, draw(spec.a, rng)); break;
    case AugmentKind::kCropPad: {
      const double top = draw(spec.a, rng) * h, bottom = draw(spec.a, rng) * h;
      const double left = draw(spec.a, rng) * w, right = draw(spec.a, rng) * w;
      const double sy = (h - top - bottom) / h, sx = (w - left - right) / w;
      out = resample(patch, [&](double y, double x) {
        return std::pair{top + (y + 0.5) * sy - 0.5, left + (x + 0.5) * sx - 0.5};
      });
      break;
    }
    case AugmentKind::kScale: {
      const double factor = draw(spec.a, rng);
      const double cy = (h - 1.0) / 2.0, cx = (w - 1.0) / 2.0;
      out = resample(patch, [&](double y, double x) { return std::pair{cy + (y - cy) / factor, cx + (x - cx) / factor}; });
      break;
    }
    case AugmentKind::kTranslate: {
      const double dx = draw(spec.a, rng) * w, dy = draw(spec.b, rng) * h;
      out = resample(patch, [&](double y, double x) { return std::pair{y - dy, x - dx}; });
      break;
    }
    case AugmentKind::kSharpenBlend:
      out = blend(patch, convolve3x3(patch, {0, -1, 0, -1, 5, -1, 0, -1, 0}), draw(spec.a, rng));
      break;
    case AugmentKind::kEmbossBlend:
      out = blend(patch, convolve3x3(patch, {-2, -1, 0, -1, 1, 1, 0, 1, 2}), draw(spec.a, rng));
      break;
    case AugmentKind::kGaussianNoise: {
      const double sigma = draw(spec.a, rng);
      out = patch;
      for (double& v : out.values()) v += sigma * rng.normal();
      break;
    }
    case AugmentKind::kHueSaturation: {
      const double hue = draw(spec.a, rng);
      const double sat = draw(spec.b, rng);
      out = hue_saturation(patch, hue, sat);
      break;
    }
    case AugmentKind::kBrightness: {
      const double delta = draw(spec.a, rng);
      out = patch;
      for (double& v : out.values()) v += delta;
      break;
    }
    case AugmentKind::kContrast: {
      const double factor = draw(spec.a, rng);
      double mean = 0.0;
      for (double v : patch.values()) mean += v;
      mean /= static_cast<double>(patch.size());
      out = patch;
      for (double& v : out.values()) v = mean + factor * (v - mean);
      break;
    }
  }
  clamp_unit(out);
  return out;
}

Example augment(const Example& e, const AugmentSpec& spec, Rng& rng) {
  Example out = e;
  out.patch = apply_augment(e.patch, spec, rng);
  return out;
}

std::vector<AugmentSpec> online_augmentations() {
  return {
      AugmentSpec::hflip(),
      AugmentSpec::vflip(),
      AugmentSpec::rotate(-45.0, 45.0),
      AugmentSpec::crop_pad(0.0, 0.2),
      AugmentSpec::scale(0.8, 1.2),
      AugmentSpec::translate({-0.2, 0.2}, {-0.2, 0.2}),
      AugmentSpec::sharpen_blend(0.0, 1.0),
      AugmentSpec::emboss_blend(0.0, 1.0),
      AugmentSpec::gaussian_noise(0.0, 0.05),
      AugmentSpec::hue_saturation({-0.05, 0.05}, {0.8, 1.2}),
  };
}

Tensor random_augment(const Tensor& patch, const std::vector<AugmentSpec>& specs, double probability, Rng& rng) {
  Tensor out = patch;
  for (const AugmentSpec& spec : specs) {
    if (rng.bernoulli(probability)) out = apply_augment(out, spec, rng);
  }
  return out;
}

}  // namespace pseudocam
