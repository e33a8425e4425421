#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "pseudocam/data.hpp"
#include "pseudocam/rng.hpp"
#include "pseudocam/tensor.hpp"

namespace pseudocam {

enum class AugmentKind {
  kHflip,
  kVflip,
  kRotate,
  kCropPad,
  kScale,
  kTranslate,
  kSharpenBlend,
  kEmbossBlend,
  kGaussianNoise,
  kHueSaturation,
  kBrightness,
  kContrast,
};

std::string_view augment_kind_name(AugmentKind kind);

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  bool operator==(const Range&) const = default;
};

// Parameter meaning per kind (a / b):
//   rotate          degrees, within [-45, 45]; fixed quarter turns are also
//                   accepted and applied losslessly
//   crop_pad        per-side crop fraction in [0, 0.2], each side drawn
//   scale           zoom factor in [0.8, 1.2]
//   translate       x / y shift as a fraction of the size, in [-0.2, 0.2]
//   sharpen_blend   blend alpha in [0, 1]
//   emboss_blend    blend alpha in [0, 1]
//   gaussian_noise  stddev in [0, 0.5]
//   hue_saturation  hue shift in turns, [-0.5, 0.5] / saturation factor in [0, 2]
//   brightness      additive delta in [-0.5, 0.5]
//   contrast        factor about the patch mean, in [0.2, 3]
// A range with lo == hi is a fixed parameterization.
struct AugmentSpec {
  AugmentKind kind = AugmentKind::kHflip;
  Range a;
  Range b;

  static AugmentSpec hflip() { return {AugmentKind::kHflip, {}, {}}; }
  static AugmentSpec vflip() { return {AugmentKind::kVflip, {}, {}}; }
  static AugmentSpec rotate(double lo, double hi) { return {AugmentKind::kRotate, {lo, hi}, {}}; }
  static AugmentSpec rotate(double degrees) { return rotate(degrees, degrees); }
  static AugmentSpec crop_pad(double lo, double hi) { return {AugmentKind::kCropPad, {lo, hi}, {}}; }
  static AugmentSpec scale(double lo, double hi) { return {AugmentKind::kScale, {lo, hi}, {}}; }
  static AugmentSpec translate(Range x, Range y) { return {AugmentKind::kTranslate, x, y}; }
  static AugmentSpec sharpen_blend(double lo, double hi) { return {AugmentKind::kSharpenBlend, {lo, hi}, {}}; }
  static AugmentSpec emboss_blend(double lo, double hi) { return {AugmentKind::kEmbossBlend, {lo, hi}, {}}; }
  static AugmentSpec gaussian_noise(double lo, double hi) { return {AugmentKind::kGaussianNoise, {lo, hi}, {}}; }
  static AugmentSpec hue_saturation(Range hue, Range saturation) {
    return {AugmentKind::kHueSaturation, hue, saturation};
  }
  static AugmentSpec brightness(double lo, double hi) { return {AugmentKind::kBrightness, {lo, hi}, {}}; }
  static AugmentSpec contrast(double lo, double hi) { return {AugmentKind::kContrast, {lo, hi}, {}}; }

  // Throws ValidationError when a range leaves its documented bounds.
  void validate() const;
  bool operator==(const AugmentSpec&) const = default;
};

// Geometric kinds resample with bilinear interpolation and reflection at the
// borders; the output keeps the input shape and is clamped to [0, 1].
Tensor apply_augment(const Tensor& patch, const AugmentSpec& spec, Rng& rng);
Example augment(const Example& e, const AugmentSpec& spec, Rng& rng);

// The ten online training augmentations.
std::vector<AugmentSpec> online_augmentations();

// Applies each spec independently with `probability`.
Tensor random_augment(const Tensor& patch, const std::vector<AugmentSpec>& specs, double probability, Rng& rng);

}  // namespace pseudocam
