#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pseudocam/augment.hpp"
#include "pseudocam/data.hpp"
#include "pseudocam/network.hpp"

namespace pseudocam {

// One test-time view: the specs are applied in order, each with a fixed
// parameterization (lo == hi).
struct TtaTransform {
  std::string name;
  std::vector<AugmentSpec> chain;
};

struct TtaPreset {
  std::string name;
  std::vector<TtaTransform> transforms;
};

// "none" (no transforms), "tta_dense10" (10) or "tta_ens15" (15); see
// docs/tta_presets.md. Throws ConfigError for other names.
TtaPreset tta_preset(std::string_view name);
std::vector<std::string> tta_preset_names();

// Noise-bearing transforms draw from a stream seeded by (id, transform name),
// so a view depends only on the example.
Tensor apply_tta(const Tensor& patch, const TtaTransform& transform, std::string_view example_id);

// Equal-weight mean of the prediction on the original patch and on every
// transformed view: k transforms give k + 1 predictions.
double tta_predict(const Network& net, const Example& e, const TtaPreset& preset);
// The k + 1 individual predictions, original first.
std::vector<double> tta_views(const Network& net, const Example& e, const TtaPreset& preset);

// Eval-mode probabilities for every example, in dataset order. Work is split
// across `threads` workers (0 = hardware concurrency); results do not depend
// on the split.
std::vector<double> predict_dataset(const Network& net, const Dataset& d, std::size_t threads = 0);
std::vector<double> tta_predict_dataset(const Network& net, const Dataset& d, const TtaPreset& preset,
                                        std::size_t threads = 0);

// Weighted arithmetic mean, weights normalized internally (empty = equal).
// Inputs are summed in sorted order, so the result is independent of their
// order, lies in [min, max], and equals p exactly when every input is p.
double ensemble_predict(std::span<const double> preds, std::span<const double> weights = {});

struct Prediction {
  std::string id;
  double probability = 0.0;
  bool operator==(const Prediction&) const = default;
};

// CSV `id,probability`, probabilities printed with 17 significant digits so
// they read back bit-exactly. `metadata` becomes a leading '#' line.
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds,
                       const std::string& metadata = {});
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

// Per-id equal-weight (or weighted) ensemble over prediction files that
// cover the same ids; output follows the first file's order.
std::vector<Prediction> ensemble_files(const std::vector<std::vector<Prediction>>& files,
                                       std::span<const double> weights = {});

}  // namespace pseudocam
