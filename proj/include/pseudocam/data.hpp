#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pseudocam/rng.hpp"
#include "pseudocam/tensor.hpp"

namespace pseudocam {

enum class Label { kNegative, kPositive, kUnlabeled, kPseudoNegative, kPseudoPositive };

std::string_view label_name(Label label);
bool has_target(Label label);
// 1 for positive and pseudo-positive, 0 for the negatives. Throws for
// unlabeled examples.
double target_of(Label label);

enum class SplitTag { kTrain, kVal, kTest, kUnlabeled };

struct Example {
  std::string id;
  Tensor patch;  // [C, H, W], values in [0, 1]
  Label label = Label::kUnlabeled;
  std::filesystem::path source;  // patch file it was loaded from, if any
};

// Examples with unique ids.
class Dataset {
 public:
  explicit Dataset(SplitTag tag = SplitTag::kTrain) : tag_(tag) {}
  Dataset(std::vector<Example> examples, SplitTag tag);

  // Throws ValidationError on a duplicate id.
  void add(Example example);

  const std::vector<Example>& examples() const { return examples_; }
  const Example& operator[](std::size_t i) const { return examples_[i]; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  SplitTag tag() const { return tag_; }
  void set_tag(SplitTag tag) { tag_ = tag; }
  bool contains(const std::string& id) const { return ids_.contains(id); }
  std::size_t count(Label label) const;

  auto begin() const { return examples_.begin(); }
  auto end() const { return examples_.end(); }

 private:
  std::vector<Example> examples_;
  std::unordered_set<std::string> ids_;
  SplitTag tag_;
};

struct SyntheticSpec {
  std::size_t n = 1000;
  double positive_frac = 0.5;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  double noise = 0.15;  // stddev of additive per-pixel Gaussian noise
  std::string id_prefix = "syn";  // ids are <prefix>00000, <prefix>00001, ...
  bool operator==(const SyntheticSpec&) const = default;
};

// Background tissue texture; positives additionally carry a bright textured
// blob centred inside the middle third of the patch. Exactly
// round(n * positive_frac) positives, pixels quantized to k / 255.
Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng);

// Mean intensity of the middle third of the patch, over all channels.
double center_intensity(const Tensor& patch);

// Manifest CSV: header `id,label,path`, label in {0, 1, unlabeled}; paths
// relative to the manifest's directory. Lines starting with '#' are
// metadata. When `expected` is given each patch must have that shape.
Dataset load_dataset(const std::filesystem::path& manifest, const std::optional<Shape>& expected = std::nullopt);

// Writes patches/<id>.pgm|ppm under `dir` and the manifest at
// dir/manifest_name. Pseudo labels are written as their 0/1 target.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& manifest_name,
                  const std::string& metadata = {});

// Writes a manifest referencing each example's existing source file,
// relative to the manifest's directory.
void write_manifest(const std::filesystem::path& manifest, const Dataset& dataset, const std::string& metadata = {});

struct OutlierThresholds {
  double white_thresh = 0.95;
  double black_thresh = 0.95;
  double white_level = 0.96;
  double black_level = 0.04;
};

// An example is an outlier iff the fraction of samples >= white_level
// exceeds white_thresh, or the fraction <= black_level exceeds black_thresh.
bool is_outlier(const Tensor& patch, const OutlierThresholds& th);
std::pair<Dataset, Dataset> filter_outliers(const Dataset& d, const OutlierThresholds& th = {});

// Stratified by label: per class, round(val_frac * n_c) examples (clamped to
// [1, n_c - 1]) go to validation. Both outputs keep input order.
std::pair<Dataset, Dataset> split(const Dataset& d, double val_frac, Rng& rng);

// Labeled (positive/negative) rows and unlabeled rows, in input order.
std::pair<Dataset, Dataset> partition_labeled(const Dataset& d);

// [N, C, H, W] batch from the selected examples.
Tensor stack_patches(const Dataset& d, std::span<const std::size_t> indices);
Tensor stack_patches(const std::vector<Tensor>& patches);

}  // namespace pseudocam
