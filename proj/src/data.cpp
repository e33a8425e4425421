#include "pseudocam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "pseudocam/error.hpp"
#include "pseudocam/image.hpp"

namespace fs = std::filesystem;

namespace pseudocam {

std::string_view label_name(Label label) {
  switch (label) {
    case Label::kNegative: return "negative";
    case Label::kPositive: return "positive";
    case Label::kUnlabeled: return "unlabeled";
    case Label::kPseudoNegative: return "pseudo_negative";
    case Label::kPseudoPositive: return "pseudo_positive";
  }
  return "unknown";
}

bool has_target(Label label) { return label != Label::kUnlabeled; }

double target_of(Label label) {
  switch (label) {
    case Label::kPositive:
    case Label::kPseudoPositive: return 1.0;
    case Label::kNegative:
    case Label::kPseudoNegative: return 0.0;
    case Label::kUnlabeled: break;
  }
  throw ValidationError("unlabeled example has no target");
}

Dataset::Dataset(std::vector<Example> examples, SplitTag tag) : tag_(tag) {
  examples_.reserve(examples.size());
  for (Example& e : examples) add(std::move(e));
}

void Dataset::add(Example example) {
  if (!ids_.insert(example.id).second) throw ValidationError("duplicate example id '" + example.id + "'");
  examples_.push_back(std::move(example));
}

std::size_t Dataset::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(examples_.begin(), examples_.end(), [&](const Example& e) { return e.label == label; }));
}

// ---------------------------------------------------------------------------
// Synthetic patches

namespace {

constexpr double kTissue[3] = {0.55, 0.40, 0.52};
constexpr double kBlobTint[3] = {1.0, 0.75, 0.9};
constexpr double kTextureTint[3] = {1.0, 0.8, 1.0};

Tensor synth_patch(const SyntheticSpec& spec, bool positive, Rng& rng) {
  const std::size_t s = spec.patch_size, c_count = spec.channels;
  const double size = static_cast<double>(s);
  const double two_pi = 2.0 * std::numbers::pi;
  Tensor patch({c_count, s, s});

  const double shift = rng.uniform(-0.015, 0.015);
  const double f1x = rng.uniform(0.5, 2.5), f1y = rng.uniform(0.5, 2.5), p1 = rng.uniform(0.0, two_pi);
  const double f2x = rng.uniform(0.5, 2.5), f2y = rng.uniform(0.5, 2.5), p2 = rng.uniform(0.0, two_pi);

  // Blob parameters are drawn for every patch so both classes consume the
  // stream identically.
  const double half = size / 2.0 - 0.5;
  const double cy = half + rng.uniform(-size / 8.0, size / 8.0);
  const double cx = half + rng.uniform(-size / 8.0, size / 8.0);
  const double radius = size / 7.0 * rng.uniform(0.9, 1.2);
  const double blob_phase = rng.uniform(0.0, two_pi);
  const double amplitude = 0.45;

  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double fx = static_cast<double>(x) / size, fy = static_cast<double>(y) / size;
      const double texture = 0.03 * std::sin(two_pi * (f1x * fx + f1y * fy) + p1) +
                             0.02 * std::sin(two_pi * (f2x * fx + f2y * fy) + p2);
      double blob = 0.0;
      if (positive) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
        const double grain = 0.8 + 0.2 * std::sin(2.0 * (static_cast<double>(x) + static_cast<double>(y)) + blob_phase);
        blob = amplitude * g * grain;
      }
      for (std::size_t c = 0; c < c_count; ++c) {
        const double base = c_count == 3 ? kTissue[c] : 0.5;
        const double tint = c_count == 3 ? kTextureTint[c] : 1.0;
        const double blob_tint = c_count == 3 ? kBlobTint[c] : 1.0;
        patch[(c * s + y) * s + x] = base + shift + tint * texture + blob_tint * blob;
      }
    }
  }
  if (spec.noise > 0.0) {
    for (double& v : patch.values()) v += spec.noise * rng.normal();
  }
  quantize_8bit(patch);
  return patch;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  if (spec.n == 0) throw ValidationError("synthetic dataset needs n > 0");
  if (!(spec.positive_frac > 0.0 && spec.positive_frac < 1.0)) {
    throw ValidationError("positive_frac must be in (0, 1)");
  }
  if (spec.patch_size < 3) throw ValidationError("patch_size must be at least 3");
  if (spec.channels != 1 && spec.channels != 3) throw ValidationError("channels must be 1 or 3");
  if (spec.noise < 0.0) throw ValidationError("noise must be nonnegative");

  const auto n_pos = static_cast<std::size_t>(std::llround(spec.positive_frac * static_cast<double>(spec.n)));
  std::vector<char> positive(spec.n, 0);
  std::fill_n(positive.begin(), n_pos, 1);
  rng.shuffle(std::span<char>(positive));

  const int width = static_cast<int>(std::to_string(spec.n).size());
  Dataset d(SplitTag::kTrain);
  for (std::size_t i = 0; i < spec.n; ++i) {
    std::ostringstream id;
    id << spec.id_prefix << std::setfill('0') << std::setw(std::max(width, 5)) << i;
    Example e;
    e.id = id.str();
    e.label = positive[i] ? Label::kPositive : Label::kNegative;
    e.patch = synth_patch(spec, positive[i] != 0, rng);
    d.add(std::move(e));
  }
  return d;
}

double center_intensity(const Tensor& patch) {
  const std::size_t c_count = patch.dim(0), h = patch.dim(1), w = patch.dim(2);
  const std::size_t y0 = h / 3, y1 = h - h / 3, x0 = w / 3, x1 = w - w / 3;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < c_count; ++c) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) {
        sum += patch[(c * h + y) * w + x];
        ++n;
      }
    }
  }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

Label parse_manifest_label(const std::string& text, std::size_t row, const fs::path& manifest) {
  if (text == "0") return Label::kNegative;
  if (text == "1") return Label::kPositive;
  if (text == "unlabeled") return Label::kUnlabeled;
  throw ValidationError(manifest.string() + " row " + std::to_string(row) + ": invalid label '" + text +
                        "' (expected 0, 1 or unlabeled)");
}

std::string manifest_label(Label label) {
  if (!has_target(label)) return "unlabeled";
  return target_of(label) == 1.0 ? "1" : "0";
}

}  // namespace

Dataset load_dataset(const fs::path& manifest, const std::optional<Shape>& expected) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  Dataset d(SplitTag::kTrain);
  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++row;
    strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != "id,label,path") {
        throw ValidationError(manifest.string() + " row " + std::to_string(row) + ": expected header 'id,label,path'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != 3 || fields[0].empty() || fields[2].empty()) {
      throw ValidationError(manifest.string() + " row " + std::to_string(row) + ": expected 3 non-empty fields");
    }
    Example e;
    e.id = fields[0];
    e.label = parse_manifest_label(fields[1], row, manifest);
    e.source = base / fields[2];
    if (!fs::exists(e.source)) {
      throw IoError(manifest.string() + " row " + std::to_string(row) + ": missing patch file " + e.source.string());
    }
    e.patch = read_pnm(e.source);
    if (expected && e.patch.shape() != *expected) {
      throw ValidationError(manifest.string() + " row " + std::to_string(row) + ": patch shape " +
                            to_string(e.patch.shape()) + " differs from configured " + to_string(*expected));
    }
    if (d.contains(e.id)) {
      throw ValidationError(manifest.string() + " row " + std::to_string(row) + ": duplicate id '" + e.id + "'");
    }
    d.add(std::move(e));
  }
  if (!header_seen) throw ValidationError(manifest.string() + ": missing header 'id,label,path'");
  return d;
}

void save_dataset(const Dataset& dataset, const fs::path& dir, const std::string& manifest_name,
                  const std::string& metadata) {
  fs::create_directories(dir / "patches");
  std::ofstream out(dir / manifest_name);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  if (!metadata.empty()) out << "# " << metadata << '\n';
  out << "id,label,path\n";
  for (const Example& e : dataset) {
    if (e.id.find(',') != std::string::npos || e.id.find('/') != std::string::npos) {
      throw ValidationError("id '" + e.id + "' cannot be used as a file name");
    }
    const std::string rel = "patches/" + e.id + (e.patch.dim(0) == 3 ? ".ppm" : ".pgm");
    write_pnm(dir / rel, e.patch, metadata);
    out << e.id << ',' << manifest_label(e.label) << ',' << rel << '\n';
  }
}

void write_manifest(const fs::path& manifest, const Dataset& dataset, const std::string& metadata) {
  const fs::path base = fs::absolute(manifest).parent_path();
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  if (!metadata.empty()) out << "# " << metadata << '\n';
  out << "id,label,path\n";
  for (const Example& e : dataset) {
    if (e.source.empty()) throw ValidationError("example '" + e.id + "' has no source file");
    out << e.id << ',' << manifest_label(e.label) << ','
        << fs::relative(fs::absolute(e.source), base).generic_string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Filtering and splitting

bool is_outlier(const Tensor& patch, const OutlierThresholds& th) {
  std::size_t white = 0, black = 0;
  for (double v : patch.values()) {
    if (v >= th.white_level) ++white;
    if (v <= th.black_level) ++black;
  }
  const double n = static_cast<double>(patch.size());
  return static_cast<double>(white) / n > th.white_thresh || static_cast<double>(black) / n > th.black_thresh;
}

std::pair<Dataset, Dataset> filter_outliers(const Dataset& d, const OutlierThresholds& th) {
  for (double t : {th.white_thresh, th.black_thresh}) {
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("outlier thresholds must be in (0, 1]");
  }
  Dataset kept(d.tag()), removed(d.tag());
  for (const Example& e : d) (is_outlier(e.patch, th) ? removed : kept).add(e);
  return {std::move(kept), std::move(removed)};
}

std::pair<Dataset, Dataset> split(const Dataset& d, double val_frac, Rng& rng) {
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw ValidationError("val_frac must be in (0, 1)");
  std::vector<char> to_val(d.size(), 0);
  for (Label label : {Label::kNegative, Label::kPositive, Label::kUnlabeled, Label::kPseudoNegative,
                      Label::kPseudoPositive}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i].label == label) members.push_back(i);
    }
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw ValidationError("cannot split class '" + std::string(label_name(label)) + "' with fewer than 2 examples");
    }
    rng.shuffle(std::span<std::size_t>(members));
    const auto n = static_cast<long long>(members.size());
    const long long n_val = std::clamp(std::llround(val_frac * static_cast<double>(n)), 1LL, n - 1);
    for (long long k = 0; k < n_val; ++k) to_val[members[static_cast<std::size_t>(k)]] = 1;
  }
  Dataset train(SplitTag::kTrain), val(SplitTag::kVal);
  for (std::size_t i = 0; i < d.size(); ++i) (to_val[i] ? val : train).add(d[i]);
  return {std::move(train), std::move(val)};
}

std::pair<Dataset, Dataset> partition_labeled(const Dataset& d) {
  Dataset labeled(d.tag()), unlabeled(SplitTag::kUnlabeled);
  for (const Example& e : d) (has_target(e.label) ? labeled : unlabeled).add(e);
  return {std::move(labeled), std::move(unlabeled)};
}

Tensor stack_patches(const Dataset& d, std::span<const std::size_t> indices) {
  std::vector<Tensor> patches;
  patches.reserve(indices.size());
  for (std::size_t i : indices) patches.push_back(d[i].patch);
  return stack_patches(patches);
}

Tensor stack_patches(const std::vector<Tensor>& patches) {
  if (patches.empty()) throw ShapeError("cannot stack an empty batch");
  const Shape& shape = patches.front().shape();
  Shape batch_shape = {patches.size()};
  batch_shape.insert(batch_shape.end(), shape.begin(), shape.end());
  std::vector<double> data;
  data.reserve(shape_size(batch_shape));
  for (const Tensor& p : patches) {
    if (p.shape() != shape) throw ShapeError("patch shapes differ within a batch");
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Tensor(std::move(batch_shape), std::move(data));
}

}  // namespace pseudocam
