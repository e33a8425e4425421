#include "pseudocam/infer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>
#include <unordered_map>
#include <utility>

#include "pseudocam/error.hpp"

namespace pseudocam {

namespace {

TtaTransform single(std::string name, AugmentSpec spec) { return {std::move(name), {spec}}; }

AugmentSpec fixed_hue_sat(double hue, double sat) { return AugmentSpec::hue_saturation({hue, hue}, {sat, sat}); }

TtaPreset dense10() {
  return {"tta_dense10",
          {
              single("hflip", AugmentSpec::hflip()),
              single("vflip", AugmentSpec::vflip()),
              single("rotate30", AugmentSpec::rotate(30.0)),
              single("crop10", AugmentSpec::crop_pad(0.1, 0.1)),
              single("scale110", AugmentSpec::scale(1.1, 1.1)),
              single("translate10", AugmentSpec::translate({0.1, 0.1}, {0.1, 0.1})),
              single("sharpen50", AugmentSpec::sharpen_blend(0.5, 0.5)),
              single("emboss50", AugmentSpec::emboss_blend(0.5, 0.5)),
              single("noise02", AugmentSpec::gaussian_noise(0.02, 0.02)),
              single("hue05_sat120", fixed_hue_sat(0.05, 1.2)),
          }};
}

TtaPreset ens15() {
  const AugmentSpec bright_up = AugmentSpec::brightness(0.05, 0.05);
  const AugmentSpec contrast_up = AugmentSpec::contrast(1.2, 1.2);
  return {"tta_ens15",
          {
              single("vflip", AugmentSpec::vflip()),
              single("hflip", AugmentSpec::hflip()),
              single("rot90", AugmentSpec::rotate(90.0)),
              single("rot180", AugmentSpec::rotate(180.0)),
              single("rot270", AugmentSpec::rotate(270.0)),
              {"transpose", {AugmentSpec::hflip(), AugmentSpec::rotate(90.0)}},
              {"antitranspose", {AugmentSpec::hflip(), AugmentSpec::rotate(270.0)}},
              single("bright_up", bright_up),
              single("bright_down", AugmentSpec::brightness(-0.05, -0.05)),
              single("contrast_up", contrast_up),
              single("contrast_down", AugmentSpec::contrast(0.8, 0.8)),
              single("saturation120", fixed_hue_sat(0.0, 1.2)),
              single("hue05", fixed_hue_sat(0.05, 1.0)),
              {"vflip_bright_up", {AugmentSpec::vflip(), bright_up}},
              {"hflip_contrast_up", {AugmentSpec::hflip(), contrast_up}},
          }};
}

std::size_t resolve_threads(std::size_t requested, std::size_t work) {
  std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
  return std::max<std::size_t>(1, std::min(n, work));
}

// Runs fn(i) for i in [0, n) over contiguous chunks; each index is written by
// exactly one worker.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  const std::size_t workers = resolve_threads(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double predict_one(const Network& net, const Tensor& patch) {
  Shape shape = {1};
  shape.insert(shape.end(), patch.shape().begin(), patch.shape().end());
  return net.predict(patch.reshaped(shape))[0];
}

}  // namespace

TtaPreset tta_preset(std::string_view name) {
  if (name == "none") return {"none", {}};
  if (name == "tta_dense10") return dense10();
  if (name == "tta_ens15") return ens15();
  throw ConfigError("unknown TTA preset '" + std::string(name) + "' (expected none, tta_dense10 or tta_ens15)");
}

std::vector<std::string> tta_preset_names() { return {"none", "tta_dense10", "tta_ens15"}; }

Tensor apply_tta(const Tensor& patch, const TtaTransform& transform, std::string_view example_id) {
  Rng rng(derive_seed(fnv1a64(example_id), transform.name));
  Tensor out = patch;
  for (const AugmentSpec& spec : transform.chain) out = apply_augment(out, spec, rng);
  return out;
}

std::vector<double> tta_views(const Network& net, const Example& e, const TtaPreset& preset) {
  std::vector<Tensor> views;
  views.reserve(preset.transforms.size() + 1);
  views.push_back(e.patch);
  for (const TtaTransform& t : preset.transforms) views.push_back(apply_tta(e.patch, t, e.id));
  const Tensor probs = net.predict(stack_patches(views));
  return {probs.values().begin(), probs.values().end()};
}

double tta_predict(const Network& net, const Example& e, const TtaPreset& preset) {
  if (preset.transforms.empty()) return predict_one(net, e.patch);
  const std::vector<double> views = tta_views(net, e, preset);
  return ensemble_predict(views);
}

std::vector<double> predict_dataset(const Network& net, const Dataset& d, std::size_t threads) {
  constexpr std::size_t kBatch = 64;
  const std::size_t batches = (d.size() + kBatch - 1) / kBatch;
  std::vector<double> out(d.size());
  parallel_for(batches, threads, [&](std::size_t b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b * kBatch; i < std::min(d.size(), (b + 1) * kBatch); ++i) idx.push_back(i);
    const Tensor probs = net.predict(stack_patches(d, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = probs[k];
  });
  return out;
}

std::vector<double> tta_predict_dataset(const Network& net, const Dataset& d, const TtaPreset& preset,
                                        std::size_t threads) {
  if (preset.transforms.empty()) return predict_dataset(net, d, threads);
  std::vector<double> out(d.size());
  parallel_for(d.size(), threads, [&](std::size_t i) { out[i] = tta_predict(net, d[i], preset); });
  return out;
}

double ensemble_predict(std::span<const double> preds, std::span<const double> weights) {
  if (preds.empty()) throw ValidationError("ensemble of zero predictions");
  if (!weights.empty() && weights.size() != preds.size()) {
    throw ValidationError("ensemble: " + std::to_string(preds.size()) + " predictions but " +
                          std::to_string(weights.size()) + " weights");
  }
  std::vector<std::pair<double, double>> items(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (!std::isfinite(preds[i])) throw ValidationError("ensemble: non-finite prediction " + std::to_string(i));
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("ensemble: invalid weight " + std::to_string(i));
    items[i] = {preds[i], w};
  }
  std::sort(items.begin(), items.end());
  const double lo = items.front().first, hi = items.back().first;
  double total = 0.0, excess = 0.0;
  for (const auto& [p, w] : items) {
    total += w;
    excess += w * (p - lo);
  }
  if (!(total > 0.0)) throw ValidationError("ensemble: weights sum to zero");
  return std::clamp(lo + excess / total, lo, hi);
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& preds,
                       const std::string& metadata) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write predictions " + path.string());
  if (!metadata.empty()) out << "# " << metadata << '\n';
  out << "id,probability\n";
  char buf[32];
  for (const Prediction& p : preds) {
    std::snprintf(buf, sizeof buf, "%.17g", p.probability);
    out << p.id << ',' << buf << '\n';
  }
  if (!out) throw IoError("failed writing predictions " + path.string());
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path.string());
  std::vector<Prediction> preds;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t row = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != "id,probability") {
        throw ValidationError(path.string() + " row " + std::to_string(row) + ": expected header id,probability");
      }
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0) {
      throw ValidationError(path.string() + " row " + std::to_string(row) + ": expected id,probability");
    }
    Prediction p{line.substr(0, comma), 0.0};
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    const auto [ptr, ec] = std::from_chars(first, last, p.probability);
    if (ec != std::errc() || ptr != last || !(p.probability >= 0.0 && p.probability <= 1.0)) {
      throw ValidationError(path.string() + " row " + std::to_string(row) + ": probability must be in [0, 1]");
    }
    if (!seen.emplace(p.id, preds.size()).second) {
      throw ValidationError(path.string() + " row " + std::to_string(row) + ": duplicate id " + p.id);
    }
    preds.push_back(std::move(p));
  }
  if (!header) throw ValidationError(path.string() + ": missing header id,probability");
  return preds;
}

std::vector<Prediction> ensemble_files(const std::vector<std::vector<Prediction>>& files,
                                       std::span<const double> weights) {
  if (files.empty()) throw ValidationError("ensemble of zero prediction files");
  std::vector<std::unordered_map<std::string, double>> lookup(files.size());
  for (std::size_t f = 0; f < files.size(); ++f) {
    if (files[f].size() != files[0].size()) {
      throw ValidationError("prediction file " + std::to_string(f + 1) + " has " + std::to_string(files[f].size()) +
                            " rows, file 1 has " + std::to_string(files[0].size()));
    }
    for (const Prediction& p : files[f]) lookup[f].emplace(p.id, p.probability);
  }
  std::vector<Prediction> out;
  out.reserve(files[0].size());
  std::vector<double> column(files.size());
  for (const Prediction& p : files[0]) {
    for (std::size_t f = 0; f < files.size(); ++f) {
      const auto it = lookup[f].find(p.id);
      if (it == lookup[f].end()) {
        throw ValidationError("id " + p.id + " missing from prediction file " + std::to_string(f + 1));
      }
      column[f] = it->second;
    }
    out.push_back({p.id, ensemble_predict(column, weights)});
  }
  return out;
}

}  // namespace pseudocam
