#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pseudocam/data.hpp"
#include "pseudocam/network.hpp"
#include "pseudocam/ssl.hpp"

namespace pseudocam {

struct DataConfig {
  std::string manifest;  // labeled and unlabeled rows
  std::string holdout;   // optional labeled manifest, never trained on
  double val_frac = 0.2;
  bool filter_outliers = true;
  OutlierThresholds outliers;
  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  SyntheticSpec synthetic;
  double labeled_frac = 0.05;  // gen-data: share of rows that keep their label
  NetworkConfig network = default_network_config();
  SslConfig ssl;
};

// INI file with sections [data], [outliers], [synthetic], [network],
// [schedule] and [ssl], plus top-level `seed`. Unknown sections or keys and
// unparsable values throw ConfigError naming the key. Missing keys keep
// their defaults.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(std::string_view text);
std::string format_config(const ExperimentConfig& cfg);

// "conv3x3(8,nobias) dense_block(2,4) transition(0.5) gap_gmp_concat batchnorm
//  dropout(0.6) dense(1) sigmoid"
std::vector<LayerSpec> parse_layers(std::string_view text);
std::string format_layers(const std::vector<LayerSpec>& layers);

// Canonical resolved form; keys sorted, so equal configs dump identically.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
// 16 hex digits of FNV-1a over the canonical dump.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace pseudocam
