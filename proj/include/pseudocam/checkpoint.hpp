#pragma once

#include <cstdint>
#include <filesystem>

#include "pseudocam/meta.hpp"
#include "pseudocam/network.hpp"
#include "json.hpp"

namespace pseudocam {

// Binary layout (docs/checkpoint.md):
//   8 bytes   magic "PCAMCKPT"
//   u32 LE    format version (1)
//   u64 LE    header length in bytes
//   header    UTF-8 JSON: network config, provenance, tensor names/shapes
//   payload   every tensor of Network::state() in header order, f64 LE
inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json network_config_to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Network& net, const ArtifactMeta& meta);

struct LoadedCheckpoint {
  Network net;
  ArtifactMeta meta;
};

// Throws IoError for unreadable or truncated files and for shape or name
// mismatches between header and rebuilt network.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pseudocam
