#pragma once

#include <cstdint>
#include <string>

namespace pseudocam {

inline constexpr const char* kToolVersion = "0.1.0";

// Provenance stamped on every file the CLI writes.
struct ArtifactMeta {
  std::uint64_t seed = 0;
  std::string config_hash;

  // "pseudocam 0.1.0 seed=7 config=1f2e..."; no comment marker.
  std::string line() const {
    return std::string("pseudocam ") + kToolVersion + " seed=" + std::to_string(seed) + " config=" + config_hash;
  }
};

}  // namespace pseudocam
