#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pseudocam/config.hpp"
#include "pseudocam/ssl.hpp"

namespace pseudocam {

// Exit statuses.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;  // numeric failure during a run
inline constexpr int kExitUsage = 2;    // bad flags, missing files, invalid config or data

// `args` excludes the program name. Human-readable progress goes to `err`,
// results (e.g. the AUC from eval) to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct PreparedData {
  SslData pools;
  std::size_t removed_outliers = 0;
};

// Outlier filter (if enabled), labeled/unlabeled partition, then a
// stratified train/val split of the labeled rows seeded from (seed, "split").
PreparedData prepare_data(const Dataset& all, std::optional<Dataset> holdout, const ExperimentConfig& cfg);

}  // namespace pseudocam
