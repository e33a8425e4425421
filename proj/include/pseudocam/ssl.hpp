#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pseudocam/data.hpp"
#include "pseudocam/meta.hpp"
#include "pseudocam/network.hpp"
#include "pseudocam/schedule.hpp"

namespace pseudocam {

struct PseudoThresholds {
  double positive_above = 0.9;
  double negative_below = 0.1;
  // Requires 0 < negative_below < positive_above < 1.
  void validate() const;
};

// alpha(run) = 0 before t1, rises linearly to alpha_final at t2, then holds.
struct AlphaSchedule {
  double alpha_final = 1.0;
  std::size_t t1 = 1;
  std::size_t t2 = 5;
  void validate() const;
};

double alpha_at(const AlphaSchedule& sched, std::size_t run);

struct PseudoCandidate {
  std::string id;
  double probability = 0.0;
  Label label = Label::kPseudoNegative;
  bool operator==(const PseudoCandidate&) const = default;
};

// p > positive_above -> pseudo positive, p < negative_below -> pseudo
// negative, anything else is left out. Output is ordered by id.
std::vector<PseudoCandidate> assign_pseudo_labels(const std::map<std::string, double>& probs,
                                                  const PseudoThresholds& th);

struct PseudoLabelSet {
  std::vector<PseudoCandidate> members;  // positives then negatives, each by confidence
  std::size_t source_run = 0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// Keeps k = min(#pos, #neg) of each class: the k with the largest
// |p - 0.5|, equal confidences resolved by the smaller id.
PseudoLabelSet balance_pseudo(const std::vector<PseudoCandidate>& candidates, std::size_t source_run = 0);

// L = BCE(labeled) + alpha * BCE(pseudo), each term a mean over its own
// batch. The gradient covers the labeled rows followed by the pseudo rows.
// An empty pseudo batch (default-constructed tensors) contributes nothing.
struct CombinedLoss {
  double value = 0.0;
  double labeled = 0.0;
  double pseudo = 0.0;
  Tensor grad_wrt_output;
};
CombinedLoss combined_loss(const Tensor& labeled_probs, const Tensor& labeled_targets, const Tensor& pseudo_probs,
                           const Tensor& pseudo_targets, double alpha);

// Mean binary entropy -[p log p + (1-p) log(1-p)], p clamped to
// [1e-7, 1 - 1e-7].
double unlabeled_entropy(std::span<const double> probs);

// sum_i log P(y_i | x_i) over labeled rows - lambda * sum_j H(p_j) over
// unlabeled rows. Reported, never optimized.
double map_objective(std::span<const double> labeled_probs, std::span<const double> labeled_targets,
                     std::span<const double> unlabeled_probs, double lambda);

struct SslConfig {
  std::size_t runs = 10;
  std::size_t epochs = 7;
  std::size_t batch_size = 16;         // labeled rows per iteration
  std::size_t pseudo_batch_size = 32;  // pseudo rows per iteration once alpha > 0
  OneCycleSettings schedule;
  PseudoThresholds thresholds;
  AlphaSchedule alpha;
  double val_frac = 0.2;             // share of each pseudo class routed to validation
  double augment_probability = 0.1;  // per online augmentation, per example
  std::string pseudo_tta = "none";   // preset used when predicting the unlabeled pool
  std::size_t entropy_sample = 64;   // unlabeled examples scored for entropy each epoch
  double map_lambda = 1.0;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
};

struct SslData {
  Dataset train;      // labeled
  Dataset val;        // labeled, pseudo-free
  Dataset unlabeled;  // may be empty
  std::optional<Dataset> holdout;
};

struct EpochRecord {
  std::size_t run = 0;
  std::size_t epoch = 0;
  std::size_t iterations = 0;
  double alpha = 0.0;
  double train_loss = 0.0;  // mean combined loss over the epoch's iterations
  double val_loss = 0.0;    // BCE over the validation pool, pseudo rows included
  double val_auc = 0.0;     // same pool
  double clean_val_auc = 0.0;
  double holdout_auc = 0.0;  // NaN without a holdout
  double unlabeled_entropy = 0.0;  // NaN without unlabeled data
  double map_objective = 0.0;
  std::size_t pseudo_pos = 0;
  std::size_t pseudo_neg = 0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::vector<std::pair<std::size_t, std::size_t>> pseudo_counts;  // (pos, neg) per run
  std::size_t best_run = 0;
  std::size_t best_epoch = 0;
  double best_clean_val_auc = 0.0;
};

// Handed to the observer at the start of every run, after the pseudo set for
// that run has been merged into the pools.
struct RunSnapshot {
  std::size_t run = 0;
  double alpha = 0.0;
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  const PseudoLabelSet* pseudo = nullptr;
  const Network* model = nullptr;  // the model the pseudo set was predicted with
};

struct SslHooks {
  std::function<void(const RunSnapshot&)> on_run;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct SslResult {
  Network final_net;
  Network best_net;  // highest clean validation AUC, earliest on ties
  RunHistory history;
  std::vector<PseudoLabelSet> pseudo_sets;  // one per run, empty where alpha = 0
};

// Runs with alpha = 0 (run 0 by default) train on labeled data only. Before
// every other run the current model predicts the unlabeled pool and the
// pseudo set is rebuilt from scratch, split between the train and
// validation pools by val_frac. Every run is a fresh one-cycle schedule
// over epochs * ceil(|train| / batch_size) iterations. Throws NumericError with run/epoch/iteration on divergence.
SslResult run_ssl(const NetworkConfig& net_config, const SslConfig& cfg, const SslData& data,
                  const SslHooks& hooks = {});

// JSON lines: a meta record, one record per epoch, then a summary record.
void write_history(const std::filesystem::path& path, const RunHistory& history, const ArtifactMeta& meta);

}  // namespace pseudocam
