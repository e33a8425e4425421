#include "pseudocam/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "json.hpp"
#include "pseudocam/augment.hpp"
#include "pseudocam/error.hpp"
#include "pseudocam/infer.hpp"
#include "pseudocam/metrics.hpp"

namespace pseudocam {

void PseudoThresholds::validate() const {
  if (!(0.0 < negative_below && negative_below < positive_above && positive_above < 1.0)) {
    throw ConfigError("pseudo thresholds need 0 < negative_below < positive_above < 1, got " +
                      std::to_string(negative_below) + " / " + std::to_string(positive_above));
  }
}

void AlphaSchedule::validate() const {
  if (!(t1 < t2)) throw ConfigError("alpha schedule needs t1 < t2");
  if (!(alpha_final >= 0.0) || !std::isfinite(alpha_final)) {
    throw ConfigError("alpha_final must be a finite value >= 0");
  }
}

double alpha_at(const AlphaSchedule& sched, std::size_t run) {
  if (run < sched.t1) return 0.0;
  if (run >= sched.t2) return sched.alpha_final;
  return sched.alpha_final * static_cast<double>(run - sched.t1) / static_cast<double>(sched.t2 - sched.t1);
}

std::vector<PseudoCandidate> assign_pseudo_labels(const std::map<std::string, double>& probs,
                                                  const PseudoThresholds& th) {
  th.validate();
  std::vector<PseudoCandidate> out;
  for (const auto& [id, p] : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probability for " + id + " outside [0, 1]");
    if (p > th.positive_above) {
      out.push_back({id, p, Label::kPseudoPositive});
    } else if (p < th.negative_below) {
      out.push_back({id, p, Label::kPseudoNegative});
    }
  }
  return out;
}

PseudoLabelSet balance_pseudo(const std::vector<PseudoCandidate>& candidates, std::size_t source_run) {
  std::vector<PseudoCandidate> pos, neg;
  for (const PseudoCandidate& c : candidates) {
    if (c.label == Label::kPseudoPositive) {
      pos.push_back(c);
    } else if (c.label == Label::kPseudoNegative) {
      neg.push_back(c);
    } else {
      throw ValidationError("candidate " + c.id + " is not pseudo-labeled");
    }
  }
  auto by_confidence = [](const PseudoCandidate& a, const PseudoCandidate& b) {
    const double ca = std::abs(a.probability - 0.5), cb = std::abs(b.probability - 0.5);
    return ca != cb ? ca > cb : a.id < b.id;
  };
  std::sort(pos.begin(), pos.end(), by_confidence);
  std::sort(neg.begin(), neg.end(), by_confidence);
  const std::size_t k = std::min(pos.size(), neg.size());
  PseudoLabelSet set;
  set.source_run = source_run;
  set.n_pos = k;
  set.n_neg = k;
  set.members.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k));
  set.members.insert(set.members.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(k));
  return set;
}

CombinedLoss combined_loss(const Tensor& labeled_probs, const Tensor& labeled_targets, const Tensor& pseudo_probs,
                           const Tensor& pseudo_targets, double alpha) {
  const bool has_labeled = !labeled_probs.empty();
  const bool has_pseudo = !pseudo_probs.empty();
  if (!has_labeled && !has_pseudo) throw ValidationError("combined loss over two empty batches");
  CombinedLoss out;
  std::vector<double> grad;
  if (has_labeled) {
    LossValue lab = bce_loss(labeled_probs, labeled_targets);
    out.labeled = lab.value;
    out.value = lab.value;
    grad.assign(lab.grad_wrt_output.values().begin(), lab.grad_wrt_output.values().end());
  }
  if (has_pseudo) {
    LossValue ps = bce_loss(pseudo_probs, pseudo_targets);
    out.pseudo = ps.value;
    out.value += alpha * ps.value;
    for (double g : ps.grad_wrt_output.values()) grad.push_back(alpha * g);
  }
  const std::size_t rows = grad.size();
  out.grad_wrt_output = Tensor({rows, 1}, std::move(grad));
  return out;
}

double unlabeled_entropy(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("entropy of zero predictions");
  double total = 0.0;
  for (double p : probs) {
    const double q = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    total += -(q * std::log(q) + (1.0 - q) * std::log(1.0 - q));
  }
  return total / static_cast<double>(probs.size());
}

double map_objective(std::span<const double> labeled_probs, std::span<const double> labeled_targets,
                     std::span<const double> unlabeled_probs, double lambda) {
  if (labeled_probs.size() != labeled_targets.size()) {
    throw ValidationError("map objective: probabilities and targets differ in length");
  }
  double log_likelihood = 0.0;
  for (std::size_t i = 0; i < labeled_probs.size(); ++i) {
    const double q = std::clamp(labeled_probs[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    log_likelihood += labeled_targets[i] == 1.0 ? std::log(q) : std::log(1.0 - q);
  }
  if (unlabeled_probs.empty()) return log_likelihood;
  return log_likelihood -
         lambda * unlabeled_entropy(unlabeled_probs) * static_cast<double>(unlabeled_probs.size());
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> targets_of(const Dataset& d) {
  std::vector<double> t;
  t.reserve(d.size());
  for (const Example& e : d) t.push_back(target_of(e.label));
  return t;
}

double auc_or_nan(const std::vector<double>& scores, const std::vector<double>& targets) {
  std::vector<int> labels(targets.begin(), targets.end());
  const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
  if (!has_pos || !has_neg) return kNaN;
  return auc(scores, labels);
}

double bce_of(const std::vector<double>& probs, const std::vector<double>& targets) {
  if (probs.empty()) return kNaN;
  return bce_loss(Tensor({probs.size(), 1}, probs), Tensor({targets.size(), 1}, targets)).value;
}

void check_pools(const SslData& data) {
  std::unordered_map<std::string, const char*> owner;
  auto claim = [&](const Dataset& d, const char* name) {
    for (const Example& e : d) {
      const auto [it, fresh] = owner.emplace(e.id, name);
      if (!fresh) throw ValidationError("id " + e.id + " appears in both " + it->second + " and " + name);
    }
  };
  claim(data.train, "train");
  claim(data.val, "val");
  claim(data.unlabeled, "unlabeled");
  for (const Example& e : data.train) {
    if (e.label != Label::kPositive && e.label != Label::kNegative) {
      throw ValidationError("training example " + e.id + " has no real label");
    }
  }
  for (const Example& e : data.val) {
    if (e.label != Label::kPositive && e.label != Label::kNegative) {
      throw ValidationError("validation example " + e.id + " has no real label");
    }
  }
  if (data.train.empty()) throw ValidationError("training pool is empty");
}

// Per class, round(val_frac * k) members go to validation; both sides stay
// balanced because the classes have equal size.
std::pair<Dataset, Dataset> materialize(const PseudoLabelSet& set, const Dataset& unlabeled,
                                        const std::unordered_map<std::string, std::size_t>& index, double val_frac,
                                        Rng& rng) {
  Dataset train(SplitTag::kTrain), val(SplitTag::kVal);
  for (Label cls : {Label::kPseudoPositive, Label::kPseudoNegative}) {
    std::vector<const PseudoCandidate*> members;
    for (const PseudoCandidate& c : set.members) {
      if (c.label == cls) members.push_back(&c);
    }
    rng.shuffle(std::span(members));
    const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(members.size())));
    std::vector<std::pair<std::size_t, bool>> picks;  // (unlabeled index, to validation)
    for (std::size_t i = 0; i < members.size(); ++i) picks.emplace_back(index.at(members[i]->id), i < n_val);
    std::sort(picks.begin(), picks.end());
    for (const auto& [idx, to_val] : picks) {
      Example e = unlabeled[idx];
      e.label = cls;
      (to_val ? val : train).add(std::move(e));
    }
  }
  return {std::move(train), std::move(val)};
}

Dataset concat(const Dataset& a, const Dataset& b, SplitTag tag) {
  Dataset out(tag);
  for (const Example& e : a) out.add(e);
  for (const Example& e : b) out.add(e);
  return out;
}

std::string where(std::size_t run, std::size_t epoch, std::size_t iteration) {
  return "run " + std::to_string(run) + ", epoch " + std::to_string(epoch) + ", iteration " +
         std::to_string(iteration);
}

}  // namespace

SslResult run_ssl(const NetworkConfig& net_config, const SslConfig& cfg, const SslData& data, const SslHooks& hooks) {
  cfg.thresholds.validate();
  cfg.alpha.validate();
  if (cfg.runs == 0 || cfg.epochs == 0) throw ConfigError("runs and epochs must be at least 1");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(cfg.val_frac >= 0.0 && cfg.val_frac < 1.0)) throw ConfigError("val_frac must be in [0, 1)");
  if (!(cfg.augment_probability >= 0.0 && cfg.augment_probability <= 1.0)) {
    throw ConfigError("augment_probability must be in [0, 1]");
  }
  const TtaPreset pseudo_tta = tta_preset(cfg.pseudo_tta);
  check_pools(data);

  Rng init_rng(derive_seed(cfg.seed, "init"));
  Network net = Network::build(net_config, init_rng);
  Rng train_rng(derive_seed(cfg.seed, "train"));
  Rng pseudo_rng(derive_seed(cfg.seed, "pseudo_split"));
  Rng entropy_rng(derive_seed(cfg.seed, "entropy_sample"));
  const std::vector<AugmentSpec> online = online_augmentations();

  std::unordered_map<std::string, std::size_t> unlabeled_index;
  for (std::size_t i = 0; i < data.unlabeled.size(); ++i) unlabeled_index.emplace(data.unlabeled[i].id, i);

  Dataset entropy_pool(SplitTag::kUnlabeled);
  {
    std::vector<std::size_t> idx(data.unlabeled.size());
    std::iota(idx.begin(), idx.end(), 0);
    entropy_rng.shuffle(std::span(idx));
    idx.resize(std::min(idx.size(), cfg.entropy_sample));
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) entropy_pool.add(data.unlabeled[i]);
  }

  const std::vector<double> clean_val_targets = targets_of(data.val);
  const std::vector<double> train_targets = targets_of(data.train);
  std::vector<double> holdout_targets;
  if (data.holdout) holdout_targets = targets_of(*data.holdout);

  SslResult result{net, net, {}, {}};
  result.history.best_clean_val_auc = -1.0;
  const std::size_t iterations = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;

  for (std::size_t run = 0; run < cfg.runs; ++run) {
    const double alpha = alpha_at(cfg.alpha, run);
    PseudoLabelSet pseudo;
    pseudo.source_run = run;
    if (alpha > 0.0 && !data.unlabeled.empty()) {
      const std::vector<double> probs = tta_predict_dataset(net, data.unlabeled, pseudo_tta, cfg.threads);
      std::map<std::string, double> by_id;
      for (std::size_t i = 0; i < probs.size(); ++i) by_id.emplace(data.unlabeled[i].id, probs[i]);
      pseudo = balance_pseudo(assign_pseudo_labels(by_id, cfg.thresholds), run);
    }
    auto [pseudo_train, pseudo_val] = materialize(pseudo, data.unlabeled, unlabeled_index, cfg.val_frac, pseudo_rng);
    const Dataset train_pool = concat(data.train, pseudo_train, SplitTag::kTrain);
    const Dataset val_pool = concat(data.val, pseudo_val, SplitTag::kVal);
    const std::vector<double> val_targets = targets_of(val_pool);
    result.history.pseudo_counts.emplace_back(pseudo.n_pos, pseudo.n_neg);
    if (hooks.on_run) hooks.on_run(RunSnapshot{run, alpha, &train_pool, &val_pool, &pseudo, &net});

    const bool mix_pseudo = !pseudo_train.empty() && cfg.pseudo_batch_size > 0;
    const OneCycleConfig schedule = make_one_cycle(cfg.schedule, cfg.epochs * iterations);
    std::vector<std::size_t> pseudo_order(pseudo_train.size());
    std::iota(pseudo_order.begin(), pseudo_order.end(), 0);
    std::size_t pseudo_cursor = pseudo_order.size();
    std::size_t t = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      net.set_mode(Mode::kTrain);
      std::vector<std::size_t> order(data.train.size());
      std::iota(order.begin(), order.end(), 0);
      train_rng.shuffle(std::span(order));
      double loss_sum = 0.0;

      for (std::size_t it = 0; it < iterations; ++it, ++t) {
        std::vector<Tensor> patches;
        std::vector<double> lab_targets, ps_targets;
        for (std::size_t k = it * cfg.batch_size; k < std::min(order.size(), (it + 1) * cfg.batch_size); ++k) {
          const Example& e = data.train[order[k]];
          patches.push_back(e.patch);
          lab_targets.push_back(target_of(e.label));
        }
        if (mix_pseudo) {
          for (std::size_t k = 0; k < cfg.pseudo_batch_size && k < pseudo_order.size(); ++k) {
            if (pseudo_cursor == pseudo_order.size()) {
              train_rng.shuffle(std::span(pseudo_order));
              pseudo_cursor = 0;
            }
            const Example& e = pseudo_train[pseudo_order[pseudo_cursor++]];
            patches.push_back(e.patch);
            ps_targets.push_back(target_of(e.label));
          }
        }
        if (cfg.augment_probability > 0.0) {
          for (Tensor& p : patches) p = random_augment(p, online, cfg.augment_probability, train_rng);
        }

        const std::size_t n_lab = lab_targets.size(), n_ps = ps_targets.size();
        ForwardResult fwd;
        try {
          fwd = net.forward(stack_patches(patches), train_rng);
        } catch (const NumericError& e) {
          throw NumericError(where(run, epoch, it) + ": " + e.what());
        }
        const auto probs = fwd.probabilities.values();
        Tensor lab_p({n_lab, 1}, std::vector<double>(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(n_lab)));
        Tensor ps_p;
        if (n_ps > 0) {
          ps_p = Tensor({n_ps, 1}, std::vector<double>(probs.begin() + static_cast<std::ptrdiff_t>(n_lab), probs.end()));
        }
        const CombinedLoss loss = combined_loss(lab_p, Tensor({n_lab, 1}, lab_targets), ps_p,
                                                n_ps > 0 ? Tensor({n_ps, 1}, ps_targets) : Tensor(), alpha);
        if (!std::isfinite(loss.value) || !all_finite(loss.grad_wrt_output)) {
          throw NumericError(where(run, epoch, it) + ": loss diverged");
        }
        const Gradients grads = net.backward(fwd.cache, loss.grad_wrt_output);
        for (const Tensor& g : grads.tensors) {
          if (!all_finite(g)) throw NumericError(where(run, epoch, it) + ": non-finite gradient");
        }
        sgd_momentum_step(net, grads, lr_at(schedule, t), momentum_at(schedule, t));
        loss_sum += loss.value;
      }

      net.set_mode(Mode::kEval);
      EpochRecord rec;
      rec.run = run;
      rec.epoch = epoch;
      rec.iterations = iterations;
      rec.alpha = alpha;
      rec.train_loss = loss_sum / static_cast<double>(iterations);
      const std::vector<double> val_probs = predict_dataset(net, val_pool, cfg.threads);
      rec.val_loss = bce_of(val_probs, val_targets);
      rec.val_auc = auc_or_nan(val_probs, val_targets);
      const std::vector<double> clean(val_probs.begin(), val_probs.begin() + static_cast<std::ptrdiff_t>(data.val.size()));
      rec.clean_val_auc = auc_or_nan(clean, clean_val_targets);
      rec.holdout_auc = data.holdout ? auc_or_nan(predict_dataset(net, *data.holdout, cfg.threads), holdout_targets) : kNaN;
      const std::vector<double> unl = predict_dataset(net, entropy_pool, cfg.threads);
      rec.unlabeled_entropy = unl.empty() ? kNaN : unlabeled_entropy(unl);
      rec.map_objective = map_objective(predict_dataset(net, data.train, cfg.threads), train_targets, unl, cfg.map_lambda);
      rec.pseudo_pos = pseudo.n_pos;
      rec.pseudo_neg = pseudo.n_neg;
      rec.train_size = train_pool.size();
      rec.val_size = val_pool.size();

      if (std::isfinite(rec.clean_val_auc) && rec.clean_val_auc > result.history.best_clean_val_auc) {
        result.history.best_clean_val_auc = rec.clean_val_auc;
        result.history.best_run = run;
        result.history.best_epoch = epoch;
        result.best_net = net;
      }
      result.history.epochs.push_back(rec);
      if (hooks.on_epoch) hooks.on_epoch(rec);
    }
    result.pseudo_sets.push_back(std::move(pseudo));
  }
  if (result.history.best_clean_val_auc < 0.0) {
    result.history.best_clean_val_auc = kNaN;
    result.best_net = net;
  }
  net.set_mode(Mode::kEval);
  result.final_net = net;
  return result;
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void write_history(const std::filesystem::path& path, const RunHistory& history, const ArtifactMeta& meta) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history " + path.string());
  out << nlohmann::json{{"type", "meta"},
                        {"tool", "pseudocam"},
                        {"tool_version", kToolVersion},
                        {"seed", meta.seed},
                        {"config_hash", meta.config_hash}}
             .dump()
      << '\n';
  for (const EpochRecord& r : history.epochs) {
    out << nlohmann::json{{"type", "epoch"},
                          {"run", r.run},
                          {"epoch", r.epoch},
                          {"iterations", r.iterations},
                          {"alpha", r.alpha},
                          {"train_loss", number(r.train_loss)},
                          {"val_loss", number(r.val_loss)},
                          {"val_auc", number(r.val_auc)},
                          {"clean_val_auc", number(r.clean_val_auc)},
                          {"holdout_auc", number(r.holdout_auc)},
                          {"unlabeled_entropy", number(r.unlabeled_entropy)},
                          {"map_objective", number(r.map_objective)},
                          {"pseudo_pos", r.pseudo_pos},
                          {"pseudo_neg", r.pseudo_neg},
                          {"train_size", r.train_size},
                          {"val_size", r.val_size}}
               .dump()
        << '\n';
  }
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [p, n] : history.pseudo_counts) counts.push_back({p, n});
  const EpochRecord* last = history.epochs.empty() ? nullptr : &history.epochs.back();
  out << nlohmann::json{{"type", "summary"},
                        {"epochs", history.epochs.size()},
                        {"pseudo_counts", counts},
                        {"best_run", history.best_run},
                        {"best_epoch", history.best_epoch},
                        {"best_clean_val_auc", number(history.best_clean_val_auc)},
                        {"final_clean_val_auc", number(last ? last->clean_val_auc : kNaN)},
                        {"final_holdout_auc", number(last ? last->holdout_auc : kNaN)}}
             .dump()
      << '\n';
  if (!out) throw IoError("failed writing history " + path.string());
}

}  // namespace pseudocam
