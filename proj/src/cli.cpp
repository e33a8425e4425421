#include "pseudocam/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "CLI11.hpp"
#include "pseudocam/checkpoint.hpp"
#include "pseudocam/error.hpp"
#include "pseudocam/infer.hpp"
#include "pseudocam/metrics.hpp"
#include "pseudocam/schedule.hpp"

namespace pseudocam {

namespace fs = std::filesystem;

PreparedData prepare_data(const Dataset& all, std::optional<Dataset> holdout, const ExperimentConfig& cfg) {
  PreparedData prepared;
  Dataset kept = all;
  if (cfg.data.filter_outliers) {
    auto [k, removed] = filter_outliers(all, cfg.data.outliers);
    kept = std::move(k);
    prepared.removed_outliers = removed.size();
  }
  auto [labeled, unlabeled] = partition_labeled(kept);
  Rng rng(derive_seed(cfg.seed, "split"));
  auto [train, val] = split(labeled, cfg.data.val_frac, rng);
  train.set_tag(SplitTag::kTrain);
  val.set_tag(SplitTag::kVal);
  unlabeled.set_tag(SplitTag::kUnlabeled);
  prepared.pools = SslData{std::move(train), std::move(val), std::move(unlabeled), std::move(holdout)};
  if (prepared.pools.holdout) prepared.pools.holdout->set_tag(SplitTag::kTest);
  return prepared;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Everything a command resolved from its flags; hashed into the provenance
// line and stored as run_config.json.
struct Resolved {
  nlohmann::json json = nlohmann::json::object();
  std::uint64_t seed = 0;

  ArtifactMeta meta() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(json.dump())));
    return {seed, buf};
  }
};

void write_run_config(const fs::path& out, const Resolved& r) {
  nlohmann::json j = {{"tool", "pseudocam"}, {"tool_version", kToolVersion}, {"seed", r.seed},
                      {"config_hash", r.meta().config_hash}, {"resolved", r.json}};
  std::ofstream f(out / "run_config.json");
  if (!f) throw IoError("cannot write " + (out / "run_config.json").string());
  f << j.dump(2) << '\n';
}

void write_lines(const fs::path& path, const std::string& metadata, const std::string& header,
                 const std::vector<std::string>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "# " << metadata << '\n' << header << '\n';
  for (const std::string& r : rows) f << r << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<Prediction> zip(const Dataset& d, const std::vector<double>& probs) {
  std::vector<Prediction> out;
  out.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out.push_back({d[i].id, probs[i]});
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataOptions {
  SyntheticSpec spec;
  double labeled_frac = 0.05;
  std::size_t holdout_n = 0;
  std::uint64_t seed = 0;
  std::string out;
};

void gen_data(const GenDataOptions& o, std::ostream& err) {
  if (!(o.labeled_frac > 0.0 && o.labeled_frac <= 1.0)) throw ConfigError("--labeled-frac must be in (0, 1]");
  Resolved r;
  r.seed = o.seed;
  r.json = {{"command", "gen-data"}, {"n", o.spec.n}, {"positive_frac", fmt(o.spec.positive_frac)},
            {"patch_size", o.spec.patch_size}, {"channels", o.spec.channels}, {"noise", fmt(o.spec.noise)},
            {"labeled_frac", fmt(o.labeled_frac)}, {"holdout_n", o.holdout_n}};
  const std::string meta = r.meta().line();

  Rng gen_rng(derive_seed(o.seed, "synthetic"));
  const Dataset all = generate_synthetic(o.spec, gen_rng);
  std::unordered_set<std::string> labeled_ids;
  if (o.labeled_frac >= 1.0) {
    for (const Example& e : all) labeled_ids.insert(e.id);
  } else {
    Rng pick(derive_seed(o.seed, "labeled"));
    const auto picked = split(all, o.labeled_frac, pick).second;
    for (const Example& e : picked) labeled_ids.insert(e.id);
  }
  Dataset manifest(SplitTag::kTrain);
  std::vector<std::string> truth;
  for (Example e : all) {
    truth.push_back(e.id + "," + (e.label == Label::kPositive ? "1" : "0"));
    if (!labeled_ids.contains(e.id)) e.label = Label::kUnlabeled;
    manifest.add(std::move(e));
  }
  const fs::path out(o.out);
  fs::create_directories(out);
  save_dataset(manifest, out, "manifest.csv", meta);
  write_lines(out / "truth.csv", meta, "id,label", truth);
  if (o.holdout_n > 0) {
    SyntheticSpec hs = o.spec;
    hs.n = o.holdout_n;
    hs.id_prefix = "hold";
    Rng hold_rng(derive_seed(o.seed, "holdout"));
    save_dataset(generate_synthetic(hs, hold_rng), out / "holdout", "manifest.csv", meta);
  }
  write_run_config(out, r);
  err << "wrote " << all.size() << " patches (" << labeled_ids.size() << " labeled) to " << out.string() << '\n';
}

// ---------------------------------------------------------------------------

struct FilterOptions {
  std::string manifest;
  OutlierThresholds th;
  std::string out;
};

void filter_cmd(const FilterOptions& o, std::ostream& err) {
  Resolved r;
  r.json = {{"command", "filter"}, {"manifest", o.manifest}, {"white_thresh", fmt(o.th.white_thresh)},
            {"black_thresh", fmt(o.th.black_thresh)}, {"white_level", fmt(o.th.white_level)},
            {"black_level", fmt(o.th.black_level)}};
  const std::string meta = r.meta().line();
  const Dataset d = load_dataset(o.manifest);
  auto [kept, removed] = filter_outliers(d, o.th);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_manifest(out / "manifest.csv", kept, meta);
  write_manifest(out / "removed.csv", removed, meta);
  write_run_config(out, r);
  err << "kept " << kept.size() << ", removed " << removed.size() << '\n';
}

// ---------------------------------------------------------------------------

struct TrainOverrides {
  std::string config;
  std::string manifest;
  std::string holdout;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs, epochs, batch_size, pseudo_batch_size, threads;
  std::optional<double> lr_max, alpha_final, positive_above, negative_below, val_frac, augment_probability;
  std::optional<std::string> pseudo_tta;
  std::optional<bool> filter;
  std::string out;
  bool quiet = false;
};

ExperimentConfig resolve(const TrainOverrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.manifest.empty()) cfg.data.manifest = o.manifest;
  if (!o.holdout.empty()) cfg.data.holdout = o.holdout;
  if (o.seed) cfg.seed = *o.seed;
  if (o.runs) cfg.ssl.runs = *o.runs;
  if (o.epochs) cfg.ssl.epochs = *o.epochs;
  if (o.batch_size) cfg.ssl.batch_size = *o.batch_size;
  if (o.pseudo_batch_size) cfg.ssl.pseudo_batch_size = *o.pseudo_batch_size;
  if (o.threads) cfg.ssl.threads = *o.threads;
  if (o.lr_max) cfg.ssl.schedule.lr_max = *o.lr_max;
  if (o.alpha_final) cfg.ssl.alpha.alpha_final = *o.alpha_final;
  if (o.positive_above) cfg.ssl.thresholds.positive_above = *o.positive_above;
  if (o.negative_below) cfg.ssl.thresholds.negative_below = *o.negative_below;
  if (o.val_frac) cfg.data.val_frac = *o.val_frac;
  if (o.augment_probability) cfg.ssl.augment_probability = *o.augment_probability;
  if (o.pseudo_tta) cfg.ssl.pseudo_tta = *o.pseudo_tta;
  if (o.filter) cfg.data.filter_outliers = *o.filter;
  cfg.ssl.seed = cfg.seed;
  if (cfg.data.manifest.empty()) throw ConfigError("no manifest: pass --manifest or set data.manifest");
  return cfg;
}

// `supervised` trains with alpha fixed at 0, which never builds pseudo
// labels; the rest of the pipeline is shared with ssl-train.
void train_cmd(const TrainOverrides& o, bool supervised, std::ostream& err) {
  ExperimentConfig cfg = resolve(o);
  if (supervised) cfg.ssl.alpha.alpha_final = 0.0;
  Resolved r;
  r.seed = cfg.seed;
  r.json = config_to_json(cfg);
  const ArtifactMeta meta = r.meta();

  const Shape expected = {cfg.network.channels, cfg.network.height, cfg.network.width};
  const Dataset all = load_dataset(cfg.data.manifest, expected);
  std::optional<Dataset> holdout;
  if (!cfg.data.holdout.empty()) holdout = load_dataset(cfg.data.holdout, expected);
  const PreparedData prepared = prepare_data(all, std::move(holdout), cfg);
  const SslData& pools = prepared.pools;
  err << "train " << pools.train.size() << ", val " << pools.val.size() << ", unlabeled " << pools.unlabeled.size()
      << ", outliers removed " << prepared.removed_outliers << '\n';

  SslHooks hooks;
  if (!o.quiet) {
    hooks.on_epoch = [&err](const EpochRecord& e) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "run %zu epoch %zu alpha %.3f loss %.4f val_auc %.4f pseudo %zu+%zu\n", e.run,
                    e.epoch, e.alpha, e.train_loss, e.clean_val_auc, e.pseudo_pos, e.pseudo_neg);
      err << buf;
    };
  }
  const SslResult result = run_ssl(cfg.network, cfg.ssl, pools, hooks);

  const fs::path out(o.out);
  fs::create_directories(out);
  write_history(out / "history.jsonl", result.history, meta);
  save_checkpoint(out / "model.ckpt", result.final_net, meta);
  save_checkpoint(out / "best.ckpt", result.best_net, meta);
  std::vector<std::string> rows;
  for (const PseudoLabelSet& s : result.pseudo_sets) {
    for (const PseudoCandidate& c : s.members) {
      rows.push_back(std::to_string(s.source_run) + "," + c.id + "," +
                     (c.label == Label::kPseudoPositive ? "1" : "0") + "," + fmt(c.probability));
    }
  }
  write_lines(out / "pseudo_labels.csv", meta.line(), "run,id,label,probability", rows);
  {
    std::ofstream f(out / "run_config.ini");
    if (!f) throw IoError("cannot write run_config.ini");
    f << "# " << meta.line() << '\n' << format_config(cfg);
  }
  write_run_config(out, r);
}

// ---------------------------------------------------------------------------

struct PredictOptions {
  std::string model;
  std::string manifest;
  std::string preset = "none";
  std::size_t threads = 0;
  std::string out;
};

void predict_cmd(const PredictOptions& o, bool tta) {
  const LoadedCheckpoint ckpt = load_checkpoint(o.model);
  const TtaPreset preset = tta_preset(tta ? o.preset : "none");
  Resolved r;
  r.seed = ckpt.meta.seed;
  r.json = {{"command", tta ? "tta-predict" : "predict"},
            {"model", o.model},
            {"model_config_hash", ckpt.meta.config_hash},
            {"manifest", o.manifest},
            {"preset", preset.name}};
  const Dataset d = load_dataset(o.manifest, ckpt.net.input_shape());
  const std::vector<double> probs = tta_predict_dataset(ckpt.net, d, preset, o.threads);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_predictions(out / "predictions.csv", zip(d, probs), r.meta().line());
  write_run_config(out, r);
}

// ---------------------------------------------------------------------------

struct EnsembleOptions {
  std::vector<std::string> preds;
  std::vector<double> weights;
  std::string out;
};

void ensemble_cmd(const EnsembleOptions& o) {
  Resolved r;
  std::vector<std::string> weights;
  for (double w : o.weights) weights.push_back(fmt(w));
  r.json = {{"command", "ensemble"}, {"preds", o.preds}, {"weights", weights}};
  std::vector<std::vector<Prediction>> files;
  for (const std::string& p : o.preds) files.push_back(read_predictions(p));
  const std::vector<Prediction> merged = ensemble_files(files, o.weights);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_predictions(out / "predictions.csv", merged, r.meta().line());
  write_run_config(out, r);
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string preds;
  std::string manifest;
  std::string out;
};

void eval_cmd(const EvalOptions& o, std::ostream& out_stream) {
  Resolved r;
  r.json = {{"command", "eval"}, {"preds", o.preds}, {"manifest", o.manifest}};
  const std::string meta = r.meta().line();
  const std::vector<Prediction> preds = read_predictions(o.preds);
  std::unordered_map<std::string, double> by_id;
  for (const Prediction& p : preds) by_id.emplace(p.id, p.probability);
  const Dataset d = load_dataset(o.manifest);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const Example& e : d) {
    if (!has_target(e.label)) continue;
    const auto it = by_id.find(e.id);
    if (it == by_id.end()) throw ValidationError("no prediction for labeled id " + e.id);
    scores.push_back(it->second);
    labels.push_back(static_cast<int>(target_of(e.label)));
  }
  const RocCurve roc = roc_points(scores, labels);
  const fs::path out(o.out);
  fs::create_directories(out);
  std::vector<std::string> rows;
  for (const RocPoint& p : roc.points) rows.push_back(fmt(p.fpr) + "," + fmt(p.tpr) + "," + fmt(p.threshold));
  write_lines(out / "roc.csv", meta, "fpr,tpr,threshold", rows);
  {
    std::ofstream f(out / "summary.json");
    if (!f) throw IoError("cannot write summary.json");
    f << nlohmann::json{{"auc", roc.auc}, {"n_pos", roc.n_pos}, {"n_neg", roc.n_neg}, {"meta", meta}}.dump(2)
      << '\n';
  }
  write_run_config(out, r);
  out_stream << "auc " << fmt(roc.auc) << " (n_pos " << roc.n_pos << ", n_neg " << roc.n_neg << ")\n";
}

// ---------------------------------------------------------------------------

struct ScheduleOptions {
  OneCycleConfig cfg;
  std::optional<double> lr_min, final_lr;
  std::string out;
};

void dump_schedule(ScheduleOptions o) {
  o.cfg.lr_min = o.lr_min.value_or(o.cfg.lr_max / 10.0);
  o.cfg.final_lr = o.final_lr.value_or(o.cfg.lr_min / 100.0);
  o.cfg.validate();
  Resolved r;
  r.json = {{"command", "dump-schedule"},       {"lr_max", fmt(o.cfg.lr_max)},
            {"lr_min", fmt(o.cfg.lr_min)},      {"final_lr", fmt(o.cfg.final_lr)},
            {"momentum_high", fmt(o.cfg.momentum_high)}, {"momentum_low", fmt(o.cfg.momentum_low)},
            {"step", o.cfg.step_size},          {"total", o.cfg.total_iterations}};
  std::vector<std::string> rows;
  for (std::size_t t = 0; t < o.cfg.total_iterations; ++t) {
    rows.push_back(std::to_string(t) + "," + fmt(lr_at(o.cfg, t)) + "," + fmt(momentum_at(o.cfg, t)));
  }
  const fs::path out(o.out);
  fs::create_directories(out);
  write_lines(out / "schedule.csv", r.meta().line(), "t,lr,momentum", rows);
  write_run_config(out, r);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised patch classifier trainer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic patch dataset");
  gen_cmd->add_option("--n", gen.spec.n, "Number of patches")->capture_default_str();
  gen_cmd->add_option("--positive-frac", gen.spec.positive_frac)->capture_default_str();
  gen_cmd->add_option("--patch-size", gen.spec.patch_size)->capture_default_str();
  gen_cmd->add_option("--channels", gen.spec.channels)->check(CLI::IsMember({1, 3}))->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise, "Per-pixel noise stddev")->capture_default_str();
  gen_cmd->add_option("--labeled-frac", gen.labeled_frac, "Share of rows keeping their label")->capture_default_str();
  gen_cmd->add_option("--holdout-n", gen.holdout_n, "Extra labeled patches written under holdout/");
  gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
  gen_cmd->add_option("--out", gen.out)->required();

  FilterOptions filt;
  auto* filt_cmd = app.add_subcommand("filter", "Drop mostly white or mostly black patches");
  filt_cmd->add_option("--manifest", filt.manifest)->required()->check(CLI::ExistingFile);
  filt_cmd->add_option("--white-thresh", filt.th.white_thresh)->capture_default_str();
  filt_cmd->add_option("--black-thresh", filt.th.black_thresh)->capture_default_str();
  filt_cmd->add_option("--white-level", filt.th.white_level)->capture_default_str();
  filt_cmd->add_option("--black-level", filt.th.black_level)->capture_default_str();
  filt_cmd->add_option("--out", filt.out)->required();

  TrainOverrides tr;
  auto add_train_flags = [&tr](CLI::App* c, bool ssl) {
    c->add_option("--config", tr.config, "INI experiment config")->check(CLI::ExistingFile);
    c->add_option("--manifest", tr.manifest)->check(CLI::ExistingFile);
    c->add_option("--holdout", tr.holdout, "Labeled manifest scored every epoch, never trained on")
        ->check(CLI::ExistingFile);
    c->add_option("--seed", tr.seed);
    c->add_option("--runs", tr.runs);
    c->add_option("--epochs", tr.epochs);
    c->add_option("--batch-size", tr.batch_size);
    c->add_option("--lr-max", tr.lr_max);
    c->add_option("--val-frac", tr.val_frac);
    c->add_option("--augment-prob", tr.augment_probability);
    c->add_option("--threads", tr.threads);
    c->add_option("--filter-outliers", tr.filter);
    if (ssl) {
      c->add_option("--pseudo-batch-size", tr.pseudo_batch_size);
      c->add_option("--alpha-final", tr.alpha_final);
      c->add_option("--positive-above", tr.positive_above);
      c->add_option("--negative-below", tr.negative_below);
      c->add_option("--pseudo-tta", tr.pseudo_tta);
    }
    c->add_flag("--quiet", tr.quiet);
    c->add_option("--out", tr.out)->required();
  };
  auto* train = app.add_subcommand("train", "Supervised training on the labeled rows");
  add_train_flags(train, false);
  auto* ssl = app.add_subcommand("ssl-train", "Training with re-predicted pseudo labels");
  add_train_flags(ssl, true);

  PredictOptions pred;
  auto add_predict_flags = [&pred](CLI::App* c, bool tta) {
    c->add_option("--model", pred.model)->required()->check(CLI::ExistingFile);
    c->add_option("--manifest", pred.manifest)->required()->check(CLI::ExistingFile);
    if (tta) c->add_option("--preset", pred.preset)->check(CLI::IsMember(tta_preset_names()))->capture_default_str();
    c->add_option("--threads", pred.threads);
    c->add_option("--out", pred.out)->required();
  };
  auto* predict = app.add_subcommand("predict", "Predict every row of a manifest");
  add_predict_flags(predict, false);
  auto* tta = app.add_subcommand("tta-predict", "Predict with test-time augmentation");
  add_predict_flags(tta, true);

  EnsembleOptions ens;
  auto* ens_cmd = app.add_subcommand("ensemble", "Average prediction files");
  ens_cmd->add_option("--preds", ens.preds)->required()->check(CLI::ExistingFile);
  ens_cmd->add_option("--weights", ens.weights, "One nonnegative weight per file (default equal)");
  ens_cmd->add_option("--out", ens.out)->required();

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "ROC curve and AUC of predictions");
  eval->add_option("--preds", ev.preds)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", ev.out)->required();

  ScheduleOptions sch;
  auto* dump = app.add_subcommand("dump-schedule", "Write the one-cycle table as CSV");
  dump->add_option("--lr-max", sch.cfg.lr_max)->capture_default_str();
  dump->add_option("--lr-min", sch.lr_min, "Default lr-max / 10");
  dump->add_option("--final-lr", sch.final_lr, "Default lr-min / 100");
  dump->add_option("--momentum-high", sch.cfg.momentum_high)->capture_default_str();
  dump->add_option("--momentum-low", sch.cfg.momentum_low)->capture_default_str();
  dump->add_option("--step", sch.cfg.step_size)->required();
  dump->add_option("--total", sch.cfg.total_iterations)->required();
  dump->add_option("--out", sch.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (const auto subs = app.get_subcommands(); !subs.empty()) {
      err << "run '" << subs.front()->get_name() << " --help' for usage\n";
    }
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) gen_data(gen, err);
    if (filt_cmd->parsed()) filter_cmd(filt, err);
    if (train->parsed()) train_cmd(tr, true, err);
    if (ssl->parsed()) train_cmd(tr, false, err);
    if (predict->parsed()) predict_cmd(pred, false);
    if (tta->parsed()) predict_cmd(pred, true);
    if (ens_cmd->parsed()) ensemble_cmd(ens);
    if (eval->parsed()) eval_cmd(ev, out);
    if (dump->parsed()) dump_schedule(sch);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace pseudocam
