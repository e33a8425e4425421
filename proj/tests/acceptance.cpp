// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pseudocam/cli.hpp"
#include "pseudocam/infer.hpp"
#include "pseudocam/layers.hpp"
#include "pseudocam/metrics.hpp"
#include "pseudocam/schedule.hpp"
#include "pseudocam/ssl.hpp"
#include "test_util.hpp"

namespace pc = pseudocam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1. Gradient correctness.
Outcome gradients() {
  const auto t0 = Clock::now();
  pc::Rng rng(101);
  double worst = 0.0;
  std::set<pc::LayerKind> kinds;

  auto check = [&](const pc::NetworkConfig& cfg, std::size_t batch, std::uint64_t seed) {
    pc::Rng init(seed);
    const pc::Network net = pc::Network::build(cfg, init);
    for (const pc::LayerSpec& l : cfg.layers) kinds.insert(l.kind);
    const pc::Tensor x = pc::testing::random_tensor({batch, cfg.channels, cfg.height, cfg.width}, rng, 0.0, 1.0);
    pc::Tensor y({batch, 1});
    for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<double>(i % 2);
    const pc::GradCheckReport r = pc::grad_check(net, x, y, 1e-5, seed + 1);
    worst = std::max(worst, r.max_rel_error());
  };

  check(pc::default_network_config(3, 8), 4, 10);
  pc::NetworkConfig every = pc::testing::tiny_config(3, 6);
  every.layers = {pc::LayerSpec::conv3x3(3),       pc::LayerSpec::batchnorm(),
                  pc::LayerSpec::relu(),           pc::LayerSpec::dense_block(2, 2),
                  pc::LayerSpec::transition(0.5),  pc::LayerSpec::dropout_layer(0.3),
                  pc::LayerSpec::gap_gmp_concat(), pc::LayerSpec::dense(4),
                  pc::LayerSpec::relu(),           pc::LayerSpec::dropout_layer(0.5),
                  pc::LayerSpec::dense(1),         pc::LayerSpec::sigmoid()};
  check(every, 5, 20);

  const double elapsed = seconds_since(t0);
  const std::size_t all_kinds = static_cast<std::size_t>(pc::LayerKind::kTransition) + 1;
  Outcome o;
  o.pass = worst < 1e-4 && elapsed < 60.0 && kinds.size() == all_kinds;
  o.detail = "max rel error " + fmt("%.3g", worst) + ", layer kinds " + std::to_string(kinds.size()) + "/" +
             std::to_string(all_kinds) + ", " + fmt("%.1f", elapsed) + " s";
  return o;
}

// 2. AUC against the pairwise definition.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != 0) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / static_cast<double>(pairs);
}

Outcome auc_oracle() {
  pc::Rng rng(202);
  std::size_t mismatches = 0, instances = 0;
  while (instances < 200) {
    const std::size_t n = 2 + rng.below(63);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid so ties are common.
      s[i] = static_cast<double>(rng.below(8)) / 8.0;
      l[i] = static_cast<int>(rng.below(2));
    }
    if (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0) continue;
    ++instances;
    mismatches += pc::auc(s, l) != pairwise_auc(s, l);
  }
  const double hand = pc::auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  return {mismatches == 0 && hand == 0.75,
          std::to_string(instances - mismatches) + "/200 exact, hand case " + fmt("%.17g", hand)};
}

// 3. Schedule anchors, continuity, anti-correlation.
Outcome schedule() {
  const pc::OneCycleConfig base;  // step 40 of 100
  bool anchors = pc::lr_at(base, 0) == 0.000055 && pc::lr_at(base, base.step_size) == 0.00055 &&
                 pc::momentum_at(base, 0) == 0.95 && pc::momentum_at(base, base.step_size) == 0.85;

  const pc::OneCycleConfig cfg = pc::make_one_cycle(pc::OneCycleSettings{}, 1000);
  anchors = anchors && pc::lr_at(cfg, 0) == 0.000055 && pc::lr_at(cfg, cfg.step_size) == 0.00055 &&
            pc::momentum_at(cfg, 0) == 0.95 && pc::momentum_at(cfg, cfg.step_size) == 0.85;

  const double lr_slope = (cfg.lr_max - cfg.lr_min) / static_cast<double>(cfg.step_size);
  const double m_slope = (cfg.momentum_high - cfg.momentum_low) / static_cast<double>(cfg.step_size);
  bool continuous = true, anti = true;
  for (std::size_t t = 0; t + 1 < cfg.total_iterations; ++t) {
    const double dl = pc::lr_at(cfg, t + 1) - pc::lr_at(cfg, t);
    const double dm = pc::momentum_at(cfg, t + 1) - pc::momentum_at(cfg, t);
    continuous = continuous && std::abs(dl) <= lr_slope * (1 + 1e-9) && std::abs(dm) <= m_slope * (1 + 1e-9);
    if (t < 2 * cfg.step_size) anti = anti && dl * dm < 0.0;
    else anti = anti && dl <= 0.0 && dm == 0.0;
  }
  return {anchors && continuous && anti, std::string("anchors ") + (anchors ? "exact" : "off") + ", continuity " +
                                             (continuous ? "ok" : "broken") + ", anti-correlation " +
                                             (anti ? "ok" : "broken") + " over 1000 steps"};
}

// 4. SSL beats supervised on the noisy synthetic task.
Outcome ssl_benefit() {
  const auto t0 = Clock::now();
  std::vector<double> sup, ssl;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    pc::ExperimentConfig cfg;
    cfg.seed = s;
    cfg.ssl.seed = s;
    cfg.ssl.schedule.lr_max = 0.05;
    cfg.ssl.augment_probability = 0.1;
    cfg.ssl.runs = 10;
    cfg.ssl.epochs = 7;

    pc::SyntheticSpec spec;
    spec.n = 2000;
    spec.noise = 0.9;
    pc::Rng gen(pc::derive_seed(s, "synthetic"));
    const pc::Dataset all = pc::generate_synthetic(spec, gen);
    pc::Rng pick(pc::derive_seed(s, "labeled"));
    const pc::Dataset labeled = pc::split(all, 0.05, pick).second;
    pc::Dataset rows;
    for (pc::Example e : all) {
      if (!labeled.contains(e.id)) e.label = pc::Label::kUnlabeled;
      rows.add(e);
    }
    pc::SyntheticSpec hold_spec = spec;
    hold_spec.n = 1000;
    hold_spec.id_prefix = "hold";
    pc::Rng hold_rng(pc::derive_seed(s, "holdout"));
    const pc::Dataset holdout = pc::generate_synthetic(hold_spec, hold_rng);
    std::vector<int> truth;
    for (const pc::Example& e : holdout) truth.push_back(e.label == pc::Label::kPositive);

    const pc::PreparedData prepared = pc::prepare_data(rows, std::nullopt, cfg);
    pc::SslConfig sup_cfg = cfg.ssl;
    sup_cfg.alpha.alpha_final = 0.0;
    const pc::SslResult a = pc::run_ssl(cfg.network, sup_cfg, prepared.pools);
    const pc::SslResult b = pc::run_ssl(cfg.network, cfg.ssl, prepared.pools);
    sup.push_back(pc::auc(pc::predict_dataset(a.final_net, holdout), truth));
    ssl.push_back(pc::auc(pc::predict_dataset(b.final_net, holdout), truth));
    std::printf("  seed %2llu  supervised %.4f  ssl %.4f\n", static_cast<unsigned long long>(s), sup.back(),
                ssl.back());
    std::fflush(stdout);
  }
  const double elapsed = seconds_since(t0);
  const double ms = median(sup), mp = median(ssl);
  return {mp >= ms + 0.01 && ms >= 0.80 && ms <= 0.95 && elapsed < 900.0,
          "median supervised " + fmt("%.4f", ms) + ", median ssl " + fmt("%.4f", mp) + " (diff " +
              fmt("%+.4f", mp - ms) + "), " + fmt("%.0f", elapsed) + " s"};
}

// 5. Pseudo-label contract on a small loop.
Outcome pseudo_contract() {
  std::vector<std::string> failures;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok && std::find(failures.begin(), failures.end(), what) == failures.end()) failures.push_back(what);
  };

  const pc::PseudoThresholds defaults;
  require(defaults.positive_above == 0.9 && defaults.negative_below == 0.1, "default thresholds");
  const auto assigned =
      pc::assign_pseudo_labels({{"a", 0.95}, {"b", 0.9}, {"c", 0.5}, {"d", 0.1}, {"e", 0.05}}, defaults);
  require(assigned.size() == 2 && assigned[0].id == "a" && assigned[0].label == pc::Label::kPseudoPositive &&
              assigned[1].id == "e" && assigned[1].label == pc::Label::kPseudoNegative,
          "strict threshold semantics");

  pc::Rng rng(505);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, double> probs;
    const std::size_t n = rng.below(80);
    for (std::size_t i = 0; i < n; ++i) probs["u" + std::to_string(i)] = rng.uniform();
    const pc::PseudoLabelSet set = pc::balance_pseudo(pc::assign_pseudo_labels(probs, defaults));
    std::size_t pos = 0, neg = 0;
    for (const auto& m : set.members) {
      const double p = probs.at(m.id);
      pos += m.label == pc::Label::kPseudoPositive;
      neg += m.label == pc::Label::kPseudoNegative;
      require(m.label == pc::Label::kPseudoPositive ? p > 0.9 : p < 0.1, "members respect thresholds");
    }
    require(pos == neg && set.n_pos == pos && set.n_neg == neg, "balance");
  }
  require(pc::alpha_at(pc::AlphaSchedule{}, 0) == 0.0, "alpha on run 0");

  // Training loop: 60 labeled rows, 240 unlabeled. Four epochs leave the micro
  // net unsure, so thresholds are loosened to get non-empty pseudo sets.
  const pc::Dataset all = pc::testing::small_dataset(300, 55);
  pc::Dataset labeled_rows, unlabeled;
  for (std::size_t i = 0; i < all.size(); ++i) {
    pc::Example e = all[i];
    if (i >= 60) e.label = pc::Label::kUnlabeled;
    (i < 60 ? labeled_rows : unlabeled).add(std::move(e));
  }
  pc::Rng split_rng(56);
  auto [train, val] = pc::split(labeled_rows, 0.3, split_rng);
  const pc::SslData data{train, val, unlabeled, std::nullopt};
  pc::SslConfig cfg;
  cfg.runs = 4;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.pseudo_batch_size = 8;
  cfg.schedule.lr_max = 0.05;
  cfg.thresholds = {0.6, 0.4};
  cfg.alpha = {1.0, 1, 2};
  cfg.threads = 1;
  cfg.seed = 5;

  std::size_t non_empty = 0;
  pc::SslHooks hooks;
  hooks.on_run = [&](const pc::RunSnapshot& s) {
    std::map<std::string, const pc::Example*> pool;
    for (const pc::Example& e : *s.train) pool[e.id] = &e;
    for (const pc::Example& e : *s.val) pool[e.id] = &e;
    for (const pc::Dataset* d : {&data.train, &data.val}) {
      for (const pc::Example& e : *d) {
        const auto it = pool.find(e.id);
        require(it != pool.end() && it->second->label == e.label && it->second->patch == e.patch,
                "labeled pool preserved");
      }
    }
    require(s.alpha == pc::alpha_at(cfg.alpha, s.run), "alpha schedule");
    if (s.run == 0) require(s.alpha == 0.0 && s.pseudo->members.empty(), "run 0 supervised");
    if (s.alpha == 0.0) return;
    const std::vector<double> probs = pc::predict_dataset(*s.model, data.unlabeled, 1);
    std::map<std::string, double> by_id;
    for (std::size_t i = 0; i < probs.size(); ++i) by_id[data.unlabeled[i].id] = probs[i];
    const pc::PseudoLabelSet fresh = pc::balance_pseudo(pc::assign_pseudo_labels(by_id, cfg.thresholds), s.run);
    require(s.pseudo->members == fresh.members, "re-prediction freshness");
    require(s.pseudo->n_pos == s.pseudo->n_neg, "balance in loop");
    non_empty += !s.pseudo->members.empty();
  };
  pc::run_ssl(pc::testing::tiny_config(), cfg, data, hooks);
  require(non_empty > 0, "loop produced pseudo labels");

  std::string detail = failures.empty() ? "balance, thresholds, freshness, alpha(0)=0, labeled pool all hold" : "";
  for (const auto& f : failures) detail += (detail.empty() ? "failed: " : ", ") + f;
  return {failures.empty(), detail + " (" + std::to_string(non_empty) + " pseudo runs checked)"};
}

// 6. TTA and ensemble algebra.
Outcome tta_algebra() {
  bool ok = true;
  std::string bad;
  pc::Rng init(606);
  const pc::NetworkConfig net_cfg = pc::testing::tiny_config(3, 8);
  const pc::Network net = pc::Network::build(net_cfg, init);
  const pc::Dataset d = pc::testing::small_dataset(12, 607);
  const pc::TtaPreset dense10 = pc::tta_preset("tta_dense10");
  for (const pc::Example& e : d) {
    const std::vector<double> views = pc::tta_views(net, e, dense10);
    double naive = 0.0;
    for (double v : views) naive += v;
    naive /= static_cast<double>(views.size());
    const double p = pc::tta_predict(net, e, dense10);
    if (views.size() != 11 || p != pc::ensemble_predict(views) || std::abs(p - naive) > 1e-15) {
      ok = false;
      bad = "mean of eleven";
    }
  }
  pc::Rng rng(608);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    std::vector<double> p(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform();
      w[i] = 0.1 + rng.uniform();
    }
    const double out = pc::ensemble_predict(p, w);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<double> p2(n), w2(n);
    for (std::size_t i = 0; i < n; ++i) {
      p2[i] = p[order[i]];
      w2[i] = w[order[i]];
    }
    const std::vector<double> same(n, p[0]);
    if (out < *lo || out > *hi) ok = false, bad = "bounds";
    if (pc::ensemble_predict(p2, w2) != out) ok = false, bad = "permutation";
    if (pc::ensemble_predict(same) != p[0] || pc::ensemble_predict(same, w) != p[0]) ok = false, bad = "idempotence";
  }
  return {ok, ok ? "11 views averaged exactly; bounds, permutation, idempotence exact over 1000 draws"
                 : "failed: " + bad};
}

// 7. Every CLI command reruns bit-identically.
bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path other = b / fs::relative(entry.path(), a);
    if (!fs::exists(other) || pc::testing::slurp(entry.path()) != pc::testing::slurp(other)) return false;
    ++files;
  }
  return files > 0;
}

Outcome cli_determinism() {
  pc::testing::TempDir dir;
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  auto run = [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    return pc::run_cli(args, out, err);
  };
  pc::testing::write_text(dir / "c.ini",
                          "seed = 8\n[network]\nheight = 8\nwidth = 8\n[schedule]\nlr_max = 0.05\n"
                          "[ssl]\nruns = 3\nepochs = 1\nbatch_size = 8\npseudo_batch_size = 8\n"
                          "positive_above = 0.7\nnegative_below = 0.3\nalpha_t1 = 1\nalpha_t2 = 2\n");
  if (run({"gen-data", "--n", "200", "--patch-size", "8", "--labeled-frac", "0.3", "--holdout-n", "50", "--seed",
           "8", "--out", p("data")}) != 0) {
    return {false, "gen-data failed"};
  }
  const std::string manifest = p("data/manifest.csv"), holdout = p("data/holdout/manifest.csv");

  using Args = std::function<std::vector<std::string>(const std::string&)>;
  const std::vector<std::pair<std::string, Args>> commands = {
      {"gen-data",
       [&](const std::string& o) {
         return std::vector<std::string>{"gen-data", "--n", "50", "--holdout-n", "10", "--seed", "3", "--out", o};
       }},
      {"filter", [&](const std::string& o) { return std::vector<std::string>{"filter", "--manifest", manifest, "--out", o}; }},
      {"train",
       [&](const std::string& o) {
         return std::vector<std::string>{"train", "--config", p("c.ini"), "--manifest", manifest, "--holdout",
                                         holdout, "--quiet", "--out", o};
       }},
      {"ssl-train",
       [&](const std::string& o) {
         return std::vector<std::string>{"ssl-train", "--config", p("c.ini"), "--manifest", manifest, "--holdout",
                                         holdout, "--quiet", "--out", o};
       }},
      {"predict",
       [&](const std::string& o) {
         return std::vector<std::string>{"predict", "--model", p("ssl-train_a/model.ckpt"), "--manifest", holdout,
                                         "--out", o};
       }},
      {"tta-predict",
       [&](const std::string& o) {
         return std::vector<std::string>{"tta-predict", "--model", p("ssl-train_a/model.ckpt"), "--manifest",
                                         holdout, "--preset", "tta_ens15", "--out", o};
       }},
      {"ensemble",
       [&](const std::string& o) {
         return std::vector<std::string>{"ensemble", "--preds", p("predict_a/predictions.csv"),
                                         p("tta-predict_a/predictions.csv"), "--weights", "1", "2", "--out", o};
       }},
      {"eval",
       [&](const std::string& o) {
         return std::vector<std::string>{"eval", "--preds", p("ensemble_a/predictions.csv"), "--manifest", holdout,
                                         "--out", o};
       }},
      {"dump-schedule",
       [&](const std::string& o) {
         return std::vector<std::string>{"dump-schedule", "--step", "40", "--total", "100", "--out", o};
       }},
  };
  std::string detail;
  bool ok = true;
  for (const auto& [name, args] : commands) {
    const int a = run(args(p(name + "_a"))), b = run(args(p(name + "_b")));
    const bool same = a == 0 && b == 0 && same_tree(p(name + "_a"), p(name + "_b"));
    ok = ok && same;
    if (!same) detail += (detail.empty() ? "differs: " : ", ") + name;
  }
  return {ok, ok ? std::to_string(commands.size()) + " commands rerun bit-identically" : detail};
}

// 8. Batchnorm statistics and transition widths. With eps in the denominator
// the output variance is v / (v + eps) for batch variance v, so the 1e-5
// bound needs v >= 1; draws below that are checked against v / (v + eps) only.
Outcome batchnorm_transition() {
  pc::Rng rng(808);
  double worst_mean = 0.0, worst_var = 0.0, worst_oracle = 0.0;
  std::size_t bounded = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(15), c = 1 + rng.below(8), hw = 1 + rng.below(6);
    const bool flat = trial % 5 == 0;
    pc::Tensor x(flat ? pc::Shape{n, c} : pc::Shape{n, c, hw, hw});
    const double offset = rng.uniform(-20.0, 20.0), scale = rng.uniform(0.1, 10.0);
    for (double& v : x.values()) v = offset + scale * rng.normal();
    pc::BatchNorm bn("bn", c);
    pc::LayerCache cache;
    const pc::Tensor y = bn.forward(x, pc::ForwardContext{true, &rng}, cache);
    const std::size_t inner = y.size() / (n * c);
    const double count = static_cast<double>(n * inner);
    auto moments = [&](const pc::Tensor& t, std::size_t ch) {
      double s = 0.0, q = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < inner; ++i) s += t[(b * c + ch) * inner + i];
      const double mean = s / count;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < inner; ++i) q += std::pow(t[(b * c + ch) * inner + i] - mean, 2);
      return std::pair{mean, q / count};
    };
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto [in_mean, in_var] = moments(x, ch);
      const auto [mean, var] = moments(y, ch);
      ++total;
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_oracle = std::max(worst_oracle, std::abs(var - in_var / (in_var + pc::BatchNorm::kEpsilon)));
      if (in_var >= 1.0) {
        ++bounded;
        worst_var = std::max(worst_var, std::abs(var - 1.0));
      }
    }
  }
  bool widths = true;
  for (std::size_t m = 1; m <= 64; ++m) widths = widths && pc::transition_channels(m) == m / 2;
  return {worst_mean < 1e-6 && worst_var < 1e-5 && worst_oracle < 1e-9 && bounded > 100 && widths,
          "worst |mean| " + fmt("%.2g", worst_mean) + ", worst |var-1| " + fmt("%.2g", worst_var) + " on " +
              std::to_string(bounded) + "/" + std::to_string(total) + " channels with batch variance >= 1, " +
              "worst |var - v/(v+eps)| " + fmt("%.2g", worst_oracle) + ", transition floor(m/2) for m 1..64 " +
              (widths ? "ok" : "wrong")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 gradient check", gradients},       {"2 auc oracle", auc_oracle},
      {"3 schedule", schedule},              {"4 ssl benefit", ssl_benefit},
      {"5 pseudo-label contract", pseudo_contract}, {"6 tta/ensemble algebra", tta_algebra},
      {"7 cli determinism", cli_determinism}, {"8 batchnorm/transition", batchnorm_transition},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
