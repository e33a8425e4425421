#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "pseudocam/error.hpp"
#include "pseudocam/infer.hpp"
#include "pseudocam/ssl.hpp"
#include "test_util.hpp"

namespace pseudocam {
namespace {

using testing::TempDir;
using testing::write_text;

Network tiny_net(std::uint64_t seed) {
  Rng rng(seed);
  return Network::build(testing::tiny_config(), rng);
}

TEST(TtaPreset, DocumentedCounts) {
  EXPECT_EQ(tta_preset("none").transforms.size(), 0u);
  EXPECT_EQ(tta_preset("tta_dense10").transforms.size(), 10u);
  EXPECT_EQ(tta_preset("tta_ens15").transforms.size(), 15u);
  EXPECT_THROW(tta_preset("tta_dense11"), ConfigError);
  for (const std::string& name : tta_preset_names()) {
    for (const TtaTransform& t : tta_preset(name).transforms) {
      for (const AugmentSpec& s : t.chain) {
        EXPECT_NO_THROW(s.validate());
        EXPECT_EQ(s.a.lo, s.a.hi) << t.name;
        EXPECT_EQ(s.b.lo, s.b.hi) << t.name;
      }
    }
  }
}

TEST(Tta, Dense10IsMeanOfEleven) {
  const Network net = tiny_net(1);
  const Dataset d = testing::small_dataset(6, 2);
  const TtaPreset preset = tta_preset("tta_dense10");
  for (const Example& e : d) {
    const std::vector<double> views = tta_views(net, e, preset);
    ASSERT_EQ(views.size(), 11u);
    // Original first, then each transform applied on its own.
    const Tensor one = net.predict(e.patch.reshaped({1, 3, 8, 8}));
    EXPECT_EQ(views[0], one[0]);
    for (std::size_t k = 0; k < preset.transforms.size(); ++k) {
      const Tensor v = apply_tta(e.patch, preset.transforms[k], e.id);
      EXPECT_EQ(views[k + 1], net.predict(v.reshaped({1, 3, 8, 8}))[0]) << preset.transforms[k].name;
    }
    const double mean = std::accumulate(views.begin(), views.end(), 0.0) / 11.0;
    const double out = tta_predict(net, e, preset);
    EXPECT_NEAR(out, mean, 1e-15);
    EXPECT_EQ(out, ensemble_predict(views));
    EXPECT_GE(out, *std::min_element(views.begin(), views.end()));
    EXPECT_LE(out, *std::max_element(views.begin(), views.end()));
  }
}

TEST(Tta, NonePresetIsPlainPrediction) {
  const Network net = tiny_net(3);
  const Dataset d = testing::small_dataset(3, 4);
  for (const Example& e : d) {
    EXPECT_EQ(tta_predict(net, e, tta_preset("none")), net.predict(e.patch.reshaped({1, 3, 8, 8}))[0]);
  }
}

TEST(Tta, Ens15OutputsInUnitInterval) {
  const Network net = tiny_net(5);
  for (const Example& e : testing::small_dataset(4, 6)) {
    const double p = tta_predict(net, e, tta_preset("tta_ens15"));
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_EQ(tta_views(net, e, tta_preset("tta_ens15")).size(), 16u);
  }
}

TEST(Tta, ViewsDependOnlyOnExample) {
  const Dataset d = testing::small_dataset(2, 7);
  const TtaTransform noise = tta_preset("tta_dense10").transforms[8];
  ASSERT_EQ(noise.name, "noise02");
  EXPECT_EQ(apply_tta(d[0].patch, noise, d[0].id), apply_tta(d[0].patch, noise, d[0].id));
  EXPECT_NE(apply_tta(d[0].patch, noise, "a"), apply_tta(d[0].patch, noise, "b"));
}

TEST(Ensemble, Bounds) {
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> p(1 + rng.below(20)), w(p.size());
    for (double& v : p) v = rng.uniform();
    for (double& v : w) v = rng.uniform(0.0, 3.0);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    const double eq = ensemble_predict(p);
    const double wt = ensemble_predict(p, w);
    EXPECT_GE(eq, *lo);
    EXPECT_LE(eq, *hi);
    EXPECT_GE(wt, *lo);
    EXPECT_LE(wt, *hi);
  }
}

TEST(Ensemble, PermutationInvariant) {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(2 + rng.below(15)), w(p.size());
    for (double& v : p) v = rng.uniform();
    for (double& v : w) v = rng.uniform(0.1, 2.0);
    const double base = ensemble_predict(p), base_w = ensemble_predict(p, w);
    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    std::vector<double> q, qw;
    for (std::size_t k : perm) {
      q.push_back(p[k]);
      qw.push_back(w[k]);
    }
    EXPECT_EQ(ensemble_predict(q), base);
    EXPECT_EQ(ensemble_predict(q, qw), base_w);
  }
}

TEST(Ensemble, IdempotentOnIdenticalInputs) {
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.uniform();
    const std::vector<double> p(1 + rng.below(30), v);
    EXPECT_EQ(ensemble_predict(p), v);
    std::vector<double> w(p.size());
    for (double& x : w) x = rng.uniform(0.1, 5.0);
    EXPECT_EQ(ensemble_predict(p, w), v);
  }
}

TEST(Ensemble, WeightedMeanValue) {
  const std::vector<double> p = {0.2, 0.8}, w = {3.0, 1.0};
  EXPECT_NEAR(ensemble_predict(p, w), 0.35, 1e-15);
  EXPECT_NEAR(ensemble_predict(p), 0.5, 1e-15);
}

TEST(Ensemble, Errors) {
  EXPECT_THROW(ensemble_predict(std::vector<double>{}), ValidationError);
  EXPECT_THROW(ensemble_predict(std::vector<double>{0.1, 0.2}, std::vector<double>{1.0}), ValidationError);
  EXPECT_THROW(ensemble_predict(std::vector<double>{0.1}, std::vector<double>{-1.0}), ValidationError);
  EXPECT_THROW(ensemble_predict(std::vector<double>{0.1, 0.2}, std::vector<double>{0.0, 0.0}), ValidationError);
  EXPECT_THROW(ensemble_predict(std::vector<double>{NAN}), ValidationError);
}

TEST(PredictDataset, IndependentOfThreadCount) {
  const Network net = tiny_net(11);
  const Dataset d = testing::small_dataset(150, 12);
  const std::vector<double> one = predict_dataset(net, d, 1);
  EXPECT_EQ(predict_dataset(net, d, 3), one);
  EXPECT_EQ(predict_dataset(net, d, 0), one);
  for (std::size_t i = 0; i < d.size(); i += 37) {
    EXPECT_EQ(one[i], net.predict(d[i].patch.reshaped({1, 3, 8, 8}))[0]);
  }
  const TtaPreset preset = tta_preset("tta_ens15");
  EXPECT_EQ(tta_predict_dataset(net, d, preset, 1), tta_predict_dataset(net, d, preset, 4));
}

TEST(PredictionsFile, RoundTripIsBitExact) {
  TempDir dir;
  Rng rng(13);
  std::vector<Prediction> preds;
  for (int i = 0; i < 50; ++i) preds.push_back({"p" + std::to_string(i), rng.uniform()});
  preds.push_back({"edge0", 0.0});
  preds.push_back({"edge1", 1.0});
  write_predictions(dir / "p.csv", preds, "meta");
  EXPECT_EQ(testing::slurp(dir / "p.csv").substr(0, 7), "# meta\n");
  EXPECT_EQ(read_predictions(dir / "p.csv"), preds);
}

TEST(PredictionsFile, Malformed) {
  TempDir dir;
  write_text(dir / "a.csv", "id,prob\nx,0.5\n");
  EXPECT_THROW(read_predictions(dir / "a.csv"), ValidationError);
  write_text(dir / "b.csv", "id,probability\nx,1.5\n");
  EXPECT_THROW(read_predictions(dir / "b.csv"), ValidationError);
  write_text(dir / "c.csv", "id,probability\nx,0.5\nx,0.6\n");
  EXPECT_THROW(read_predictions(dir / "c.csv"), ValidationError);
  write_text(dir / "d.csv", "id,probability\nx,abc\n");
  EXPECT_THROW(read_predictions(dir / "d.csv"), ValidationError);
  EXPECT_THROW(read_predictions(dir / "missing.csv"), IoError);
}

TEST(EnsembleFiles, AlignsById) {
  const std::vector<Prediction> a = {{"x", 0.2}, {"y", 0.6}};
  const std::vector<Prediction> b = {{"y", 0.8}, {"x", 0.4}};
  const auto out = ensemble_files({a, b});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].id, "x");
  EXPECT_NEAR(out[0].probability, 0.3, 1e-15);
  EXPECT_NEAR(out[1].probability, 0.7, 1e-15);
  EXPECT_THROW(ensemble_files({a, {{"x", 0.1}, {"z", 0.2}}}), ValidationError);
  EXPECT_THROW(ensemble_files({a, {{"x", 0.1}}}), ValidationError);
}

// Models trained from different seeds; a 5-seed average varies less across
// ensembles than single models do across seeds.
TEST(Ensemble, SeedEnsembleReducesVariance) {
  const Dataset all = testing::small_dataset(160, 30, 8, 0.6);
  Rng split_rng(31);
  auto [train_all, test] = split(all, 0.5, split_rng);
  Rng val_rng(32);
  auto [train, val] = split(train_all, 0.25, val_rng);
  SslConfig cfg;
  cfg.runs = 1;
  cfg.epochs = 3;
  cfg.schedule.lr_max = 0.05;
  cfg.augment_probability = 0.0;
  cfg.threads = 1;
  const SslData data{train, val, Dataset(SplitTag::kUnlabeled), std::nullopt};
  const std::size_t kSeeds = 10;
  std::vector<std::vector<double>> preds;  // [seed][test point]
  for (std::size_t s = 0; s < kSeeds; ++s) {
    cfg.seed = 100 + s;
    preds.push_back(predict_dataset(run_ssl(testing::tiny_config(), cfg, data).final_net, test, 1));
  }
  auto variance = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double q = 0.0;
    for (double x : v) q += (x - m) * (x - m);
    return q / static_cast<double>(v.size());
  };
  Rng rng(33);
  std::vector<double> margins;
  for (int rep = 0; rep < 9; ++rep) {
    double single = 0.0, ensemble = 0.0;
    for (int k = 0; k < 20; ++k) {
      const std::size_t point = rng.below(test.size());
      std::vector<double> per_seed;
      for (std::size_t s = 0; s < kSeeds; ++s) per_seed.push_back(preds[s][point]);
      single += variance(per_seed);
      std::vector<double> ens;
      for (int draw = 0; draw < 10; ++draw) {
        std::vector<std::size_t> seeds(kSeeds);
        std::iota(seeds.begin(), seeds.end(), 0);
        rng.shuffle(std::span(seeds));
        std::vector<double> members;
        for (std::size_t m = 0; m < 5; ++m) members.push_back(per_seed[seeds[m]]);
        ens.push_back(ensemble_predict(members));
      }
      ensemble += variance(ens);
    }
    margins.push_back(single / 20.0 - ensemble / 20.0);
  }
  std::nth_element(margins.begin(), margins.begin() + 4, margins.end());
  EXPECT_GE(margins[4], 0.0);
}

}  // namespace
}  // namespace pseudocam
