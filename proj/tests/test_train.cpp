#include "hkconv/hkconv.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace hkconv;

namespace {

const GraphBatch& small_graphs() {
  static const GraphBatch g = synth_trees_vs_random(40, 10, 1);
  return g;
}

HKNConfig small_config() {
  HKNConfig cfg;
  cfg.K = 3;
  cfg.hidden_dim = 8;
  cfg.kernel_source = KernelSource::random;
  cfg.max_epochs = 20;
  return cfg;
}

std::vector<double> split_series(const TrainResult& r, Split s, double Metrics::*field) {
  std::vector<double> out;
  for (const auto& row : r.history)
    if (row.split == s) out.push_back(row.metrics.*field);
  return out;
}

std::filesystem::path temp_dir() {
  const auto d = std::filesystem::temp_directory_path() / "hkconv_test_train";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Train, InitialLossNearLogOfClassCount) {
  HKNConfig cfg = small_config();
  cfg.max_epochs = 0;
  HKNModel m = build_hkn(cfg, small_graphs().num_features(), 2);
  const TrainResult r = train(m, small_graphs());
  ASSERT_EQ(r.epochs_run, 0);
  for (Split s : {Split::train, Split::val, Split::test})
    EXPECT_NEAR(split_series(r, s, &Metrics::loss).at(0), std::log(2.0), 0.2) << to_string(s);
}

TEST(Train, LossDecreasesOverFirstTwentyEpochs) {
  HKNModel m = build_hkn(small_config(), small_graphs().num_features(), 2);
  const TrainResult r = train(m, small_graphs());
  const auto loss = split_series(r, Split::train, &Metrics::loss);
  ASSERT_EQ(loss.size(), 21u);
  EXPECT_LT(loss[10], loss[0]);
  EXPECT_LT(loss[20], loss[10]);
}

TEST(Train, NodeTaskLossDecreases) {
  const GraphBatch g = synth_nodes(8, 10, 2);
  HKNConfig cfg = small_config();
  cfg.task = Task::node;
  HKNModel m = build_hkn(cfg, g.num_features(), 2);
  const TrainResult r = train(m, g);
  const auto loss = split_series(r, Split::train, &Metrics::loss);
  EXPECT_LT(loss.back(), loss.front());
}

TEST(Train, SameSeedSameHistoryAndCheckpoint) {
  HKNConfig cfg = small_config();
  cfg.max_epochs = 6;
  cfg.dropout = 0.3;
  cfg.weight_decay = 1e-3;
  auto run = [&](std::uint64_t seed) {
    HKNConfig c = cfg;
    c.seed = seed;
    HKNModel m = build_hkn(c, small_graphs().num_features(), 2);
    return train(m, small_graphs());
  };
  const TrainResult a = run(4), b = run(4), c = run(5);
  EXPECT_EQ(metrics_csv(a.history), metrics_csv(b.history));
  EXPECT_EQ(io::to_string(checkpoint_to_json(a.best)), io::to_string(checkpoint_to_json(b.best)));
  EXPECT_NE(metrics_csv(a.history), metrics_csv(c.history));
}

TEST(Train, OptimizedKernelsDeterministic) {
  HKNConfig cfg = small_config();
  cfg.kernel_source = KernelSource::optimized;
  const HKNModel a = build_hkn(cfg, 9, 2);
  const HKNModel b = build_hkn(cfg, 9, 2);
  for (int l = 0; l < cfg.layers; ++l)
    EXPECT_EQ(io::to_string(io::kernels_to_json(a.kernels[l])), io::to_string(io::kernels_to_json(b.kernels[l])));
}

TEST(Train, EarlyStoppingAndBestCheckpointRules) {
  HKNConfig cfg = small_config();
  cfg.max_epochs = 60;
  cfg.patience = 4;
  HKNModel m = build_hkn(cfg, small_graphs().num_features(), 2);
  const TrainResult r = train(m, small_graphs());
  const auto acc = split_series(r, Split::val, &Metrics::accuracy);
  const auto loss = split_series(r, Split::val, &Metrics::loss);
  ASSERT_EQ(static_cast<int>(acc.size()), r.epochs_run + 1);

  int last_improvement = 0;
  double best = acc[0];
  for (int e = 1; e < static_cast<int>(acc.size()); ++e)
    if (acc[e] > best) {
      best = acc[e];
      last_improvement = e;
    }
  EXPECT_EQ(r.epochs_run, std::min(cfg.max_epochs, last_improvement + cfg.patience));

  int expect = 0;
  for (int e = 1; e < static_cast<int>(acc.size()); ++e)
    if (acc[e] > acc[expect] || (acc[e] == acc[expect] && loss[e] < loss[expect])) expect = e;
  EXPECT_EQ(r.best.epoch, expect);
  EXPECT_EQ(r.best.val.accuracy, acc[expect]);
  EXPECT_EQ(r.best.val.loss, loss[expect]);
}

TEST(Train, RepresentationsStayOnManifold) {
  HKNConfig cfg = small_config();
  cfg.max_epochs = 20;
  HKNModel m = build_hkn(cfg, small_graphs().num_features(), 2);
  const GraphBatch& g = small_graphs();
  int checks = 0;
  double worst = 0.0;
  train(m, g, [&](int epoch, const std::array<Metrics, 3>&) {
    if (epoch % 10 != 0) return;
    ++checks;
    std::vector<LorentzPoint> cur;
    for (int v = 0; v < g.num_nodes(); ++v)
      cur.push_back(embed_euclidean(g.features.row(v).transpose(), ManifoldConfig{cfg.curvature, g.num_features()}));
    for (int l = 0; l < cfg.layers; ++l) {
      const HKConvParams p = layer_params(m, l);
      std::vector<LorentzPoint> next;
      for (int v = 0; v < g.num_nodes(); ++v) {
        std::vector<LorentzPoint> nb;
        for (int u : g.neighborhood(v)) nb.push_back(cur[u]);
        next.push_back(hkconv::hkconv(cur[v], nb, p));
        worst = std::max(worst, next.back().constraint_error() / std::max(1.0, next.back().time() * next.back().time()));
      }
      cur = std::move(next);
    }
  });
  EXPECT_EQ(checks, 3);
  EXPECT_LE(worst, 1e-9);
}

TEST(Train, RejectsInconsistentInputs) {
  HKNConfig cfg = small_config();
  cfg.task = Task::node;
  HKNModel m = build_hkn(cfg, small_graphs().num_features(), 2);
  EXPECT_THROW(train(m, small_graphs()), ParameterError);

  GraphBatch no_val = small_graphs();
  no_val.val.clear();
  HKNModel m2 = build_hkn(small_config(), small_graphs().num_features(), 2);
  EXPECT_THROW(train(m2, no_val), ParameterError);
}

TEST(Evaluate, DoesNotMutateAndRejectsEmptySplit) {
  const HKNModel m = build_hkn(small_config(), small_graphs().num_features(), 2);
  const std::string before = io::to_string(params_to_json(m.params));
  const Metrics a = evaluate(m, small_graphs(), Split::test);
  const Metrics b = evaluate(m, small_graphs(), Split::test);
  EXPECT_EQ(io::to_string(params_to_json(m.params)), before);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.accuracy, 1.0);
  EXPECT_GE(a.macro_f1, 0.0);
  EXPECT_LE(a.macro_f1, 1.0);

  GraphBatch g = small_graphs();
  g.test.clear();
  EXPECT_THROW(evaluate(m, g, Split::test), ParameterError);
}

TEST(Checkpoint, RoundTripReproducesMetrics) {
  HKNConfig cfg = small_config();
  cfg.max_epochs = 5;
  HKNModel m = build_hkn(cfg, small_graphs().num_features(), 2);
  const TrainResult r = train(m, small_graphs());
  const auto path = temp_dir() / "checkpoint.json";
  save_checkpoint(path, r.best);
  const Checkpoint c = load_checkpoint(path);
  EXPECT_EQ(io::to_string(checkpoint_to_json(c)), io::to_string(checkpoint_to_json(r.best)));
  const Metrics t = evaluate(c.model, small_graphs(), Split::test);
  EXPECT_EQ(t.loss, r.best.test.loss);
  EXPECT_EQ(t.accuracy, r.best.test.accuracy);
  EXPECT_EQ(t.macro_f1, r.best.test.macro_f1);
}

TEST(Checkpoint, LoaderRejectsDamagedFiles) {
  const HKNModel m = build_hkn(small_config(), small_graphs().num_features(), 2);
  const io::Json good = checkpoint_to_json(Checkpoint{m, 0, {}, {}});

  io::Json j = good;
  j["format"] = "something-else";
  EXPECT_THROW(checkpoint_from_json(j), ValidationError);

  j = good;
  j["params"].erase("head/centroids");
  EXPECT_THROW(checkpoint_from_json(j), ValidationError);

  j = good;
  j["kernels"].erase(1);
  EXPECT_THROW(checkpoint_from_json(j), ValidationError);
}

TEST(MetricsCsv, HeaderAndRowCount) {
  HKNConfig cfg = small_config();
  cfg.max_epochs = 2;
  HKNModel m = build_hkn(cfg, small_graphs().num_features(), 2);
  const TrainResult r = train(m, small_graphs());
  const std::string csv = metrics_csv(r.history);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,split,loss,accuracy,macro_f1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 3);
}

TEST(Sweep, OneRowPerKAndStdOverSeeds) {
  HKNConfig cfg = small_config();
  cfg.max_epochs = 1;
  const GraphBatch g = synth_trees_vs_random(10, 8, 3);
  const auto cells = sweep_kernels(cfg, g, {2, 3}, {0, 1, 2});
  ASSERT_EQ(cells.size(), 6u);
  const auto rows = summarize_sweep(cells);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.runs, 3);
    double mean = 0.0;
    for (const auto& c : cells)
      if (c.K == row.K) mean += c.metric / 3.0;
    double var = 0.0;
    for (const auto& c : cells)
      if (c.K == row.K) var += (c.metric - mean) * (c.metric - mean) / 3.0;
    EXPECT_NEAR(row.mean, mean, 1e-15);
    EXPECT_NEAR(row.std, std::sqrt(var), 1e-15);
  }
  const std::string csv = sweep_csv(cells);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "K,seed,metric");
}

TEST(Sweep, SummaryOfHandValues) {
  const std::vector<SweepCell> cells = {{2, 0, 0.5}, {2, 1, 0.7}, {2, 2, 0.9}, {4, 0, 1.0}, {4, 1, 1.0}, {4, 2, 1.0}};
  const auto rows = summarize_sweep(cells);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NEAR(rows[0].mean, 0.7, 1e-15);
  EXPECT_NEAR(rows[0].std, std::sqrt(0.08 / 3.0), 1e-15);
  EXPECT_EQ(rows[1].std, 0.0);
}

TEST(Dropout, MaskNeverDropsEveryUnit) {
  const DropoutStream d{CounterRng(1), 0.9};
  int kept = 0;
  for (std::uint64_t v = 0; v < 2000; ++v) {
    const Vec m = d.mask(1, v, 1, 2);
    EXPECT_FALSE(m.isZero()) << v;
    for (Eigen::Index i = 0; i < 2; ++i) {
      EXPECT_TRUE(m[i] == 0.0 || m[i] == 1.0 / (1.0 - 0.9));
      kept += m[i] != 0.0;
    }
  }
  EXPECT_EQ(d.mask(1, 7, 1, 2), d.mask(1, 7, 1, 2));
  EXPECT_GT(kept, 2000);
}
