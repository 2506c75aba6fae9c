#include "hkconv/hkconv.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <queue>

using namespace hkconv;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "hkconv_test_graph";
  std::filesystem::create_directories(dir);
  return dir / name;
}

io::Json triangle_json() {
  return io::parse(R"({"num_nodes": 3, "features": [[1, 0], [0, 1], [1, 1]],
                       "edges": [[0, 1], [1, 2], [2, 0]], "graph_ids": [0, 0, 0], "labels": [1]})",
                   "triangle");
}

// Expected failure message fragment for a mutated copy of a valid dataset.
void expect_rejected(io::Json j, const std::string& fragment) {
  try {
    dataset_from_json(j);
    FAIL() << "accepted; expected an error mentioning " << fragment;
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

io::Json node_task_json() {
  return io::parse(R"({"num_nodes": 4, "features": [[1], [2], [3], [4]], "edges": [[0, 1], [2, 3]],
                       "labels": [0, 1, 0, 1], "masks": {"train": [0, 1], "val": [2], "test": [3]}})",
                   "nodes");
}

bool connected(int n, const std::vector<std::pair<int, int>>& edges, int offset) {
  std::vector<std::vector<int>> adj(n);
  for (auto [a, b] : edges) {
    adj[a - offset].push_back(b - offset);
    adj[b - offset].push_back(a - offset);
  }
  std::vector<bool> seen(n, false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  int count = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int u : adj[v])
      if (!seen[u]) {
        seen[u] = true;
        ++count;
        q.push(u);
      }
  }
  return count == n;
}

// Value-level forward pass; returns the representations after every layer.
std::vector<std::vector<LorentzPoint>> node_representations(const HKNModel& m, const GraphBatch& data) {
  std::vector<std::vector<LorentzPoint>> out;
  std::vector<LorentzPoint> cur;
  for (int v = 0; v < data.num_nodes(); ++v)
    cur.push_back(embed_euclidean(data.features.row(v).transpose(), ManifoldConfig{m.cfg.curvature, data.num_features()}));
  for (int l = 0; l < m.cfg.layers; ++l) {
    const HKConvParams p = layer_params(m, l);
    std::vector<LorentzPoint> next;
    for (int v = 0; v < data.num_nodes(); ++v) {
      std::vector<LorentzPoint> nb;
      for (int u : data.neighborhood(v)) nb.push_back(cur[u]);
      next.push_back(hkconv::hkconv(cur[v], nb, p));
    }
    cur = next;
    out.push_back(cur);
  }
  return out;
}

HKNConfig small_config(Task task) {
  HKNConfig cfg;
  cfg.K = 3;
  cfg.hidden_dim = 4;
  cfg.task = task;
  cfg.kernel_source = KernelSource::random;
  return cfg;
}

}  // namespace

TEST(LoadDataset, TriangleExpandsSymmetrically) {
  const GraphBatch g = dataset_from_json(triangle_json());
  EXPECT_EQ(g.task, Task::graph);
  EXPECT_EQ(g.num_nodes(), 3);
  EXPECT_EQ(g.num_graphs(), 1);
  EXPECT_EQ(g.num_directed_adjacency(), 6);
  EXPECT_EQ(g.adjacency[0], (std::vector<int>{1, 2}));
  EXPECT_EQ(g.adjacency[2], (std::vector<int>{0, 1}));
}

TEST(LoadDataset, IsolatedNodeFallsBackToItself) {
  const GraphBatch g = dataset_from_json(io::parse(
      R"({"num_nodes": 3, "features": [[1], [1], [1]], "edges": [[0, 1]], "labels": [0, 1, 0]})", "iso"));
  EXPECT_EQ(g.task, Task::node);
  EXPECT_TRUE(g.isolated[2]);
  EXPECT_FALSE(g.isolated[0]);
  EXPECT_TRUE(g.adjacency[2].empty());
  EXPECT_EQ(g.neighborhood(2), std::vector<int>{2});
}

TEST(LoadDataset, BooleanMasksAccepted) {
  io::Json j = node_task_json();
  j["masks"] = io::parse(R"({"train": [true, true, false, false], "val": [false, false, true, false],
                             "test": [false, false, false, true]})", "m");
  const GraphBatch g = dataset_from_json(j);
  EXPECT_EQ(g.train, (std::vector<int>{0, 1}));
  EXPECT_EQ(g.val, std::vector<int>{2});
  EXPECT_EQ(g.test, std::vector<int>{3});
}

TEST(LoadDataset, RoundTripIsIdentity) {
  const GraphBatch a = synth_trees_vs_random(10, 9, 4);
  const auto path = temp_file("round_trip.json");
  save_dataset(path, a);
  const GraphBatch b = load_dataset(path);
  EXPECT_EQ(b.task, a.task);
  EXPECT_EQ(b.features, a.features);
  EXPECT_EQ(b.edges, a.edges);
  EXPECT_EQ(b.graph_ids, a.graph_ids);
  EXPECT_EQ(b.labels, a.labels);
  EXPECT_EQ(b.train, a.train);
  EXPECT_EQ(b.val, a.val);
  EXPECT_EQ(b.test, a.test);
  EXPECT_EQ(b.adjacency, a.adjacency);
  EXPECT_EQ(io::to_string(dataset_to_json(b)), io::to_string(dataset_to_json(a)));

  const GraphBatch n = synth_nodes(4, 8, 2);
  save_dataset(path, n);
  const GraphBatch n2 = load_dataset(path);
  EXPECT_EQ(n2.task, Task::node);
  EXPECT_EQ(n2.labels, n.labels);
  EXPECT_EQ(n2.train, n.train);
}

TEST(LoadDataset, RejectsBadRecordsByName) {
  io::Json j = triangle_json();
  j["edges"][1] = io::Json::array({1, 7});
  expect_rejected(j, "edges[1]");

  j = triangle_json();
  j["edges"][2] = io::Json::array({2, 2});
  expect_rejected(j, "self-loop");

  j = triangle_json();
  j["edges"][2] = io::Json::array({1, 0});
  expect_rejected(j, "duplicate");

  j = triangle_json();
  j["features"][1] = io::Json::array({1});
  expect_rejected(j, "features[1]");

  j = triangle_json();
  j.erase("labels");
  expect_rejected(j, "labels");

  j = triangle_json();
  j["num_nodes"] = 4;
  expect_rejected(j, "num_nodes");

  j = node_task_json();
  j["masks"]["test"] = io::Json::array({3, 1});
  expect_rejected(j, "masks.test[1]");

  j = node_task_json();
  j["masks"]["val"] = io::Json::array({9});
  expect_rejected(j, "masks.val[0]");

  j = node_task_json();
  j["masks"]["dev"] = io::Json::array();
  expect_rejected(j, "dev");

  j = node_task_json();
  j["graph_ids"] = io::Json::array({0, 0, 1, 1});
  j["edges"][1] = io::Json::array({1, 2});
  j["task"] = "node";
  expect_rejected(j, "different graphs");
}

TEST(LoadDataset, MissingFileNamesPath) {
  EXPECT_THROW(load_dataset(temp_file("does_not_exist.json")), Error);
}

TEST(SynthTreesVsRandom, TreesAreSpanningAndClassesBalanced) {
  const GraphBatch g = synth_trees_vs_random(200, 16, 0);
  ASSERT_EQ(g.num_graphs(), 200);
  ASSERT_EQ(g.num_nodes(), 200 * 16);
  EXPECT_EQ(g.num_features(), 9);
  std::vector<std::vector<std::pair<int, int>>> per(200);
  for (auto e : g.edges) per[g.graph_ids[e.first]].push_back(e);
  int zeros = 0;
  for (int i = 0; i < 200; ++i) {
    EXPECT_EQ(static_cast<int>(g.graph_nodes[i].size()), 16);
    if (g.labels[i] == 0) {
      ++zeros;
      EXPECT_EQ(static_cast<int>(per[i].size()), 15) << "graph " << i;
      EXPECT_TRUE(connected(16, per[i], i * 16)) << "graph " << i;
    }
  }
  EXPECT_EQ(zeros, 100);
  for (int v = 0; v < g.num_nodes(); ++v) EXPECT_DOUBLE_EQ(g.features.row(v).sum(), 1.0);
}

TEST(SynthTreesVsRandom, GraphLevelSplitSixtyTwentyTwenty) {
  const GraphBatch g = synth_trees_vs_random(200, 16, 0);
  EXPECT_EQ(g.train.size(), 120u);
  EXPECT_EQ(g.val.size(), 40u);
  EXPECT_EQ(g.test.size(), 40u);
  std::vector<int> all = g.train;
  all.insert(all.end(), g.val.begin(), g.val.end());
  all.insert(all.end(), g.test.begin(), g.test.end());
  std::sort(all.begin(), all.end());
  std::vector<int> expect(200);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);
  for (const auto* s : {&g.train, &g.val, &g.test}) {
    int ones = 0;
    for (int i : *s) ones += g.labels[i];
    EXPECT_EQ(2 * ones, static_cast<int>(s->size()));
  }
}

TEST(SynthTreesVsRandom, HistogramOracleNonDegenerate) {
  for (std::uint64_t seed : {0, 1, 2}) {
    const double acc = degree_histogram_oracle(synth_trees_vs_random(200, 16, seed));
    EXPECT_GE(acc, 0.6) << "seed " << seed;
    EXPECT_LE(acc, 0.99) << "seed " << seed;
  }
}

TEST(SynthTreesVsRandom, DeterministicGivenSeed) {
  EXPECT_EQ(io::to_string(dataset_to_json(synth_trees_vs_random(20, 10, 5))),
            io::to_string(dataset_to_json(synth_trees_vs_random(20, 10, 5))));
  EXPECT_NE(io::to_string(dataset_to_json(synth_trees_vs_random(20, 10, 5))),
            io::to_string(dataset_to_json(synth_trees_vs_random(20, 10, 6))));
}

TEST(SynthTreesVsRandom, RejectsBadArguments) {
  EXPECT_THROW(synth_trees_vs_random(7, 16, 0), ParameterError);
  EXPECT_THROW(synth_trees_vs_random(0, 16, 0), ParameterError);
  EXPECT_THROW(synth_trees_vs_random(10, 7, 0), ParameterError);
}

TEST(SynthNodes, NodeLabelsFollowComponents) {
  const GraphBatch g = synth_nodes(10, 8, 1);
  EXPECT_EQ(g.task, Task::node);
  ASSERT_EQ(static_cast<int>(g.labels.size()), g.num_nodes());
  for (int v = 0; v < g.num_nodes(); ++v) EXPECT_EQ(g.labels[v], g.graph_ids[v] % 2);
  EXPECT_EQ(g.train.size() + g.val.size() + g.test.size(), 80u);
}

TEST(Metrics, HandEnumeratedConfusionFixture) {
  // truth\pred   0  1  2
  //     0        2  1  1
  //     1        1  2  0
  //     2        0  1  2
  const std::vector<int> truth = {0, 0, 0, 0, 1, 1, 1, 2, 2, 2};
  const std::vector<int> pred = {0, 0, 1, 2, 1, 1, 0, 2, 2, 1};
  const Metrics m = classification_metrics(truth, pred);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.6);
  // per-class F1: 4/7, 4/7, 2/3
  EXPECT_NEAR(m.macro_f1, 38.0 / 63.0, 1e-15);
}

TEST(Metrics, PerfectAndConstantPredictors) {
  const std::vector<int> truth = {0, 1, 1, 0, 1, 0};
  const Metrics p = classification_metrics(truth, truth);
  EXPECT_EQ(p.accuracy, 1.0);
  EXPECT_EQ(p.macro_f1, 1.0);
  const Metrics c = classification_metrics(truth, std::vector<int>(6, 1));
  EXPECT_EQ(c.accuracy, 0.5);
  EXPECT_NEAR(c.macro_f1, (0.0 + 2.0 / 3.0) / 2.0, 1e-15);
}

TEST(Metrics, EmptyOrMismatchedRejected) {
  EXPECT_THROW(classification_metrics({}, {}), ParameterError);
  EXPECT_THROW(classification_metrics({0, 1}, {0}), DimensionError);
}

TEST(BuildHkn, ConfigRangesEnforced) {
  HKNConfig cfg;
  cfg.layers = 1;
  EXPECT_THROW(build_hkn(cfg, 3, 2), ValidationError);
  cfg.layers = 8;
  EXPECT_THROW(build_hkn(cfg, 3, 2), ValidationError);
  cfg = HKNConfig{};
  cfg.K = 10;
  EXPECT_THROW(build_hkn(cfg, 3, 2), ValidationError);
  cfg = HKNConfig{};
  cfg.dropout = 1.0;
  EXPECT_THROW(build_hkn(cfg, 3, 2), ValidationError);
  cfg = HKNConfig{};
  cfg.curvature = 0.0;
  EXPECT_THROW(build_hkn(cfg, 3, 2), ValidationError);
}

TEST(BuildHkn, KernelFileMustMatchConfig) {
  HKNConfig cfg = small_config(Task::graph);
  const KernelSet ks = random_kernels(4, 4, 0, ManifoldConfig{-1.0, 4});
  EXPECT_THROW(build_hkn(cfg, 9, 2, &ks), ParameterError);
  cfg.K = 4;
  const HKNModel m = build_hkn(cfg, 9, 2, &ks);
  EXPECT_EQ(m.kernels[1].points.front().coords(), ks.points.front().coords());
  const KernelSet odd = random_kernels(4, 5, 0, ManifoldConfig{-1.0, 5});
  EXPECT_THROW(build_hkn(cfg, 9, 2, &odd), ParameterError);
}

TEST(BuildHkn, LayerWidthsAndParameterShapes) {
  const HKNModel m = build_hkn(small_config(Task::graph), 9, 3);
  ASSERT_EQ(m.kernels.size(), 2u);
  EXPECT_EQ(m.kernels[0].cfg.dim, 9);
  EXPECT_EQ(m.kernels[1].cfg.dim, 4);
  EXPECT_EQ(m.params.at("layer0/k0/W").shape, (std::vector<int>{4, 10}));
  EXPECT_EQ(m.params.at("layer1/k2/W").shape, (std::vector<int>{4, 5}));
  EXPECT_EQ(m.params.at("head/centroids").shape, (std::vector<int>{3, 4}));
}

TEST(HknForward, TriangleGivesOneLogitRowPerGraph) {
  const GraphBatch g = dataset_from_json(triangle_json());
  const HKNModel m = build_hkn(small_config(Task::graph), 2, 2);
  ad::Tape t;
  const auto logits = hkn_logits(t, ad::bind(t, m.params, false), m, g, {0});
  ASSERT_EQ(logits.size(), 1u);
  EXPECT_EQ(logits[0].size(), 2);
  EXPECT_TRUE(logits[0].value().allFinite());
  EXPECT_TRUE((logits[0].value().array() <= 0.0).all());
}

TEST(HknForward, IntermediateRepresentationsOnManifold) {
  const GraphBatch g = synth_trees_vs_random(6, 12, 2);
  const HKNModel m = build_hkn(small_config(Task::graph), g.num_features(), 2);
  for (const auto& layer : node_representations(m, g))
    for (const auto& p : layer) EXPECT_LE(p.constraint_error(), 1e-9 * std::max(1.0, p.time() * p.time()));
}

TEST(HknForward, RecordedAndValueLevelPassesAgree) {
  const GraphBatch g = synth_nodes(2, 10, 4);
  const HKNModel m = build_hkn(small_config(Task::node), g.num_features(), 2);
  const auto reps = node_representations(m, g).back();
  ad::Tape t;
  const auto leaves = ad::bind(t, m.params, false);
  std::vector<int> all(g.num_nodes());
  std::iota(all.begin(), all.end(), 0);
  const auto logits = hkn_logits(t, leaves, m, g, all);
  const Mat z = m.params.at("head/centroids").as_matrix();
  CentroidBank bank;
  for (int c = 0; c < 2; ++c)
    bank.centroids.push_back(embed_euclidean(z.row(c).transpose(), ManifoldConfig{-1.0, 4}));
  for (int v = 0; v < g.num_nodes(); ++v) EXPECT_EQ(logits[v].value(), (-hcdist(reps[v], bank)).eval()) << v;
}

TEST(HknForward, GraphLogitsInvariantToNodeOrderWithinGraphs) {
  const GraphBatch g = synth_trees_vs_random(4, 10, 7);
  const HKNModel m = build_hkn(small_config(Task::graph), g.num_features(), 2);
  // Reverse node numbering inside each graph.
  std::vector<int> perm(g.num_nodes());
  for (int gi = 0; gi < g.num_graphs(); ++gi) {
    const auto& nodes = g.graph_nodes[gi];
    for (std::size_t i = 0; i < nodes.size(); ++i) perm[nodes[i]] = nodes[nodes.size() - 1 - i];
  }
  GraphBatch h = g;
  for (int v = 0; v < g.num_nodes(); ++v) h.features.row(perm[v]) = g.features.row(v);
  for (auto& [a, b] : h.edges) {
    a = perm[a];
    b = perm[b];
  }
  h.finalize();
  std::vector<int> items = {0, 1, 2, 3};
  ad::Tape t1, t2;
  const auto la = hkn_logits(t1, ad::bind(t1, m.params, false), m, g, items);
  const auto lb = hkn_logits(t2, ad::bind(t2, m.params, false), m, h, items);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(la[i].value(), lb[i].value()) << "graph " << i;
}

TEST(HknForward, FeatureCountMismatchRejected) {
  const GraphBatch g = dataset_from_json(triangle_json());
  const HKNModel m = build_hkn(small_config(Task::graph), 5, 2);
  ad::Tape t;
  EXPECT_THROW(hkn_logits(t, ad::bind(t, m.params, false), m, g, {0}), DimensionError);
}
