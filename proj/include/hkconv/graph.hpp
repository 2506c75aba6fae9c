#pragma once

#include "hkconv/core.hpp"
#include "hkconv/io.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace hkconv {

enum class Task { graph, node };
enum class Split { train, val, test };

inline std::string_view to_string(Task t) { return t == Task::graph ? "graph" : "node"; }
inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}
inline Task task_from_string(std::string_view s) {
  if (s == "graph") return Task::graph;
  if (s == "node") return Task::node;
  throw ValidationError("unknown task '" + std::string(s) + "'");
}
inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

/// Nodes, undirected edges (each stored once), per-node graph ids and labels.
/// Labels and split masks index graphs for graph tasks and nodes for node
/// tasks. Call finalize() after editing; it validates and builds adjacency.
struct GraphBatch {
  Task task = Task::graph;
  Mat features;  // N x F
  std::vector<std::pair<int, int>> edges;
  std::vector<int> graph_ids;
  std::vector<int> labels;
  std::vector<int> train, val, test;

  // Derived by finalize().
  std::vector<std::vector<int>> adjacency;  // sorted, excludes the node itself
  std::vector<bool> isolated;
  std::vector<std::vector<int>> graph_nodes;

  [[nodiscard]] int num_nodes() const { return static_cast<int>(features.rows()); }
  [[nodiscard]] int num_features() const { return static_cast<int>(features.cols()); }
  [[nodiscard]] int num_graphs() const { return static_cast<int>(graph_nodes.size()); }
  [[nodiscard]] int num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }
  [[nodiscard]] const std::vector<int>& split(Split s) const {
    return s == Split::train ? train : (s == Split::val ? val : test);
  }

  /// Neighborhood used by convolution: the adjacency list, or {v} for an
  /// isolated node.
  [[nodiscard]] std::vector<int> neighborhood(int v) const {
    return isolated[v] ? std::vector<int>{v} : adjacency[v];
  }

  void finalize() {
    const int N = num_nodes();
    if (N == 0) throw ValidationError("dataset: no nodes");
    if (!features.allFinite()) throw ValidationError("dataset: non-finite feature value");
    if (graph_ids.empty()) graph_ids.assign(N, 0);
    if (static_cast<int>(graph_ids.size()) != N) throw ValidationError("dataset: graph_ids must have one entry per node");
    int G = 0;
    for (int v = 0; v < N; ++v) {
      if (graph_ids[v] < 0) throw ValidationError("dataset: graph_ids[" + std::to_string(v) + "] is negative");
      G = std::max(G, graph_ids[v] + 1);
    }
    graph_nodes.assign(G, {});
    for (int v = 0; v < N; ++v) graph_nodes[graph_ids[v]].push_back(v);
    for (int g = 0; g < G; ++g)
      if (graph_nodes[g].empty()) throw ValidationError("dataset: graph " + std::to_string(g) + " has no nodes");

    adjacency.assign(N, {});
    std::set<std::pair<int, int>> seen;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [a, b] = edges[e];
      const std::string where = "edges[" + std::to_string(e) + "]";
      if (a < 0 || a >= N || b < 0 || b >= N)
        throw ValidationError(where + ": node index out of range [0, " + std::to_string(N) + ")");
      if (a == b) throw ValidationError(where + ": self-loop on node " + std::to_string(a));
      if (graph_ids[a] != graph_ids[b]) throw ValidationError(where + ": edge joins two different graphs");
      if (!seen.insert({std::min(a, b), std::max(a, b)}).second)
        throw ValidationError(where + ": duplicate undirected edge");
      adjacency[a].push_back(b);
      adjacency[b].push_back(a);
    }
    isolated.assign(N, false);
    for (int v = 0; v < N; ++v) {
      std::sort(adjacency[v].begin(), adjacency[v].end());
      isolated[v] = adjacency[v].empty();
    }

    const int L = task == Task::graph ? G : N;
    if (static_cast<int>(labels.size()) != L)
      throw ValidationError(std::string("dataset: expected one label per ") + (task == Task::graph ? "graph" : "node"));
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0) throw ValidationError("dataset: labels[" + std::to_string(i) + "] is negative");
    std::vector<int> owner(L, -1);
    const std::vector<int>* masks[3] = {&train, &val, &test};
    const char* names[3] = {"train", "val", "test"};
    for (int s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < masks[s]->size(); ++i) {
        const int idx = (*masks[s])[i];
        const std::string where = std::string("masks.") + names[s] + "[" + std::to_string(i) + "]";
        if (idx < 0 || idx >= L) throw ValidationError(where + ": index out of range");
        if (owner[idx] == s) throw ValidationError(where + ": index listed twice");
        if (owner[idx] >= 0)
          throw ValidationError(where + ": index " + std::to_string(idx) + " also appears in masks." + names[owner[idx]]);
        owner[idx] = s;
      }
  }

  [[nodiscard]] int num_directed_adjacency() const {
    int n = 0;
    for (const auto& a : adjacency) n += static_cast<int>(a.size());
    return n;
  }
};

// ------------------------------------------------------------------ dataset io

inline io::Json dataset_to_json(const GraphBatch& g) {
  io::Json j;
  j["task"] = std::string(to_string(g.task));
  j["num_nodes"] = g.num_nodes();
  io::Json feats = io::Json::array();
  for (int v = 0; v < g.num_nodes(); ++v) feats.push_back(io::vec_to_json(g.features.row(v).transpose()));
  j["features"] = std::move(feats);
  io::Json edges = io::Json::array();
  for (const auto& [a, b] : g.edges) edges.push_back(io::Json::array({a, b}));
  j["edges"] = std::move(edges);
  j["graph_ids"] = g.graph_ids;
  j["labels"] = g.labels;
  j["masks"] = {{"train", g.train}, {"val", g.val}, {"test", g.test}};
  return j;
}

namespace detail {

/// Accepts an index list or a boolean vector of length `len`.
inline std::vector<int> mask_from_json(const io::Json& j, int len, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected an array");
  std::vector<int> out;
  const bool boolean = !j.empty() && j[0].is_boolean();
  if (boolean) {
    if (static_cast<int>(j.size()) != len) throw ValidationError(where + ": boolean mask has the wrong length");
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_boolean()) throw ValidationError(where + "[" + std::to_string(i) + "]: expected a boolean");
      if (j[i].get<bool>()) out.push_back(static_cast<int>(i));
    }
    return out;
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_integer()) throw ValidationError(where + "[" + std::to_string(i) + "]: expected an integer");
    out.push_back(j[i].get<int>());
  }
  return out;
}

inline std::vector<int> int_list(const io::Json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + ": expected an array");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_integer()) throw ValidationError(where + "[" + std::to_string(i) + "]: expected an integer");
    out.push_back(j[i].get<int>());
  }
  return out;
}

}  // namespace detail

/// Task comes from the optional "task" field; otherwise it is a graph task
/// when graph_ids are present and there is one label per graph.
inline GraphBatch dataset_from_json(const io::Json& j) {
  if (!j.is_object()) throw ValidationError("dataset: top level must be an object");
  GraphBatch g;
  const int N = io::field<int>(j, "num_nodes", "dataset");
  if (N <= 0) throw ValidationError("dataset: num_nodes must be positive");
  if (!j.contains("features") || !j["features"].is_array()) throw ValidationError("dataset: missing array 'features'");
  const auto& feats = j["features"];
  if (static_cast<int>(feats.size()) != N) throw ValidationError("dataset: features must have num_nodes rows");
  int F = -1;
  for (int v = 0; v < N; ++v) {
    const Vec row = io::vec_from_json(feats[v], "features[" + std::to_string(v) + "]");
    if (F < 0) {
      F = static_cast<int>(row.size());
      if (F == 0) throw ValidationError("dataset: features must have at least one column");
      g.features.resize(N, F);
    }
    if (row.size() != F) throw ValidationError("features[" + std::to_string(v) + "]: wrong number of columns");
    g.features.row(v) = row.transpose();
  }
  if (!j.contains("edges") || !j["edges"].is_array()) throw ValidationError("dataset: missing array 'edges'");
  for (std::size_t e = 0; e < j["edges"].size(); ++e) {
    const auto& pr = j["edges"][e];
    if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number_integer() || !pr[1].is_number_integer())
      throw ValidationError("edges[" + std::to_string(e) + "]: expected [src, dst]");
    g.edges.emplace_back(pr[0].get<int>(), pr[1].get<int>());
  }
  const bool has_gids = j.contains("graph_ids");
  if (has_gids) g.graph_ids = detail::int_list(j["graph_ids"], "graph_ids");
  if (!j.contains("labels")) throw ValidationError("dataset: missing field 'labels'");
  g.labels = detail::int_list(j["labels"], "labels");

  int G = 1;
  if (has_gids && !g.graph_ids.empty()) G = *std::max_element(g.graph_ids.begin(), g.graph_ids.end()) + 1;
  if (j.contains("task"))
    g.task = task_from_string(io::field<std::string>(j, "task", "dataset"));
  else
    g.task = has_gids && static_cast<int>(g.labels.size()) == G && G != N ? Task::graph : Task::node;

  const int L = g.task == Task::graph ? G : N;
  if (j.contains("masks")) {
    const auto& m = j["masks"];
    if (!m.is_object()) throw ValidationError("masks: expected an object");
    for (auto it = m.begin(); it != m.end(); ++it)
      if (it.key() != "train" && it.key() != "val" && it.key() != "test")
        throw ValidationError("masks: unknown split '" + it.key() + "'");
    if (m.contains("train")) g.train = detail::mask_from_json(m["train"], L, "masks.train");
    if (m.contains("val")) g.val = detail::mask_from_json(m["val"], L, "masks.val");
    if (m.contains("test")) g.test = detail::mask_from_json(m["test"], L, "masks.test");
  }
  g.finalize();
  return g;
}

inline void save_dataset(const std::filesystem::path& path, const GraphBatch& g) {
  io::write_file(path, io::to_string(dataset_to_json(g), 1));
}

inline GraphBatch load_dataset(const std::filesystem::path& path) {
  try {
    return dataset_from_json(io::parse(io::read_file(path), path.string()));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------------ synthetic

namespace detail {

/// Uniform random labelled tree on n nodes from a random Prufer sequence.
inline std::vector<std::pair<int, int>> prufer_tree(int n, CounterRng& rng) {
  std::vector<std::pair<int, int>> edges;
  if (n == 2) {
    edges.emplace_back(0, 1);
    return edges;
  }
  std::vector<int> seq(n - 2);
  for (int& s : seq) s = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  std::vector<int> degree(n, 1);
  for (int s : seq) ++degree[s];
  std::set<int> leaves;
  for (int v = 0; v < n; ++v)
    if (degree[v] == 1) leaves.insert(v);
  for (int s : seq) {
    const int leaf = *leaves.begin();
    leaves.erase(leaves.begin());
    edges.emplace_back(std::min(leaf, s), std::max(leaf, s));
    if (--degree[s] == 1) leaves.insert(s);
  }
  const int u = *leaves.begin();
  const int w = *std::next(leaves.begin());
  edges.emplace_back(u, w);
  return edges;
}

/// Erdos-Renyi G(n, p) with p = 3 / (n - 1), i.e. expected degree 3.
inline std::vector<std::pair<int, int>> er_graph(int n, CounterRng& rng) {
  const double p = 3.0 / (n - 1);
  std::vector<std::pair<int, int>> edges;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (rng.uniform() < p) edges.emplace_back(a, b);
  return edges;
}

inline constexpr int kDegreeCap = 8;

/// One-hot degree, degree capped at 8 (F = 9).
inline void degree_features(GraphBatch& g) {
  std::vector<int> deg(g.num_nodes(), 0);
  for (const auto& [a, b] : g.edges) {
    ++deg[a];
    ++deg[b];
  }
  g.features = Mat::Zero(g.num_nodes(), kDegreeCap + 1);
  for (int v = 0; v < g.num_nodes(); ++v) g.features(v, std::min(deg[v], kDegreeCap)) = 1.0;
}

/// Per class: shuffle, then 60/20/20.
inline void stratified_split(const std::vector<int>& labels, CounterRng rng, std::vector<int>& train,
                             std::vector<int>& val, std::vector<int>& test) {
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  train.clear();
  val.clear();
  test.clear();
  for (auto& [c, idx] : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t n_train = idx.size() * 6 / 10;
    const std::size_t n_val = idx.size() * 2 / 10;
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    val.insert(val.end(), idx.begin() + static_cast<long>(n_train), idx.begin() + static_cast<long>(n_train + n_val));
    test.insert(test.end(), idx.begin() + static_cast<long>(n_train + n_val), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  std::sort(test.begin(), test.end());
}

}  // namespace detail

/// Graph classification: random trees (label 0) against Erdos-Renyi graphs of
/// the same size with expected degree 3 (label 1), alternating.
inline GraphBatch synth_trees_vs_random(int n_graphs, int nodes_per_graph, std::uint64_t seed) {
  if (n_graphs <= 0 || n_graphs % 2 != 0) throw ParameterError("synth_trees_vs_random: n_graphs must be even and positive");
  if (nodes_per_graph < 8) throw ParameterError("synth_trees_vs_random: nodes_per_graph must be >= 8");
  const CounterRng root = CounterRng(seed).split("synth_trees_vs_random");
  GraphBatch g;
  g.task = Task::graph;
  const int N = n_graphs * nodes_per_graph;
  g.features.resize(N, detail::kDegreeCap + 1);
  for (int i = 0; i < n_graphs; ++i) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(i));
    const int label = i % 2;
    const auto local = label == 0 ? detail::prufer_tree(nodes_per_graph, rng) : detail::er_graph(nodes_per_graph, rng);
    const int off = i * nodes_per_graph;
    for (const auto& [a, b] : local) g.edges.emplace_back(off + a, off + b);
    for (int v = 0; v < nodes_per_graph; ++v) g.graph_ids.push_back(i);
    g.labels.push_back(label);
  }
  detail::degree_features(g);
  detail::stratified_split(g.labels, root.split("split"), g.train, g.val, g.test);
  g.finalize();
  return g;
}

/// Node classification: the disjoint union of synth_trees_vs_random graphs,
/// each node labelled with the class of its component; node-level split.
inline GraphBatch synth_nodes(int n_graphs, int nodes_per_graph, std::uint64_t seed) {
  GraphBatch g = synth_trees_vs_random(n_graphs, nodes_per_graph, seed);
  std::vector<int> node_labels(g.num_nodes());
  for (int v = 0; v < g.num_nodes(); ++v) node_labels[v] = g.labels[g.graph_ids[v]];
  g.task = Task::node;
  g.labels = std::move(node_labels);
  detail::stratified_split(g.labels, CounterRng(seed).split("synth_nodes").split("split"), g.train, g.val, g.test);
  g.finalize();
  return g;
}

/// Degree-histogram baseline: each graph is its normalized sum of one-hot
/// node features; nearest class mean (fit on train) predicts val and test.
/// Returns accuracy on val and test combined. Graph tasks only.
inline double degree_histogram_oracle(const GraphBatch& g) {
  if (g.task != Task::graph) throw ParameterError("degree_histogram_oracle: graph task required");
  const int C = g.num_classes();
  const int F = g.num_features();
  Mat hist = Mat::Zero(g.num_graphs(), F);
  for (int v = 0; v < g.num_nodes(); ++v) hist.row(g.graph_ids[v]) += g.features.row(v);
  for (int i = 0; i < g.num_graphs(); ++i) hist.row(i) /= static_cast<double>(g.graph_nodes[i].size());
  Mat mean = Mat::Zero(C, F);
  std::vector<int> count(C, 0);
  for (int i : g.train) {
    mean.row(g.labels[i]) += hist.row(i);
    ++count[g.labels[i]];
  }
  for (int c = 0; c < C; ++c)
    if (count[c] > 0) mean.row(c) /= count[c];
  int correct = 0, total = 0;
  for (const auto* split : {&g.val, &g.test})
    for (int i : *split) {
      int best = 0;
      for (int c = 1; c < C; ++c)
        if ((hist.row(i) - mean.row(c)).squaredNorm() < (hist.row(i) - mean.row(best)).squaredNorm()) best = c;
      correct += best == g.labels[i];
      ++total;
    }
  if (total == 0) throw ParameterError("degree_histogram_oracle: empty evaluation split");
  return static_cast<double>(correct) / total;
}

// -------------------------------------------------------------------- metrics

struct Metrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Accuracy and macro-F1; F1 is averaged over the classes that occur among
/// the true or predicted labels, with F1 = 0 for a class never predicted
/// correctly.
inline Metrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.empty()) throw ParameterError("classification_metrics: empty split");
  if (truth.size() != pred.size()) throw DimensionError("classification_metrics: length mismatch");
  std::map<int, std::array<int, 3>> counts;  // tp, fp, fn
  int correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pred[i]) {
      ++correct;
      ++counts[truth[i]][0];
    } else {
      ++counts[pred[i]][1];
      ++counts[truth[i]][2];
    }
  }
  double f1 = 0.0;
  for (const auto& [c, t] : counts) {
    const double denom = 2.0 * t[0] + t[1] + t[2];
    f1 += denom > 0 ? 2.0 * t[0] / denom : 0.0;
  }
  Metrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  m.macro_f1 = f1 / static_cast<double>(counts.size());
  return m;
}

}  // namespace hkconv
