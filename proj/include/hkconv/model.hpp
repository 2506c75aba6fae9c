#pragma once

#include "hkconv/autograd.hpp"
#include "hkconv/graph.hpp"
#include "hkconv/io.hpp"
#include "hkconv/kernelgen.hpp"
#include "hkconv/layers.hpp"

#include <map>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

namespace hkconv {

enum class KernelSource { optimized, random };

inline std::string_view to_string(KernelSource k) { return k == KernelSource::optimized ? "optimized" : "random"; }
inline KernelSource kernel_source_from_string(std::string_view s) {
  if (s == "optimized") return KernelSource::optimized;
  if (s == "random") return KernelSource::random;
  throw ValidationError("unknown kernel source '" + std::string(s) + "'");
}

struct HKNConfig {
  int layers = 2;
  int K = 4;
  int hidden_dim = 16;
  double curvature = -1.0;
  double dropout = 0.0;
  double lr = 0.02;
  double weight_decay = 0.0;
  Pooling pooling = Pooling::uniform;
  KernelSource kernel_source = KernelSource::optimized;
  ConvMode mode = ConvMode::relative;
  Activation activation = Activation::relu;
  Task task = Task::graph;
  std::uint64_t seed = 0;
  int max_epochs = 500;
  int patience = 50;
  int batch_size = 16;

  void validate() const {
    if (layers < 2 || layers > 7) throw ValidationError("HKNConfig: layers must be in [2, 7]");
    if (K < 2 || K > 9) throw ValidationError("HKNConfig: K must be in [2, 9]");
    if (hidden_dim < 1) throw ValidationError("HKNConfig: hidden_dim must be positive");
    if (!(curvature < 0.0)) throw ValidationError("HKNConfig: curvature must be negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("HKNConfig: dropout must be in [0, 1)");
    if (!(lr > 0.0)) throw ValidationError("HKNConfig: lr must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("HKNConfig: weight_decay must be nonnegative");
    if (max_epochs < 0) throw ValidationError("HKNConfig: max_epochs must be nonnegative");
    if (patience < 1) throw ValidationError("HKNConfig: patience must be positive");
    if (batch_size < 1) throw ValidationError("HKNConfig: batch_size must be positive");
  }
};

inline io::Json config_to_json(const HKNConfig& c) {
  io::Json j;
  j["layers"] = c.layers;
  j["K"] = c.K;
  j["hidden_dim"] = c.hidden_dim;
  j["curvature"] = c.curvature;
  j["dropout"] = c.dropout;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["pooling"] = std::string(to_string(c.pooling));
  j["kernel_source"] = std::string(to_string(c.kernel_source));
  j["mode"] = std::string(to_string(c.mode));
  j["activation"] = std::string(to_string(c.activation));
  j["task"] = std::string(to_string(c.task));
  j["seed"] = c.seed;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["batch_size"] = c.batch_size;
  return j;
}

inline HKNConfig config_from_json(const io::Json& j) {
  const std::string w = "config";
  HKNConfig c;
  c.layers = io::field<int>(j, "layers", w);
  c.K = io::field<int>(j, "K", w);
  c.hidden_dim = io::field<int>(j, "hidden_dim", w);
  c.curvature = io::field<double>(j, "curvature", w);
  c.dropout = io::field<double>(j, "dropout", w);
  c.lr = io::field<double>(j, "lr", w);
  c.weight_decay = io::field<double>(j, "weight_decay", w);
  c.pooling = pooling_from_string(io::field<std::string>(j, "pooling", w));
  c.kernel_source = kernel_source_from_string(io::field<std::string>(j, "kernel_source", w));
  c.mode = conv_mode_from_string(io::field<std::string>(j, "mode", w));
  c.activation = activation_from_string(io::field<std::string>(j, "activation", w));
  c.task = task_from_string(io::field<std::string>(j, "task", w));
  c.seed = io::field<std::uint64_t>(j, "seed", w);
  c.max_epochs = io::field<int>(j, "max_epochs", w);
  c.patience = io::field<int>(j, "patience", w);
  c.batch_size = io::field<int>(j, "batch_size", w);
  c.validate();
  return c;
}

/// Embedding, a stack of HKConv layers (F -> n, then n -> n) and an HCDist
/// head whose centroids are stored as Euclidean vectors z_c and realized as
/// exp_o((0, z_c)).
struct HKNModel {
  HKNConfig cfg;
  int in_features = 0;
  int num_classes = 0;
  std::vector<KernelSet> kernels;  // one per layer
  ParamStore params;

  [[nodiscard]] int layer_in_dim(int l) const { return l == 0 ? in_features : cfg.hidden_dim; }
};

namespace detail {

inline std::string sub_prefix(int l, int k) { return "layer" + std::to_string(l) + "/k" + std::to_string(k) + "/"; }

inline std::mutex& kernel_cache_mutex() {
  static std::mutex m;
  return m;
}
inline std::map<std::tuple<int, int, std::uint64_t, double>, KernelSet>& kernel_cache() {
  static std::map<std::tuple<int, int, std::uint64_t, double>, KernelSet> cache;
  return cache;
}

}  // namespace detail

/// Optimized kernel set for (K, dim, seed), solved once per process.
inline KernelSet optimized_kernels(int K, int dim, std::uint64_t seed, double curvature) {
  const auto key = std::make_tuple(K, dim, seed, curvature);
  {
    std::lock_guard<std::mutex> lock(detail::kernel_cache_mutex());
    auto it = detail::kernel_cache().find(key);
    if (it != detail::kernel_cache().end()) return it->second;
  }
  ManifoldConfig mc;
  mc.curvature = curvature;
  mc.dim = dim;
  SolverConfig sc;
  sc.seed = seed;
  KernelSet ks = solve_kernels(K, dim, sc, mc).kernels;
  std::lock_guard<std::mutex> lock(detail::kernel_cache_mutex());
  detail::kernel_cache().emplace(key, ks);
  return ks;
}

/// `file_kernels`, when given, is used for every layer whose input dimension
/// equals its dimension; other layers follow cfg.kernel_source.
inline HKNModel build_hkn(const HKNConfig& cfg, int in_features, int num_classes,
                          const KernelSet* file_kernels = nullptr) {
  cfg.validate();
  if (in_features < 1) throw ParameterError("build_hkn: need at least one input feature");
  if (num_classes < 2) throw ParameterError("build_hkn: need at least two classes");
  if (file_kernels) {
    file_kernels->validate();
    if (file_kernels->K() != cfg.K) throw ParameterError("build_hkn: kernel file K differs from the configured K");
    if (file_kernels->cfg.curvature != cfg.curvature)
      throw ParameterError("build_hkn: kernel file curvature differs from the configured curvature");
    if (file_kernels->cfg.dim != in_features && file_kernels->cfg.dim != cfg.hidden_dim)
      throw ParameterError("build_hkn: kernel file dimension matches no layer");
  }
  HKNModel m;
  m.cfg = cfg;
  m.in_features = in_features;
  m.num_classes = num_classes;
  const CounterRng root(cfg.seed);
  for (int l = 0; l < cfg.layers; ++l) {
    const int dim = m.layer_in_dim(l);
    if (file_kernels && file_kernels->cfg.dim == dim) {
      m.kernels.push_back(*file_kernels);
    } else if (cfg.kernel_source == KernelSource::optimized) {
      m.kernels.push_back(optimized_kernels(cfg.K, dim, cfg.seed, cfg.curvature));
    } else {
      ManifoldConfig mc;
      mc.curvature = cfg.curvature;
      mc.dim = dim;
      m.kernels.push_back(random_kernels(cfg.K, dim, root.split("kernels").split(static_cast<std::uint64_t>(l))(), mc));
    }
  }
  CounterRng init = root.split("init");
  for (int l = 0; l < cfg.layers; ++l)
    for (int k = 0; k < cfg.K; ++k) {
      const HLinearParams p = HLinearParams::init(m.layer_in_dim(l), cfg.hidden_dim, init, cfg.activation);
      const std::string pre = detail::sub_prefix(l, k);
      m.params.add(pre + "W", Tensor::matrix(p.W));
      m.params.add(pre + "v", Tensor::vector(p.v));
      m.params.add(pre + "b", Tensor::vector(p.b));
      m.params.add(pre + "b_prime", Tensor::scalar(p.b_prime));
      m.params.add(pre + "log_lambda", Tensor::scalar(p.log_lambda));
    }
  Mat z(num_classes, cfg.hidden_dim);
  for (int c = 0; c < num_classes; ++c)
    for (int i = 0; i < cfg.hidden_dim; ++i) z(c, i) = 0.1 * init.normal();
  m.params.add("head/centroids", Tensor::matrix(z));
  return m;
}

/// Value-level HKConv parameters of layer l (used by the invariant suites).
inline HKConvParams layer_params(const HKNModel& m, int l) {
  HKConvParams p;
  p.kernels = m.kernels[l];
  p.mode = m.cfg.mode;
  p.pooling = m.cfg.pooling;
  for (int k = 0; k < m.cfg.K; ++k) {
    const std::string pre = detail::sub_prefix(l, k);
    HLinearParams h;
    h.W = m.params.at(pre + "W").as_matrix();
    h.v = m.params.at(pre + "v").data;
    h.b = m.params.at(pre + "b").data;
    h.b_prime = m.params.at(pre + "b_prime").data[0];
    h.log_lambda = m.params.at(pre + "log_lambda").data[0];
    h.activation = m.cfg.activation;
    p.sublayers.push_back(std::move(h));
  }
  return p;
}

/// Dropout randomness for one optimization step; absent at evaluation.
struct DropoutStream {
  CounterRng rng;
  double p = 0.0;

  /// A draw that drops every unit is redrawn, since an all-zero mask leaves
  /// HLinear without a direction.
  [[nodiscard]] Vec mask(std::uint64_t a, std::uint64_t b, std::uint64_t c, Eigen::Index n) const {
    CounterRng r = rng.split(a).split(b).split(c);
    Vec m(n);
    do {
      for (Eigen::Index i = 0; i < n; ++i) m[i] = r.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
    } while (n > 0 && m.isZero());
    return m;
  }
};

/// Logits (negated distances to the class centroids) for the requested items:
/// graph ids for graph tasks, node ids for node tasks.
inline std::vector<ad::Var> hkn_logits(ad::Tape& t, const ad::Leaves& leaves, const HKNModel& m, const GraphBatch& data,
                                       const std::vector<int>& items, const DropoutStream* dropout = nullptr) {
  const double kappa = m.cfg.curvature;
  const int L = m.cfg.layers;
  const int n = m.cfg.hidden_dim;
  if (data.num_features() != m.in_features) throw DimensionError("hkn: dataset feature count differs from the model");

  std::vector<ad::HKConvVars> conv(L);
  for (int l = 0; l < L; ++l) {
    conv[l].kernels = &m.kernels[l];
    conv[l].mode = m.cfg.mode;
    conv[l].pooling = m.cfg.pooling;
    for (int k = 0; k < m.cfg.K; ++k) {
      const std::string pre = detail::sub_prefix(l, k);
      conv[l].sublayers.push_back({ad::leaf(leaves, pre + "W"), ad::leaf(leaves, pre + "v"), ad::leaf(leaves, pre + "b"),
                                   ad::leaf(leaves, pre + "b_prime"), ad::leaf(leaves, pre + "log_lambda"),
                                   m.cfg.activation, m.layer_in_dim(l), n});
    }
  }
  std::vector<ad::Var> centroids;
  {
    ad::Tape::Scope s(t, "head");
    const ad::Var& z = ad::leaf(leaves, "head/centroids");
    for (int c = 0; c < m.num_classes; ++c) centroids.push_back(ad::embed_euclidean(ad::slice(z, c * n, n), kappa));
  }

  // Graphs whose nodes must be computed.
  std::vector<int> graphs;
  if (data.task == Task::graph) {
    graphs = items;
  } else {
    std::vector<bool> need(data.num_graphs(), false);
    for (int v : items) need[data.graph_ids[v]] = true;
    for (int g = 0; g < data.num_graphs(); ++g)
      if (need[g]) graphs.push_back(g);
  }

  std::map<int, ad::Var> h;  // node -> representation
  std::map<int, ad::Var> logits_of;
  for (int g : graphs) {
    const auto& nodes = data.graph_nodes[g];
    std::map<int, ad::Var> cur;
    for (int v : nodes) {
      Vec f = data.features.row(v).transpose();
      if (dropout && dropout->p > 0.0) f = f.cwiseProduct(dropout->mask(0, static_cast<std::uint64_t>(v), 0, f.size()));
      const Vec x0 = embed_euclidean(f, ManifoldConfig{kappa, static_cast<int>(f.size())}).coords();
      cur.emplace(v, t.constant(x0));
    }
    for (int l = 0; l < L; ++l) {
      ad::Tape::Scope s(t, "layer" + std::to_string(l));
      std::map<int, ad::Var> next;
      for (int v : nodes) {
        std::vector<ad::Var> nb;
        for (int u : data.neighborhood(v)) nb.push_back(cur.at(u));
        Vec mask;
        if (dropout && dropout->p > 0.0) mask = dropout->mask(1, static_cast<std::uint64_t>(v), l + 1, n);
        next.emplace(v, ad::hkconv(cur.at(v), nb, conv[l], kappa, mask.size() ? &mask : nullptr));
      }
      cur = std::move(next);
    }
    if (data.task == Task::graph) {
      ad::Tape::Scope s(t, "pool");
      std::vector<const Vec*> vals;
      std::vector<ad::Var> reps;
      for (int v : nodes) reps.push_back(cur.at(v));
      for (const auto& r : reps) vals.push_back(&r.value());
      std::vector<ad::Var> ordered;
      for (int i : detail::canonical_order(vals)) ordered.push_back(reps[i]);
      const ad::Var pooled = ad::hcent(ordered, Vec::Ones(static_cast<Eigen::Index>(ordered.size())), kappa);
      logits_of.emplace(g, ad::scale(ad::hcdist(pooled, centroids, kappa), -1.0));
    } else {
      for (auto& [v, r] : cur) h.emplace(v, r);
    }
  }

  std::vector<ad::Var> out;
  ad::Tape::Scope s(t, "head");
  for (int i : items) {
    if (data.task == Task::graph)
      out.push_back(logits_of.at(i));
    else
      out.push_back(ad::scale(ad::hcdist(h.at(i), centroids, kappa), -1.0));
  }
  return out;
}

/// Mean cross-entropy over `items`.
inline ad::Var hkn_loss(ad::Tape& t, const ad::Leaves& leaves, const HKNModel& m, const GraphBatch& data,
                        const std::vector<int>& items, const DropoutStream* dropout = nullptr) {
  const auto logits = hkn_logits(t, leaves, m, data, items, dropout);
  std::vector<ad::Var> losses;
  for (std::size_t i = 0; i < items.size(); ++i)
    losses.push_back(ad::softmax_cross_entropy(logits[i], data.labels[items[i]]));
  return ad::mean(ad::concat(losses));
}

// --------------------------------------------------------------- checkpoints

inline io::Json params_to_json(const ParamStore& store) {
  io::Json j = io::Json::object();
  for (const auto& [path, t] : store.leaves()) {
    io::Json leaf;
    leaf["shape"] = t.shape;
    leaf["data"] = io::vec_to_json(t.data);
    j[path] = std::move(leaf);
  }
  return j;
}

inline ParamStore params_from_json(const io::Json& j) {
  if (!j.is_object()) throw ValidationError("checkpoint.params: expected an object");
  ParamStore store;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string w = "checkpoint.params." + it.key();
    Tensor t;
    t.shape = io::field<std::vector<int>>(it.value(), "shape", w);
    if (!it.value().contains("data")) throw ValidationError(w + ": missing field 'data'");
    t.data = io::vec_from_json(it.value()["data"], w + ".data");
    if (t.data.size() != t.numel()) throw ValidationError(w + ": data size does not match shape");
    store.add(it.key(), std::move(t));
  }
  return store;
}

struct Checkpoint {
  HKNModel model;
  int epoch = 0;
  Metrics val;
  Metrics test;
};

inline io::Json metrics_to_json(const Metrics& m) {
  return io::Json{{"loss", m.loss}, {"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}};
}
inline Metrics metrics_from_json(const io::Json& j, const std::string& w) {
  return {io::field<double>(j, "loss", w), io::field<double>(j, "accuracy", w), io::field<double>(j, "macro_f1", w)};
}

inline io::Json checkpoint_to_json(const Checkpoint& c) {
  io::Json j;
  j["format"] = "hkconv-checkpoint";
  j["version"] = std::string(kVersion);
  j["config"] = config_to_json(c.model.cfg);
  j["in_features"] = c.model.in_features;
  j["num_classes"] = c.model.num_classes;
  io::Json ks = io::Json::array();
  for (const auto& k : c.model.kernels) ks.push_back(io::kernels_to_json(k));
  j["kernels"] = std::move(ks);
  j["params"] = params_to_json(c.model.params);
  j["epoch"] = c.epoch;
  j["metrics"] = {{"val", metrics_to_json(c.val)}, {"test", metrics_to_json(c.test)}};
  return j;
}

inline Checkpoint checkpoint_from_json(const io::Json& j) {
  const std::string w = "checkpoint";
  if (io::field<std::string>(j, "format", w) != "hkconv-checkpoint") throw ValidationError(w + ": not a checkpoint");
  Checkpoint c;
  c.model.cfg = config_from_json(j.at("config"));
  c.model.in_features = io::field<int>(j, "in_features", w);
  c.model.num_classes = io::field<int>(j, "num_classes", w);
  if (!j.contains("kernels") || !j["kernels"].is_array()) throw ValidationError(w + ": missing array 'kernels'");
  for (std::size_t l = 0; l < j["kernels"].size(); ++l)
    c.model.kernels.push_back(io::kernels_from_json(j["kernels"][l], false, w + ".kernels[" + std::to_string(l) + "]"));
  if (static_cast<int>(c.model.kernels.size()) != c.model.cfg.layers)
    throw ValidationError(w + ": one kernel set per layer required");
  c.model.params = params_from_json(j.at("params"));
  const HKNModel ref = [&] {
    HKNConfig cfg = c.model.cfg;
    cfg.kernel_source = KernelSource::random;  // shapes only; skips the solver
    return build_hkn(cfg, c.model.in_features, c.model.num_classes);
  }();
  for (const auto& [path, t] : ref.params.leaves()) {
    if (!c.model.params.contains(path)) throw ValidationError(w + ": missing parameter '" + path + "'");
    if (c.model.params.at(path).shape != t.shape) throw ValidationError(w + ": parameter '" + path + "' has the wrong shape");
  }
  if (c.model.params.leaves().size() != ref.params.leaves().size()) throw ValidationError(w + ": unexpected parameters");
  c.epoch = io::field<int>(j, "epoch", w);
  c.val = metrics_from_json(j.at("metrics").at("val"), w + ".metrics.val");
  c.test = metrics_from_json(j.at("metrics").at("test"), w + ".metrics.test");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  io::write_file(path, io::to_string(checkpoint_to_json(c)));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(io::parse(io::read_file(path), path.string()));
}

}  // namespace hkconv
