#pragma once

#include "hkconv/model.hpp"
#include "hkconv/optim.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace hkconv {

struct EpochRow {
  int epoch = 0;
  Split split = Split::train;
  Metrics metrics;
};

struct TrainResult {
  std::vector<EpochRow> history;
  Checkpoint best;  // parameters and metrics at the best validation epoch
  int epochs_run = 0;
  double seconds = 0.0;
};

namespace detail {

inline int argmax(const Vec& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

/// Forward-only metrics for every split at once.
inline std::array<Metrics, 3> evaluate_all(const HKNModel& m, const GraphBatch& data) {
  ad::Tape t;
  const ad::Leaves leaves = ad::bind(t, m.params, false);
  std::vector<int> items;
  for (Split s : {Split::train, Split::val, Split::test})
    items.insert(items.end(), data.split(s).begin(), data.split(s).end());
  const auto logits = hkn_logits(t, leaves, m, data, items);
  std::array<Metrics, 3> out;
  std::size_t off = 0;
  for (int s = 0; s < 3; ++s) {
    const auto& idx = data.split(static_cast<Split>(s));
    if (idx.empty()) continue;
    std::vector<int> truth, pred;
    double loss = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Vec& l = logits[off + i].value();
      const int y = data.labels[idx[i]];
      const double mx = l.maxCoeff();
      loss += std::log((l.array() - mx).exp().sum()) + mx - l[y];
      truth.push_back(y);
      pred.push_back(argmax(l));
    }
    out[s] = classification_metrics(truth, pred);
    out[s].loss = loss / static_cast<double>(idx.size());
    off += idx.size();
  }
  return out;
}

}  // namespace detail

/// Metrics on one split; never changes the model.
inline Metrics evaluate(const HKNModel& m, const GraphBatch& data, Split split) {
  if (data.split(split).empty()) throw ParameterError("evaluate: split '" + std::string(to_string(split)) + "' is empty");
  return detail::evaluate_all(m, data)[static_cast<int>(split)];
}

/// Called after every epoch with the row triple just recorded.
using EpochCallback = std::function<void(int epoch, const std::array<Metrics, 3>&)>;

/// Adam on mean cross-entropy. Graph tasks use shuffled minibatches of
/// graphs, node tasks one full-batch step per epoch. Epoch 0 is the
/// evaluation of the initial parameters. Stops after `patience` epochs
/// without a strict improvement of validation accuracy, or at max_epochs.
/// The kept checkpoint has the highest validation accuracy, ties going to
/// the lower validation loss.
inline TrainResult train(HKNModel& model, const GraphBatch& data, const EpochCallback& on_epoch = {}) {
  const HKNConfig& cfg = model.cfg;
  cfg.validate();
  if (data.task != cfg.task) throw ParameterError("train: dataset task differs from the configured task");
  if (data.train.empty() || data.val.empty()) throw ParameterError("train: train and val splits must be nonempty");
  if (data.num_classes() > model.num_classes) throw ParameterError("train: dataset has more classes than the model");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult res;
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  const CounterRng root = CounterRng(cfg.seed).split("train");

  auto record = [&](int epoch) {
    const auto ms = detail::evaluate_all(model, data);
    for (int s = 0; s < 3; ++s)
      if (!data.split(static_cast<Split>(s)).empty()) res.history.push_back({epoch, static_cast<Split>(s), ms[s]});
    if (on_epoch) on_epoch(epoch, ms);
    return ms;
  };

  auto ms = record(0);
  res.best = {model, 0, ms[1], ms[2]};
  int since_best = 0;
  double best_acc = ms[1].accuracy;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    CounterRng erng = root.split(static_cast<std::uint64_t>(epoch));
    std::vector<int> order = data.train;
    std::vector<std::vector<int>> batches;
    if (cfg.task == Task::graph) {
      CounterRng shuffle = erng.split("shuffle");
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
      for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size))
        batches.emplace_back(order.begin() + static_cast<long>(i),
                             order.begin() + static_cast<long>(std::min(order.size(), i + cfg.batch_size)));
    } else {
      batches.push_back(order);
    }
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const DropoutStream drop{erng.split("dropout").split(static_cast<std::uint64_t>(b)), cfg.dropout};
      ad::ValueAndGrad vg;
      try {
        vg = ad::value_and_grad(
            [&](ad::Tape& t, const ad::Leaves& leaves) {
              return hkn_loss(t, leaves, model, data, batches[b], cfg.dropout > 0.0 ? &drop : nullptr);
            },
            model.params);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      } catch (const DegenerateError& e) {
        throw DegenerateError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      if (!std::isfinite(vg.loss))
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": loss is not finite");
      adam_step(model.params, vg.grads, adam);
    }
    ms = record(epoch);
    res.epochs_run = epoch;
    const bool better_acc = ms[1].accuracy > best_acc;
    if (better_acc || (ms[1].accuracy == res.best.val.accuracy && ms[1].loss < res.best.val.loss))
      res.best = {model, epoch, ms[1], ms[2]};
    if (better_acc) {
      best_acc = ms[1].accuracy;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline std::string metrics_csv(const std::vector<EpochRow>& history) {
  io::CsvWriter w({"epoch", "split", "loss", "accuracy", "macro_f1"});
  for (const auto& r : history)
    w.row({io::cell(r.epoch), std::string(to_string(r.split)), io::cell(r.metrics.loss), io::cell(r.metrics.accuracy),
           io::cell(r.metrics.macro_f1)});
  return w.str();
}

struct SweepCell {
  int K = 0;
  std::uint64_t seed = 0;
  double metric = 0.0;  // test accuracy at the best validation epoch
};

struct SweepSummary {
  int K = 0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
  int runs = 0;
};

/// One training run per (K, seed) with every other setting of `base` fixed.
inline std::vector<SweepCell> sweep_kernels(const HKNConfig& base, const GraphBatch& data, const std::vector<int>& Ks,
                                            const std::vector<std::uint64_t>& seeds,
                                            const KernelSet* file_kernels = nullptr) {
  std::vector<SweepCell> cells;
  for (int K : Ks)
    for (std::uint64_t s : seeds) {
      HKNConfig cfg = base;
      cfg.K = K;
      cfg.seed = s;
      HKNModel m = build_hkn(cfg, data.num_features(), data.num_classes(), file_kernels);
      const TrainResult r = train(m, data);
      cells.push_back({K, s, r.best.test.accuracy});
    }
  return cells;
}

inline std::vector<SweepSummary> summarize_sweep(const std::vector<SweepCell>& cells) {
  std::vector<SweepSummary> out;
  for (const auto& c : cells) {
    if (out.empty() || out.back().K != c.K) out.push_back({c.K, 0.0, 0.0, 0});
    auto& s = out.back();
    s.mean += c.metric;
    ++s.runs;
  }
  for (auto& s : out) {
    s.mean /= s.runs;
    double v = 0.0;
    for (const auto& c : cells)
      if (c.K == s.K) v += (c.metric - s.mean) * (c.metric - s.mean);
    s.std = std::sqrt(v / s.runs);
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  io::CsvWriter w({"K", "seed", "metric"});
  for (const auto& c : cells) w.row({io::cell(c.K), io::cell(c.seed), io::cell(c.metric)});
  return w.str();
}

}  // namespace hkconv
