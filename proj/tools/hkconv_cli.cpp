// Command-line front end: kernel generation, invariant suites, the gradient
// decay experiment, training, evaluation and kernel-count sweeps.

#include "hkconv/hkconv.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hkconv;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kCommands{"kernel-gen", "invariants", "appendix-a", "train", "eval", "sweep"};

// Config-file key -> option name, and the subcommands that take it.
struct ConfigKey {
  std::string option;
  std::set<std::string> commands;
};

const std::map<std::string, ConfigKey>& config_keys() {
  const std::set<std::string> all(kCommands.begin(), kCommands.end());
  const std::set<std::string> model{"train", "sweep"};
  const std::set<std::string> data{"train", "eval", "sweep"};
  static const std::map<std::string, ConfigKey> keys{
      {"run.seed", {"--seed", all}},
      {"run.out", {"--out", all}},
      {"kernel.K", {"--K", {"kernel-gen"}}},
      {"kernel.dim", {"--dim", {"kernel-gen"}}},
      {"kernel.curvature", {"--curvature", {"kernel-gen"}}},
      {"solver.lr", {"--lr", {"kernel-gen"}}},
      {"solver.max_iters", {"--max-iters", {"kernel-gen"}}},
      {"solver.grad_tol", {"--grad-tol", {"kernel-gen"}}},
      {"solver.init_scale", {"--init-scale", {"kernel-gen"}}},
      {"solver.log_every", {"--log-every", {"kernel-gen"}}},
      {"invariants.suite", {"--suite", {"invariants"}}},
      {"invariants.trials", {"--trials", {"invariants"}}},
      {"invariants.mutate_transport", {"--mutate-transport", {"invariants"}}},
      {"appendix.K", {"--K", {"appendix-a"}}},
      {"appendix.radii", {"--radii", {"appendix-a"}}},
      {"model.K", {"--K", model}},
      {"model.layers", {"--layers", model}},
      {"model.hidden", {"--hidden", model}},
      {"model.curvature", {"--curvature", model}},
      {"model.pooling", {"--pooling", model}},
      {"model.mode", {"--mode", model}},
      {"model.activation", {"--activation", model}},
      {"model.kernel", {"--kernel", model}},
      {"train.lr", {"--lr", model}},
      {"train.weight_decay", {"--weight-decay", model}},
      {"train.dropout", {"--dropout", model}},
      {"train.max_epochs", {"--max-epochs", model}},
      {"train.patience", {"--patience", model}},
      {"train.batch_size", {"--batch-size", model}},
      {"data.task", {"--task", data}},
      {"data.source", {"--data", data}},
      {"data.graphs", {"--synth-graphs", data}},
      {"data.nodes", {"--synth-nodes", data}},
      {"data.seed", {"--data-seed", data}},
      {"sweep.Ks", {"--Ks", {"sweep"}}},
      {"sweep.seeds", {"--seeds", {"sweep"}}},
      {"eval.checkpoint", {"--checkpoint", {"eval"}}},
      {"eval.split", {"--split", {"eval"}}},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

/// key=value lines; '#' starts a comment. Returns the flags the file sets
/// for `command`, in file order.
std::vector<std::string> config_args(const fs::path& path, const std::string& command) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  std::vector<std::string> args;
  std::set<std::string> seen;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    const std::string where = path.string() + ":" + std::to_string(no);
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = config_keys().find(key);
    if (it == config_keys().end()) throw UsageError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw UsageError(where + ": key '" + key + "' set twice");
    if (!it->second.commands.count(command)) continue;
    args.push_back(it->second.option);
    args.push_back(value);
  }
  return args;
}

/// argv with the config-file flags spliced in right after the subcommand, so
/// that explicit flags (which come later) win.
std::vector<std::string> expand_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  std::size_t sub = args.size();
  for (std::size_t i = 0; i < args.size(); ++i)
    if (std::find(kCommands.begin(), kCommands.end(), args[i]) != kCommands.end()) {
      sub = i;
      break;
    }
  if (sub == args.size()) throw UsageError("--config needs a subcommand");
  const auto extra = config_args(config, args[sub]);
  args.insert(args.begin() + static_cast<long>(sub) + 1, extra.begin(), extra.end());
  return args;
}

fs::path default_out() {
  const char* env = std::getenv("HKCONV_OUT");
  return env && *env ? fs::path(env) : fs::path("out");
}

struct Common {
  std::string config;
  std::string out = default_out().string();
  std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value config file; explicit flags override it");
  sub->add_option("--out", c.out, "output directory (default $HKCONV_OUT or ./out)");
  sub->add_option("--seed", c.seed, "master seed");
}

std::vector<double> parse_number_list(const std::string& spec, const char* what) {
  std::vector<double> out;
  try {
    const auto c1 = spec.find(':');
    if (c1 != std::string::npos) {
      const auto c2 = spec.find(':', c1 + 1);
      if (c2 == std::string::npos) throw UsageError(std::string(what) + ": expected start:stop:step");
      const double a = std::stod(spec.substr(0, c1));
      const double b = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
      const double s = std::stod(spec.substr(c2 + 1));
      if (!(s > 0.0) || b < a) throw UsageError(std::string(what) + ": need step > 0 and stop >= start");
      const long n = std::lround(std::floor((b - a) / s + 1e-9));
      for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * s);
    } else {
      std::stringstream ss(spec);
      std::string tok;
      while (std::getline(ss, tok, ',')) out.push_back(std::stod(trim(tok)));
    }
  } catch (const std::logic_error&) {
    throw UsageError(std::string(what) + ": cannot parse '" + spec + "'");
  }
  if (out.empty()) throw UsageError(std::string(what) + ": empty list");
  return out;
}

std::vector<int> parse_int_list(const std::string& spec, const char* what) {
  std::vector<int> out;
  const auto colon = spec.find(':');
  try {
    if (colon != std::string::npos) {
      const int a = std::stoi(spec.substr(0, colon));
      const int b = std::stoi(spec.substr(colon + 1));
      if (b < a) throw UsageError(std::string(what) + ": empty range");
      for (int k = a; k <= b; ++k) out.push_back(k);
    } else {
      std::stringstream ss(spec);
      std::string tok;
      while (std::getline(ss, tok, ',')) out.push_back(std::stoi(trim(tok)));
    }
  } catch (const std::logic_error&) {
    throw UsageError(std::string(what) + ": cannot parse '" + spec + "'");
  }
  if (out.empty()) throw UsageError(std::string(what) + ": empty list");
  return out;
}

io::Json manifest(const std::string& command, const std::vector<std::string>& args, std::uint64_t seed,
                  io::Json config, const std::string& kernel_hash, const std::vector<std::string>& artifacts) {
  io::Json j;
  j["version"] = std::string(kVersion);
  j["command"] = command;
  j["args"] = args;
  j["seed"] = seed;
  j["config"] = std::move(config);
  j["kernel_hash"] = kernel_hash;
  j["artifacts"] = artifacts;
  return j;
}

void write_manifest(const fs::path& out, const io::Json& m) { io::write_file(out / "manifest.json", io::to_string(m)); }

// ------------------------------------------------------------- kernel-gen

struct KernelGenOpts {
  int K = 0;
  int dim = 2;
  double curvature = -1.0;
  SolverConfig solver;
};

int run_kernel_gen(const Common& c, KernelGenOpts o, const std::vector<std::string>& args) {
  if (o.K < 2) throw UsageError("kernel-gen: --K must be at least 2");
  if (o.dim < 1) throw UsageError("kernel-gen: --dim must be positive");
  o.solver.seed = c.seed;
  ManifoldConfig mc;
  mc.curvature = o.curvature;
  mc.dim = o.dim;
  try {
    mc.validate();
    o.solver.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const SolveResult r = solve_kernels(o.K, o.dim, o.solver, mc);
  const fs::path out(c.out);
  const std::string text = io::to_string(io::kernels_to_json(r.kernels));
  io::write_file(out / "kernels.json", text);
  io::write_file(out / "convergence.csv", io::solver_log_csv(r.trace));
  io::write_file(out / "kernels_poincare.csv", io::poincare_points_csv(r.kernels));
  io::write_file(out / "kernels_geodesics.csv", io::poincare_geodesics_csv(r.kernels));

  io::Json cfg;
  cfg["K"] = o.K;
  cfg["dim"] = o.dim;
  cfg["curvature"] = o.curvature;
  cfg["learning_rate"] = o.solver.learning_rate;
  cfg["max_iters"] = o.solver.max_iters;
  cfg["grad_tol"] = o.solver.grad_tol;
  cfg["init_scale"] = o.solver.init_scale;
  cfg["log_every"] = o.solver.log_every;
  io::Json m = manifest("kernel-gen", args, c.seed, cfg, io::fnv1a_hex(text),
                        {"kernels.json", "convergence.csv", "kernels_poincare.csv", "kernels_geodesics.csv"});
  m["result"] = {{"iterations", r.trace.iterations},
                 {"converged", r.trace.converged},
                 {"loss", r.trace.best_loss},
                 {"grad_norm", r.trace.final_grad_norm}};
  write_manifest(out, m);

  double min_pair = INFINITY;
  for (int k = 0; k < r.kernels.K(); ++k)
    for (int l = k + 1; l < r.kernels.K(); ++l)
      min_pair = std::min(min_pair, distance(r.kernels.points[k], r.kernels.points[l]));
  std::printf("K=%d dim=%d iterations=%ld loss=%.12g grad_norm=%.3e min_pair_distance=%.6f\n", o.K, o.dim,
              r.trace.iterations, r.trace.best_loss, r.trace.final_grad_norm, min_pair);
  for (int k = 0; k < r.kernels.K(); ++k)
    std::printf("  kernel %d: d(o, x) = %.6f\n", k, distance(origin(mc), r.kernels.points[k]));
  if (!r.trace.converged) {
    std::fprintf(stderr, "kernel-gen: not converged after %ld iterations (grad norm %.3e > %.1e)\n",
                 r.trace.iterations, r.trace.final_grad_norm, o.solver.grad_tol);
    return 1;
  }
  std::printf("wrote %s\n", (out / "kernels.json").string().c_str());
  return 0;
}

// ------------------------------------------------------------- invariants

struct InvariantOpts {
  std::string suite = "all";
  int trials = 100;
  std::string mutation = "none";
};

int run_invariants(const Common& c, const InvariantOpts& o, const std::vector<std::string>& args) {
  if (o.trials < 1) throw UsageError("invariants: --trials must be positive");
  if (o.suite != "all" && std::find(inv::suite_names().begin(), inv::suite_names().end(), o.suite) ==
                              inv::suite_names().end())
    throw UsageError("invariants: unknown suite '" + o.suite + "'");
  inv::Mutation mutation;
  try {
    mutation = inv::mutation_from_string(o.mutation);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  inv::SuiteOptions so;
  so.trials = o.trials;
  so.seed = c.seed;
  const auto results = inv::run_suites(o.suite, so, mutation);
  for (const auto& r : results)
    std::printf("%-4s %-9s %-40s trials=%-6d max_error=%-11.3e tol=%.0e%s%s\n", r.passed ? "ok" : "FAIL",
                r.suite.c_str(), r.name.c_str(), r.trials, r.max_error, r.tolerance, r.note.empty() ? "" : "  ",
                r.note.c_str());
  const fs::path out(c.out);
  io::write_file(out / "report.json", io::to_string(inv::report_to_json(results, so, mutation)));
  io::Json cfg{{"suite", o.suite}, {"trials", o.trials}, {"mutate_transport", o.mutation}};
  write_manifest(out, manifest("invariants", args, c.seed, cfg, "", {"report.json"}));
  const int failed = inv::count_failures(results);
  std::printf("%d of %zu properties failed\n", failed, results.size());
  return std::min(failed, 125);
}

// ------------------------------------------------------------- appendix-a

int run_appendix_a(const Common& c, int K, const std::string& radii_spec, const std::vector<std::string>& args) {
  if (K < 2) throw UsageError("appendix-a: --K must be at least 2");
  const auto radii = parse_number_list(radii_spec, "--radii");
  for (std::size_t i = 0; i < radii.size(); ++i)
    if (!(radii[i] > 0.0) || (i && !(radii[i] > radii[i - 1])))
      throw UsageError("appendix-a: radii must be positive and ascending");
  ManifoldConfig mc;
  mc.dim = 2;
  const auto rows = gradient_decay_experiment(K, radii, mc);
  const auto fit = fit_log_linear(rows);
  const fs::path out(c.out);
  io::write_file(out / "gradient_decay.csv", io::gradient_decay_csv(rows));
  io::Json cfg{{"K", K}, {"radii", radii}};
  io::Json m = manifest("appendix-a", args, c.seed, cfg, "", {"gradient_decay.csv"});
  m["fit"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r_squared", fit.r_squared}};
  write_manifest(out, m);
  for (const auto& r : rows) std::printf("radius=%-6g grad_norm=%.6e\n", r.radius, r.grad_norm);
  std::printf("log-linear fit: slope=%.6f r_squared=%.6f\n", fit.slope, fit.r_squared);
  return 0;
}

// ------------------------------------------------------ train / eval / sweep

struct DataOpts {
  std::string task = "graph";
  std::string source = "synth";
  int graphs = 200;
  int nodes = 16;
  std::uint64_t seed = 0;
};

struct ModelOpts {
  int K = 4;
  int layers = 2;
  int hidden = 16;
  double curvature = -1.0;
  std::string pooling = "uniform";
  std::string mode = "relative";
  std::string activation = "relu";
  std::string kernel = "optimized";
  double lr = 0.02;
  double weight_decay = 0.0;
  double dropout = 0.0;
  int max_epochs = 500;
  int patience = 50;
  int batch_size = 16;
  bool quiet = false;
  CLI::Option* K_opt = nullptr;
};

GraphBatch load_data(const DataOpts& d, Task task) {
  if (d.source == "synth") {
    if (d.graphs < 2 || d.graphs % 2) throw UsageError("--synth-graphs must be even and at least 2");
    if (d.nodes < 8) throw UsageError("--synth-nodes must be at least 8");
    return task == Task::graph ? synth_trees_vs_random(d.graphs, d.nodes, d.seed)
                               : synth_nodes(d.graphs, d.nodes, d.seed);
  }
  GraphBatch g = load_dataset(d.source);
  if (g.task != task) throw UsageError("dataset '" + d.source + "' holds a " + std::string(to_string(g.task)) + " task");
  return g;
}

io::Json data_json(const DataOpts& d, const GraphBatch& g) {
  io::Json j{{"source", d.source}, {"task", std::string(to_string(g.task))}};
  if (d.source == "synth") {
    j["graphs"] = d.graphs;
    j["nodes_per_graph"] = d.nodes;
    j["seed"] = d.seed;
  }
  j["hash"] = io::fnv1a_hex(io::to_string(dataset_to_json(g)));
  return j;
}

/// Resolved model configuration plus the kernel file, if one was named.
struct Resolved {
  HKNConfig cfg;
  std::optional<KernelSet> file_kernels;
  std::string kernel_file_hash;
};

Resolved resolve_model(const Common& c, const ModelOpts& o, const DataOpts& d) {
  Resolved r;
  HKNConfig& cfg = r.cfg;
  try {
    cfg.layers = o.layers;
    cfg.K = o.K;
    cfg.hidden_dim = o.hidden;
    cfg.curvature = o.curvature;
    cfg.dropout = o.dropout;
    cfg.lr = o.lr;
    cfg.weight_decay = o.weight_decay;
    cfg.pooling = pooling_from_string(o.pooling);
    cfg.mode = conv_mode_from_string(o.mode);
    cfg.activation = activation_from_string(o.activation);
    cfg.task = task_from_string(d.task);
    cfg.seed = c.seed;
    cfg.max_epochs = o.max_epochs;
    cfg.patience = o.patience;
    cfg.batch_size = o.batch_size;
    if (o.kernel == "optimized" || o.kernel == "random") {
      cfg.kernel_source = kernel_source_from_string(o.kernel);
    } else {
      const std::string bytes = io::read_file(o.kernel);
      r.file_kernels = io::kernels_from_json(io::parse(bytes, o.kernel), true, o.kernel);
      r.kernel_file_hash = io::fnv1a_hex(bytes);
      const int fileK = r.file_kernels->K();
      if (o.K_opt && o.K_opt->count() && fileK != o.K)
        throw UsageError("--K " + std::to_string(o.K) + " conflicts with the " + std::to_string(fileK) +
                         " kernel points in '" + o.kernel + "'");
      cfg.K = fileK;
      if (r.file_kernels->cfg.curvature != cfg.curvature)
        throw UsageError("kernel file curvature differs from --curvature");
    }
    cfg.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  return r;
}

std::string kernels_hash(const HKNModel& m) {
  io::Json ks = io::Json::array();
  for (const auto& k : m.kernels) ks.push_back(io::kernels_to_json(k));
  return io::fnv1a_hex(io::to_string(ks));
}

HKNModel build_checked(const Resolved& r, const GraphBatch& data) {
  const KernelSet* fk = r.file_kernels ? &*r.file_kernels : nullptr;
  if (fk && fk->cfg.dim != data.num_features() && fk->cfg.dim != r.cfg.hidden_dim)
    throw UsageError("kernel file dimension " + std::to_string(fk->cfg.dim) + " matches neither the " +
                     std::to_string(data.num_features()) + " input features nor --hidden " +
                     std::to_string(r.cfg.hidden_dim));
  return build_hkn(r.cfg, data.num_features(), std::max(2, data.num_classes()), fk);
}

void print_metrics(const char* label, const Metrics& m) {
  std::printf("%s loss=%.6f accuracy=%.4f macro_f1=%.4f\n", label, m.loss, m.accuracy, m.macro_f1);
}

int run_train(const Common& c, const ModelOpts& o, const DataOpts& d, const std::vector<std::string>& args) {
  const Resolved r = resolve_model(c, o, d);
  const GraphBatch data = load_data(d, r.cfg.task);
  HKNModel model = build_checked(r, data);
  const TrainResult res = train(model, data, [&](int epoch, const std::array<Metrics, 3>& ms) {
    if (!o.quiet && (epoch % 10 == 0))
      std::printf("epoch %4d  train_loss=%.5f train_acc=%.4f val_acc=%.4f test_acc=%.4f\n", epoch, ms[0].loss,
                  ms[0].accuracy, ms[1].accuracy, ms[2].accuracy);
  });
  const fs::path out(c.out);
  io::write_file(out / "metrics.csv", metrics_csv(res.history));
  save_checkpoint(out / "checkpoint.json", res.best);
  io::Json report;
  report["best_epoch"] = res.best.epoch;
  report["epochs_run"] = res.epochs_run;
  report["seconds"] = res.seconds;
  report["val"] = metrics_to_json(res.best.val);
  report["test"] = metrics_to_json(res.best.test);
  io::write_file(out / "report.json", io::to_string(report));
  io::Json cfg = config_to_json(r.cfg);
  cfg["kernel"] = o.kernel;
  cfg["data"] = data_json(d, data);
  io::Json m = manifest("train", args, c.seed, cfg, kernels_hash(model),
                        {"metrics.csv", "checkpoint.json", "report.json"});
  if (!r.kernel_file_hash.empty()) m["kernel_file_hash"] = r.kernel_file_hash;
  write_manifest(out, m);
  std::printf("best epoch %d of %d (%.1f s)\n", res.best.epoch, res.epochs_run, res.seconds);
  print_metrics("val ", res.best.val);
  print_metrics("test", res.best.test);
  return 0;
}

int run_eval(const Common& c, std::string checkpoint, DataOpts d, const std::string& split_name,
             const std::vector<std::string>& args) {
  if (checkpoint.empty()) checkpoint = (fs::path(c.out) / "checkpoint.json").string();
  Split split;
  try {
    split = split_from_string(split_name);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  d.task = std::string(to_string(ck.model.cfg.task));
  const GraphBatch data = load_data(d, ck.model.cfg.task);
  const Metrics m = evaluate(ck.model, data, split);
  std::printf("%s loss=%.17g accuracy=%.17g macro_f1=%.17g\n", std::string(to_string(split)).c_str(), m.loss,
              m.accuracy, m.macro_f1);
  io::Json report{{"checkpoint", checkpoint}, {"split", split_name}, {"metrics", metrics_to_json(m)}};
  if (split == Split::test) {
    const bool same = m.loss == ck.test.loss && m.accuracy == ck.test.accuracy && m.macro_f1 == ck.test.macro_f1;
    report["matches_stored_test_metrics"] = same;
    std::printf("stored test metrics %s\n", same ? "reproduced exactly" : "differ");
  }
  io::Json cfg = config_to_json(ck.model.cfg);
  cfg["data"] = data_json(d, data);
  report["manifest"] = manifest("eval", args, ck.model.cfg.seed, cfg, kernels_hash(ck.model), {});
  io::write_file(fs::path(c.out) / "eval.json", io::to_string(report));
  return 0;
}

int run_sweep(const Common& c, const ModelOpts& o, const DataOpts& d, const std::string& Ks_spec, int n_seeds,
              const std::vector<std::string>& args) {
  if (n_seeds < 1) throw UsageError("sweep: --seeds must be positive");
  if (o.kernel != "optimized" && o.kernel != "random")
    throw UsageError("sweep: --kernel must be optimized or random (K varies across the sweep)");
  const auto Ks = parse_int_list(Ks_spec, "--Ks");
  Resolved r = resolve_model(c, o, d);
  for (int K : Ks)
    if (K < 2 || K > 9) throw UsageError("sweep: every K must lie in [2, 9]");
  const GraphBatch data = load_data(d, r.cfg.task);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(c.seed + static_cast<std::uint64_t>(i));
  std::vector<SweepCell> cells;
  for (int K : Ks)
    for (std::uint64_t s : seeds) {
      const auto part = sweep_kernels(r.cfg, data, {K}, {s});
      cells.push_back(part.front());
      std::printf("K=%d seed=%llu test_accuracy=%.4f\n", K, static_cast<unsigned long long>(s), part.front().metric);
      std::fflush(stdout);
    }
  const auto summary = summarize_sweep(cells);
  const fs::path out(c.out);
  io::write_file(out / "sweep.csv", sweep_csv(cells));
  io::CsvWriter w({"K", "mean", "std", "runs"});
  for (const auto& s : summary) {
    w.row({io::cell(s.K), io::cell(s.mean), io::cell(s.std), io::cell(s.runs)});
    std::printf("K=%d mean=%.4f std=%.4f runs=%d\n", s.K, s.mean, s.std, s.runs);
  }
  w.save(out / "sweep_summary.csv");
  io::Json cfg = config_to_json(r.cfg);
  cfg.erase("K");
  cfg.erase("seed");
  cfg["Ks"] = Ks;
  cfg["seeds"] = seeds;
  cfg["kernel"] = o.kernel;
  cfg["data"] = data_json(d, data);
  write_manifest(out, manifest("sweep", args, c.seed, cfg, "", {"sweep.csv", "sweep_summary.csv"}));
  return 0;
}

void add_data_options(CLI::App* s, DataOpts& d) {
  s->add_option("--task", d.task, "graph or node")->check(CLI::IsMember({"graph", "node"}));
  s->add_option("--data", d.source, "dataset JSON path, or 'synth'");
  s->add_option("--synth-graphs", d.graphs, "synthetic suite: number of graphs");
  s->add_option("--synth-nodes", d.nodes, "synthetic suite: nodes per graph");
  s->add_option("--data-seed", d.seed, "synthetic suite: generator seed");
}

void add_model_options(CLI::App* s, ModelOpts& o) {
  o.K_opt = s->add_option("--K", o.K, "kernel points per layer (2..9)");
  s->add_option("--layers", o.layers, "HKConv layers (2..7)");
  s->add_option("--hidden", o.hidden, "hidden dimension");
  s->add_option("--curvature", o.curvature, "negative curvature");
  s->add_option("--pooling", o.pooling, "uniform or attention")->check(CLI::IsMember({"uniform", "attention"}));
  s->add_option("--mode", o.mode, "relative or direct")->check(CLI::IsMember({"relative", "direct"}));
  s->add_option("--activation", o.activation, "identity, relu or tanh")
      ->check(CLI::IsMember({"identity", "relu", "tanh"}));
  s->add_option("--kernel", o.kernel, "optimized, random, or a kernel JSON file");
  s->add_option("--lr", o.lr, "Adam learning rate");
  s->add_option("--weight-decay", o.weight_decay, "decoupled weight decay");
  s->add_option("--dropout", o.dropout, "dropout probability");
  s->add_option("--max-epochs", o.max_epochs, "epoch budget");
  s->add_option("--patience", o.patience, "early-stopping patience in epochs");
  s->add_option("--batch-size", o.batch_size, "graphs per minibatch (graph task)");
  s->add_flag("--quiet", o.quiet, "no per-epoch progress");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperbolic kernel point convolution toolkit", "hkconv"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Common common;

  KernelGenOpts kg;
  auto* s_kg = app.add_subcommand("kernel-gen", "place K kernel points by Riemannian gradient descent");
  add_common(s_kg, common);
  s_kg->add_option("--K", kg.K, "number of kernel points")->required();
  s_kg->add_option("--dim", kg.dim, "hyperbolic dimension m");
  s_kg->add_option("--curvature", kg.curvature, "negative curvature");
  s_kg->add_option("--lr", kg.solver.learning_rate, "step size");
  s_kg->add_option("--max-iters", kg.solver.max_iters, "iteration cap");
  s_kg->add_option("--grad-tol", kg.solver.grad_tol, "stop when the largest gradient norm falls below this");
  s_kg->add_option("--init-scale", kg.solver.init_scale, "wrapped-normal scale of the initial points");
  s_kg->add_option("--log-every", kg.solver.log_every, "convergence log interval");

  InvariantOpts io_;
  auto* s_inv = app.add_subcommand("invariants", "run the property suites");
  add_common(s_inv, common);
  s_inv->add_option("--suite", io_.suite, "all, manifold, layers, theorem1 or prop1");
  s_inv->add_option("--trials", io_.trials, "random trials per property");
  s_inv->add_option("--mutate-transport", io_.mutation, "none, correction-only or drop-correction");

  int appendix_K = 8;
  std::string radii = "0.5:5.0:0.5";
  auto* s_app = app.add_subcommand("appendix-a", "gradient norm of the repulsion term versus radius");
  add_common(s_app, common);
  s_app->add_option("--K", appendix_K, "points on the unit circle");
  s_app->add_option("--radii", radii, "start:stop:step or a comma list");

  ModelOpts mo_train, mo_sweep;
  DataOpts d_train, d_eval, d_sweep;
  auto* s_train = app.add_subcommand("train", "train an HKN");
  add_common(s_train, common);
  add_model_options(s_train, mo_train);
  add_data_options(s_train, d_train);

  std::string checkpoint;
  std::string split = "test";
  auto* s_eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
  add_common(s_eval, common);
  add_data_options(s_eval, d_eval);
  s_eval->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/checkpoint.json)");
  s_eval->add_option("--split", split, "train, val or test");

  std::string Ks = "2:9";
  int n_seeds = 3;
  auto* s_sweep = app.add_subcommand("sweep", "train one model per (K, seed)");
  add_common(s_sweep, common);
  add_model_options(s_sweep, mo_sweep);
  add_data_options(s_sweep, d_sweep);
  s_sweep->add_option("--Ks", Ks, "K values: a:b range or comma list");
  s_sweep->add_option("--seeds", n_seeds, "seeds per K, counted up from --seed");

  std::vector<std::string> args;
  try {
    args = expand_args(argc, argv);
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  }

  try {
    if (*s_kg) return run_kernel_gen(common, kg, args);
    if (*s_inv) return run_invariants(common, io_, args);
    if (*s_app) return run_appendix_a(common, appendix_K, radii, args);
    if (*s_train) return run_train(common, mo_train, d_train, args);
    if (*s_eval) return run_eval(common, checkpoint, d_eval, split, args);
    if (*s_sweep) return run_sweep(common, mo_sweep, d_sweep, Ks, n_seeds, args);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
