#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

const fs::path& root() {
  static const fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "hkconv_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

fs::path dir(const std::string& name) {
  fs::path d = root() / name;
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json json_file(const fs::path& p) { return Json::parse(slurp(p)); }

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI with `args`; stdout and stderr are captured in `work`.
Result run(const std::string& args, const fs::path& work, const std::string& env = "") {
  const fs::path o = work / "stdout.txt", e = work / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + std::string(HKCONV_BIN) + "' " + args + " > '" +
                          o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string out_flag(const fs::path& d) { return "--out '" + d.string() + "'"; }

double radius(const Json& point) { return std::acosh(point.at(0).get<double>()); }

const std::string kTinyData = " --synth-graphs 20 --synth-nodes 8 --data-seed 2";
const std::string kTinyModel = " --K 3 --hidden 4 --max-epochs 3 --kernel random --quiet";

}  // namespace

TEST(Cli, VersionHelpAndUsageErrors) {
  const fs::path d = dir("usage");
  Result r = run("--version", d);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("hkconv"), std::string::npos);
  EXPECT_EQ(run("--help", d).code, 0);
  EXPECT_EQ(run("", d).code, 2);
  EXPECT_EQ(run("frobnicate", d).code, 2);
  EXPECT_EQ(run("kernel-gen --K 2 --no-such-flag 1", d).code, 2);
  EXPECT_EQ(run("kernel-gen --dim 2", d).code, 2);
  EXPECT_EQ(run("kernel-gen --K 1 " + out_flag(d), d).code, 2);
  EXPECT_EQ(run("kernel-gen --K 2 --curvature 1 " + out_flag(d), d).code, 2);
  EXPECT_EQ(run("invariants --suite nonsense " + out_flag(d), d).code, 2);
  EXPECT_EQ(run("train --task graph --lr -1 " + out_flag(d), d).code, 2);
  EXPECT_EQ(run("train --layers 9 " + out_flag(d), d).code, 2);
}

TEST(Cli, KernelGenPairMatchesAnalyticOptimum) {
  const fs::path d = dir("kg2");
  const Result r = run("kernel-gen --K 2 --dim 2 --seed 3 " + out_flag(d), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const Json k = json_file(d / "kernels.json");
  ASSERT_EQ(k.at("points").size(), 2u);
  for (const auto& p : k.at("points")) EXPECT_NEAR(radius(p), std::sqrt(0.5), 1e-3);
  EXPECT_EQ(lines(d / "convergence.csv").front(), "iter,loss,grad_norm");
  EXPECT_EQ(lines(d / "kernels_poincare.csv").front(), "x,y");
  const Json m = json_file(d / "manifest.json");
  EXPECT_EQ(m.at("command"), "kernel-gen");
  EXPECT_EQ(m.at("seed"), 3);
  EXPECT_FALSE(m.at("kernel_hash").get<std::string>().empty());
  EXPECT_FALSE(m.at("version").get<std::string>().empty());
  EXPECT_EQ(m.at("config").at("learning_rate"), 1e-4);

  const std::string first = slurp(d / "kernels.json");
  ASSERT_EQ(run("kernel-gen --K 2 --dim 2 --seed 3 " + out_flag(d), d).code, 0);
  EXPECT_EQ(slurp(d / "kernels.json"), first);
}

TEST(Cli, KernelGenFivePointsDistinct) {
  const fs::path d = dir("kg5");
  const Result r = run("kernel-gen --K 5 --dim 2 --max-iters 10000000 " + out_flag(d), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const Json k = json_file(d / "kernels.json");
  ASSERT_EQ(k.at("points").size(), 5u);
  std::set<std::string> distinct;
  for (const auto& p : k.at("points")) {
    const double t = p.at(0), x = p.at(1), y = p.at(2);
    EXPECT_NEAR(-t * t + x * x + y * y, -1.0, 1e-9);
    distinct.insert(p.dump());
  }
  EXPECT_EQ(distinct.size(), 5u);
}

TEST(Cli, KernelGenNonConvergenceIsRuntimeFailure) {
  const fs::path d = dir("kg_fail");
  const Result r = run("kernel-gen --K 5 --dim 2 --max-iters 100 " + out_flag(d), d);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("not converged"), std::string::npos);
}

TEST(Cli, InvariantsPassAndReportEveryProperty) {
  const fs::path d = dir("inv");
  const Result r = run("invariants --suite all --trials 100 " + out_flag(d), d);
  EXPECT_EQ(r.code, 0) << r.out;
  const Json rep = json_file(d / "report.json");
  ASSERT_TRUE(rep.at("properties").is_array());
  EXPECT_GE(rep.at("properties").size(), 20u);
  for (const auto& p : rep.at("properties")) {
    EXPECT_TRUE(p.contains("name"));
    EXPECT_EQ(p.at("trials"), 100);
    EXPECT_TRUE(p.contains("max_error"));
  }
  EXPECT_EQ(rep.at("failed"), 0);
}

TEST(Cli, CorruptedTransportFailsTranslationInvariance) {
  const fs::path d = dir("inv_mut");
  const Result r = run("invariants --suite theorem1 --trials 20 --mutate-transport drop-correction " + out_flag(d), d);
  EXPECT_GT(r.code, 0) << r.out;
  const Json rep = json_file(d / "report.json");
  EXPECT_EQ(rep.at("failed"), r.code);
  EXPECT_EQ(rep.at("transport_mutation"), "drop-correction");
}

TEST(Cli, AppendixAFitAndRadiusDoubling) {
  const fs::path a = dir("app_a"), b = dir("app_b");
  const Result r = run("appendix-a --K 8 --radii 0.5:5.0:0.5 " + out_flag(a), a);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(a / "gradient_decay.csv");
  ASSERT_EQ(rows.size(), 11u);
  const Json fit = json_file(a / "manifest.json").at("fit");
  EXPECT_LT(fit.at("slope").get<double>(), 0.0);
  EXPECT_GE(fit.at("r_squared").get<double>(), 0.95);
  EXPECT_NE(r.out.find("slope"), std::string::npos);

  ASSERT_EQ(run("appendix-a --K 8 --radii 1.0:10.0:1.0 " + out_flag(b), b).code, 0);
  const auto doubled = lines(b / "gradient_decay.csv");
  ASSERT_EQ(doubled.size(), 11u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double g1 = std::stod(rows[i].substr(rows[i].find(',') + 1));
    const double g2 = std::stod(doubled[i].substr(doubled[i].find(',') + 1));
    EXPECT_LT(g2, g1) << "row " << i;
  }
  EXPECT_EQ(run("appendix-a --radii 2:1:0.5 " + out_flag(a), a).code, 2);
}

TEST(Cli, TrainWritesArtifactsAndEvalReproduces) {
  const fs::path d = dir("train");
  Result r = run("train --task graph --data synth" + kTinyData + kTinyModel + " --seed 7 " + out_flag(d), d);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"metrics.csv", "checkpoint.json", "report.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  EXPECT_EQ(lines(d / "metrics.csv").front(), "epoch,split,loss,accuracy,macro_f1");
  EXPECT_EQ(lines(d / "metrics.csv").size(), 1u + 4u * 3u);

  const Json m = json_file(d / "manifest.json");
  EXPECT_EQ(m.at("seed"), 7);
  EXPECT_FALSE(m.at("kernel_hash").get<std::string>().empty());
  const Json& cfg = m.at("config");
  for (const char* key : {"layers", "K", "hidden_dim", "curvature", "dropout", "lr", "weight_decay", "pooling",
                          "kernel_source", "task", "seed", "max_epochs", "patience", "batch_size", "data"})
    EXPECT_TRUE(cfg.contains(key)) << key;
  EXPECT_EQ(cfg.at("K"), 3);
  EXPECT_EQ(cfg.at("lr"), 0.02);
  EXPECT_FALSE(cfg.at("data").at("hash").get<std::string>().empty());

  const std::string metrics = slurp(d / "metrics.csv"), ckpt = slurp(d / "checkpoint.json");
  r = run("eval --data synth" + kTinyData + " " + out_flag(d), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const Json ev = json_file(d / "eval.json");
  EXPECT_TRUE(ev.at("matches_stored_test_metrics").get<bool>());
  EXPECT_EQ(ev.at("metrics").at("accuracy"), json_file(d / "report.json").at("test").at("accuracy"));
  EXPECT_EQ(slurp(d / "metrics.csv"), metrics);

  ASSERT_EQ(run("train --task graph --data synth" + kTinyData + kTinyModel + " --seed 7 " + out_flag(d), d).code, 0);
  EXPECT_EQ(slurp(d / "metrics.csv"), metrics);
  EXPECT_EQ(slurp(d / "checkpoint.json"), ckpt);
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const fs::path d = dir("config");
  {
    std::ofstream cfg(d / "run.cfg");
    cfg << "# tiny run\nrun.seed = 5\nmodel.K=3\nmodel.hidden=4\nmodel.kernel=random\n"
        << "train.max_epochs=2\ndata.graphs=20\ndata.nodes=8\nkernel.K=9\n";
  }
  Result r = run("train --config '" + (d / "run.cfg").string() + "' --K 2 --quiet " + out_flag(d), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const Json m = json_file(d / "manifest.json");
  EXPECT_EQ(m.at("config").at("K"), 2);
  EXPECT_EQ(m.at("config").at("hidden_dim"), 4);
  EXPECT_EQ(m.at("config").at("max_epochs"), 2);
  EXPECT_EQ(m.at("seed"), 5);

  {
    std::ofstream bad(d / "bad.cfg");
    bad << "model.K=3\nmodel.colour=blue\n";
  }
  r = run("train --config '" + (d / "bad.cfg").string() + "' " + out_flag(d), d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.colour"), std::string::npos);
  {
    std::ofstream dup(d / "dup.cfg");
    dup << "model.K=3\nmodel.K=4\n";
  }
  EXPECT_EQ(run("train --config '" + (d / "dup.cfg").string() + "' " + out_flag(d), d).code, 2);
  {
    std::ofstream noeq(d / "noeq.cfg");
    noeq << "model.K 3\n";
  }
  EXPECT_EQ(run("train --config '" + (d / "noeq.cfg").string() + "' " + out_flag(d), d).code, 2);
  EXPECT_EQ(run("train --config '" + (d / "missing.cfg").string() + "' " + out_flag(d), d).code, 2);
}

TEST(Cli, KernelFileConflictsAreUsageErrors) {
  const fs::path k = dir("kfile"), d = dir("kfile_train");
  ASSERT_EQ(run("kernel-gen --K 3 --dim 4 --max-iters 10000000 " + out_flag(k), k).code, 0);
  const std::string file = "'" + (k / "kernels.json").string() + "'";
  const std::string base = "train --data synth" + kTinyData + " --hidden 4 --max-epochs 1 --quiet --kernel " + file;

  Result r = run(base + " --K 4 " + out_flag(d), d);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("conflicts"), std::string::npos) << r.err;

  r = run(base + " " + out_flag(d), d);
  ASSERT_EQ(r.code, 0) << r.err;
  const Json m = json_file(d / "manifest.json");
  EXPECT_EQ(m.at("config").at("K"), 3);
  EXPECT_FALSE(m.at("kernel_file_hash").get<std::string>().empty());

  EXPECT_EQ(run(base + " --curvature -2 " + out_flag(d), d).code, 2);
  EXPECT_EQ(run("train --data synth" + kTinyData + " --hidden 5 --max-epochs 1 --kernel " + file + " " + out_flag(d), d)
                .code,
            2);
}

TEST(Cli, SweepEmitsKBySeedTable) {
  const fs::path d = dir("sweep");
  const Result r = run("sweep --task graph --data synth" + kTinyData +
                           " --hidden 4 --max-epochs 1 --kernel random --Ks 2,3 --seeds 2 " + out_flag(d),
                       d);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cells = lines(d / "sweep.csv");
  ASSERT_EQ(cells.size(), 5u);
  EXPECT_EQ(cells.front(), "K,seed,metric");
  const auto summary = lines(d / "sweep_summary.csv");
  ASSERT_EQ(summary.size(), 3u);
  EXPECT_EQ(summary.front(), "K,mean,std,runs");
  EXPECT_EQ(run("sweep --Ks 1,3 " + out_flag(d), d).code, 2);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const fs::path d = dir("env_out");
  const Result r = run("appendix-a", d, "HKCONV_OUT='" + d.string() + "'");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "gradient_decay.csv"));
}

TEST(Cli, MissingDatasetIsRuntimeFailure) {
  const fs::path d = dir("nodata");
  const Result r = run("train --data '" + (d / "absent.json").string() + "' --quiet " + out_flag(d), d);
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
}
