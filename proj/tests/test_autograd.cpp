#include "hkconv/hkconv.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

using namespace hkconv;

namespace {

constexpr double kK = -1.0;

ManifoldConfig space(int dim) { return ManifoldConfig{kK, dim}; }

// Tangent vector at the origin from its spatial part.
ad::Var at_origin(ad::Tape& t, const ad::Var& s) { return ad::concat({t.constant(Vec::Zero(1)), s}); }

ParamStore three_points(std::uint64_t seed) {
  CounterRng rng(seed);
  ParamStore st;
  for (const char* name : {"a", "b", "c"}) st.add(name, Tensor::vector(random_point(rng, space(3)).spatial()));
  return st;
}

ad::Var lift(const ad::Leaves& L, const char* name) { return ad::embed_euclidean(L.at(name), kK); }

}  // namespace

TEST(Grad, SquaredDistanceFromOriginGivesTwiceTheTangent) {
  ParamStore st;
  const Vec s = (Vec(3) << 0.4, -1.1, 0.7).finished();
  st.add("v", Tensor::vector(s));
  const auto vg = ad::value_and_grad(
      [](ad::Tape& t, const ad::Leaves& L) {
        const ad::Var o = t.constant(origin(space(3)).coords());
        const ad::Var d = ad::distance(o, ad::exp_map(o, at_origin(t, L.at("v")), kK), kK);
        return ad::mul(d, d);
      },
      st);
  EXPECT_NEAR(vg.loss, s.squaredNorm(), 1e-12);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(vg.grads.at("v")[i], 2.0 * s[i], 1e-9);
}

TEST(Grad, ConstantInALeafGivesZeroGradient) {
  ParamStore st = three_points(3);
  const auto g = ad::grad([](ad::Tape&, const ad::Leaves& L) { return ad::distance(lift(L, "a"), lift(L, "b"), kK); }, st);
  EXPECT_EQ(g.at("c"), Vec::Zero(3));
  EXPECT_GT(g.at("a").norm(), 0.0);
}

TEST(Grad, LinearInTheUpstreamAdjoint) {
  ParamStore st = three_points(4);
  auto base = [](ad::Tape& t, const ad::Leaves& L) {
    (void)t;
    return ad::distance(ad::translate(lift(L, "a"), lift(L, "b"), lift(L, "c"), kK), lift(L, "a"), kK);
  };
  const auto g1 = ad::grad(base, st);
  for (double a : {4.0, 0.25, -2.0}) {
    const auto ga = ad::grad([&](ad::Tape& t, const ad::Leaves& L) { return ad::scale(base(t, L), a); }, st);
    for (const auto& [path, g] : g1) EXPECT_EQ(ga.at(path), (a * g).eval()) << path << " a=" << a;
  }
  const auto g3 = ad::grad([&](ad::Tape& t, const ad::Leaves& L) { return ad::scale(base(t, L), 3.0); }, st);
  for (const auto& [path, g] : g1) EXPECT_LE((g3.at(path) - 3.0 * g).norm(), 1e-14 * (1.0 + g.norm()));
}

TEST(Grad, DeterministicAcrossCalls) {
  ParamStore st = three_points(5);
  auto f = [](ad::Tape&, const ad::Leaves& L) {
    return ad::sum(ad::hcent({lift(L, "a"), lift(L, "b"), lift(L, "c")}, Vec::Ones(3), kK));
  };
  EXPECT_EQ(ad::grad(f, st), ad::grad(f, st));
}

TEST(Grad, NonFiniteBackwardNamesTheOpPath) {
  ParamStore st;
  st.add("x", Tensor::vector(Vec::Ones(2)));
  auto f = [](ad::Tape& t, const ad::Leaves& L) {
    ad::Tape::Scope outer(t, "block");
    ad::Tape::Scope inner(t, "unit");
    const ad::Var& x = L.at("x");
    return t.record(Vec::Constant(1, x.value().sum()), {x}, "bad_op", [] {
      return [](const Vec&, ad::ParentGrads& gin) { gin[0] = Vec::Constant(2, std::numeric_limits<double>::quiet_NaN()); };
    });
  };
  try {
    ad::grad(f, st);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("block/unit/bad_op"), std::string::npos) << e.what();
  }
}

TEST(Grad, NonScalarLossRejected) {
  ParamStore st = three_points(6);
  EXPECT_THROW(ad::grad([](ad::Tape&, const ad::Leaves& L) { return L.at("a"); }, st), DimensionError);
}

TEST(Grad, DistanceAtCoincidentPointsHasZeroAdjoint) {
  ParamStore st;
  st.add("a", Tensor::vector((Vec(2) << 0.3, -0.2).finished()));
  const auto g = ad::grad([](ad::Tape&, const ad::Leaves& L) { return ad::distance(lift(L, "a"), lift(L, "a"), kK); }, st);
  EXPECT_TRUE(g.at("a").allFinite());
  EXPECT_EQ(g.at("a"), Vec::Zero(2));
}

TEST(FiniteDiff, QuadraticIsExact) {
  ParamStore st;
  st.add("q", Tensor::vector((Vec(4) << 1.0, -2.0, 0.5, 3.0).finished()));
  auto f = [](ad::Tape& t, const ad::Leaves& L) {
    const ad::Var& q = L.at("q");
    return ad::add(ad::dot(q, ad::mul(q, t.constant((Vec(4) << 1.0, 2.0, 0.5, 4.0).finished()))),
                   ad::dot(q, t.constant(Vec::Constant(4, 0.3))));
  };
  // No truncation error on a quadratic, so a wide step only shrinks rounding.
  const auto rep = ad::finite_diff_check(f, st, 0.5, 8, 1);
  EXPECT_LE(rep.max_rel_error(), 1e-10);
}

TEST(FiniteDiff, HLinearOnly) {
  CounterRng rng(11);
  ParamStore st;
  auto p = HLinearParams::init(3, 4, rng, Activation::tanh);
  p.v = (Vec(4) << 0.1, -0.2, 0.15, 0.05).finished();
  p.b = (Vec(4) << 0.05, 0.1, -0.1, 0.2).finished();
  st.add("x", Tensor::vector(random_point(rng, space(3)).spatial()));
  st.add("W", Tensor::matrix(p.W));
  st.add("v", Tensor::vector(p.v));
  st.add("b", Tensor::vector(p.b));
  st.add("b_prime", Tensor::scalar(0.1));
  st.add("log_lambda", Tensor::scalar(0.3));
  auto f = [](ad::Tape&, const ad::Leaves& L) {
    const ad::HLinearVars hv{L.at("W"), L.at("v"), L.at("b"), L.at("b_prime"), L.at("log_lambda"), Activation::tanh, 3, 4};
    return ad::sum(ad::hlinear(lift(L, "x"), hv, kK));
  };
  const auto rep = ad::finite_diff_check(f, st, 1e-5, 6, 2);
  EXPECT_LE(rep.max_rel_error(), 1e-5);

  std::set<std::string> seen;
  for (const auto& l : rep.leaves) {
    EXPECT_TRUE(seen.insert(l.path).second) << l.path;
    EXPECT_EQ(l.directions, 6);
  }
  EXPECT_EQ(seen.size(), st.leaves().size());
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  ParamStore st = three_points(1);
  auto f = [](ad::Tape&, const ad::Leaves& L) { return ad::sum(L.at("a")); };
  EXPECT_THROW(ad::finite_diff_check(f, st, 0.0, 1), ParameterError);
}

// Every registered primitive in isolation, along every coordinate axis.
class PrimitiveFd : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveFd, MatchesCentralDifferences) {
  CounterRng rng(7);
  ParamStore st = three_points(7);
  auto hp = HLinearParams::init(3, 4, rng, Activation::tanh);
  hp.v = (Vec(4) << 0.2, -0.1, 0.25, 0.05).finished();
  hp.b = (Vec(4) << -0.1, 0.15, 0.05, 0.1).finished();
  st.add("W", Tensor::matrix(hp.W));
  st.add("v", Tensor::vector(hp.v));
  st.add("bb", Tensor::vector(hp.b));
  st.add("bp", Tensor::scalar(0.1));
  st.add("ll", Tensor::scalar(0.3));
  st.add("w", Tensor::vector((Vec(3) << 1.2, 0.7, 1.9).finished()));

  std::vector<ad::LossFn> ops = {
      [](ad::Tape&, const ad::Leaves& L) { return ad::inner(lift(L, "a"), lift(L, "b")); },
      [](ad::Tape&, const ad::Leaves& L) { return ad::distance(lift(L, "a"), lift(L, "b"), kK); },
      [](ad::Tape&, const ad::Leaves& L) {
        const auto g = ad::log_map(lift(L, "a"), lift(L, "b"), kK);
        return ad::dot(g, ad::scale(g, 1.7));
      },
      [](ad::Tape&, const ad::Leaves& L) { return ad::sum(ad::log_map(lift(L, "a"), lift(L, "b"), kK)); },
      [](ad::Tape&, const ad::Leaves& L) {
        const auto x = lift(L, "a");
        return ad::sum(ad::exp_map(x, ad::scale(ad::log_map(x, lift(L, "c"), kK), 0.5), kK));
      },
      [](ad::Tape&, const ad::Leaves& L) {
        const auto x = lift(L, "a"), y = lift(L, "b");
        return ad::sum(ad::transport(x, y, ad::log_map(x, lift(L, "c"), kK), kK));
      },
      [](ad::Tape&, const ad::Leaves& L) { return ad::sum(ad::translate(lift(L, "a"), lift(L, "b"), lift(L, "c"), kK)); },
      [](ad::Tape&, const ad::Leaves& L) {
        return ad::distance(ad::ominus(lift(L, "c"), lift(L, "a"), kK), lift(L, "b"), kK);
      },
      [](ad::Tape&, const ad::Leaves& L) {
        const ad::HLinearVars hv{L.at("W"), L.at("v"), L.at("bb"), L.at("bp"), L.at("ll"), Activation::tanh, 3, 4};
        return ad::sum(ad::hlinear(lift(L, "a"), hv, kK));
      },
      [](ad::Tape&, const ad::Leaves& L) {
        const auto c = ad::hcent({lift(L, "a"), lift(L, "b"), lift(L, "c")}, L.at("w"), kK);
        return ad::dot(c, ad::scale(c, 0.3));
      },
      [](ad::Tape&, const ad::Leaves& L) {
        return ad::sum(ad::hcent({lift(L, "a"), lift(L, "b"), lift(L, "c")}, L.at("w"), kK));
      },
      [](ad::Tape& t, const ad::Leaves& L) {
        const auto w = ad::attention_row(lift(L, "a"), {lift(L, "b"), lift(L, "c")}, 3, kK);
        return ad::dot(w, t.constant(Vec::LinSpaced(2, 1, 3)));
      },
      [](ad::Tape&, const ad::Leaves& L) {
        return ad::softmax_cross_entropy(ad::scale(ad::hcdist(lift(L, "a"), {lift(L, "b"), lift(L, "c")}, kK), -1), 1);
      },
  };
  const auto rep = ad::finite_diff_check(ops.at(GetParam()), st, 1e-5, 0);
  for (const auto& l : rep.leaves)
    EXPECT_LE(l.max_rel_error, 1e-4) << l.path << " ad " << l.ad_at_max << " fd " << l.fd_at_max;
}

INSTANTIATE_TEST_SUITE_P(Ops, PrimitiveFd, ::testing::Range(0, 13));

TEST(FiniteDiff, HKConvLayerInIsolation) {
  CounterRng rng(21);
  ManifoldConfig mc = space(3);
  const KernelSet ks = random_kernels(3, 3, 5, mc);
  ParamStore st;
  for (int i = 0; i < 4; ++i) st.add("p" + std::to_string(i), Tensor::vector(0.8 * random_point(rng, mc).spatial()));
  for (int k = 0; k < 3; ++k) {
    auto h = HLinearParams::init(3, 2, rng, Activation::tanh);
    const std::string pre = "k" + std::to_string(k) + "/";
    st.add(pre + "W", Tensor::matrix(h.W));
    st.add(pre + "v", Tensor::vector(Vec::Constant(4, 0.1 * (k + 1))));
    st.add(pre + "b", Tensor::vector(Vec::Constant(2, 0.05)));
    st.add(pre + "b_prime", Tensor::scalar(0.1));
    st.add(pre + "log_lambda", Tensor::scalar(0.2));
  }
  for (Pooling pool : {Pooling::uniform, Pooling::attention})
    for (ConvMode mode : {ConvMode::relative, ConvMode::direct}) {
      auto f = [&](ad::Tape&, const ad::Leaves& L) {
        ad::HKConvVars p;
        p.kernels = &ks;
        p.mode = mode;
        p.pooling = pool;
        for (int k = 0; k < 3; ++k) {
          const std::string pre = "k" + std::to_string(k) + "/";
          p.sublayers.push_back({L.at(pre + "W"), L.at(pre + "v"), L.at(pre + "b"), L.at(pre + "b_prime"),
                                 L.at(pre + "log_lambda"), Activation::tanh, 3, 2});
        }
        const auto y = ad::hkconv(ad::embed_euclidean(L.at("p0"), kK),
                                  {ad::embed_euclidean(L.at("p1"), kK), ad::embed_euclidean(L.at("p2"), kK),
                                   ad::embed_euclidean(L.at("p3"), kK)},
                                  p, kK);
        return ad::sum(y);
      };
      const auto rep = ad::finite_diff_check(f, st, 1e-5, 0);
      EXPECT_LE(rep.max_rel_error(), 1e-4) << to_string(pool) << " " << to_string(mode);
    }
}

TEST(FiniteDiff, TwoLayerNetworkOnThirtyNodeGraph) {
  const GraphBatch data = synth_trees_vs_random(2, 15, 3);
  ASSERT_EQ(data.num_nodes(), 30);
  HKNConfig cfg;
  cfg.K = 3;
  cfg.hidden_dim = 4;
  cfg.kernel_source = KernelSource::random;
  cfg.seed = 1;
  const HKNModel m = build_hkn(cfg, data.num_features(), 2);
  const std::vector<int> items = {0, 1};
  auto f = [&](ad::Tape& t, const ad::Leaves& L) { return hkn_loss(t, L, m, data, items); };
  const auto rep = ad::finite_diff_check(f, m.params, 1e-5, 0);
  EXPECT_EQ(rep.leaves.size(), m.params.leaves().size());
  for (const auto& l : rep.leaves)
    EXPECT_LE(l.max_rel_error, 1e-4) << l.path << " ad " << l.ad_at_max << " fd " << l.fd_at_max;
}

TEST(AdamStep, ZeroGradientLeavesParametersUnchanged) {
  ParamStore st = three_points(2);
  const ParamStore before = st;
  Gradients g;
  for (const auto& [path, t] : st.leaves()) g[path] = Vec::Zero(t.data.size());
  for (int i = 0; i < 3; ++i) adam_step(st, g, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  for (const auto& [path, t] : st.leaves()) EXPECT_EQ(t.data, before.at(path).data);
}

TEST(AdamStep, ShapeMismatchRejected) {
  ParamStore st = three_points(2);
  Gradients g{{"a", Vec::Ones(5)}};
  EXPECT_THROW(adam_step(st, g, AdamConfig{}), DimensionError);
}

TEST(AdamStep, DecoupledWeightDecay) {
  ParamStore st;
  st.add("x", Tensor::vector(Vec::Constant(1, 2.0)));
  adam_step(st, {{"x", Vec::Zero(1)}}, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
  EXPECT_NEAR(st.at("x").data[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(AdamStep, TrajectoriesBitIdentical) {
  auto run = [] {
    ParamStore st = three_points(9);
    auto f = [](ad::Tape&, const ad::Leaves& L) { return ad::distance(lift(L, "a"), lift(L, "b"), kK); };
    for (int i = 0; i < 20; ++i) adam_step(st, ad::grad(f, st), AdamConfig{0.01});
    return st;
  };
  const ParamStore a = run(), b = run();
  for (const auto& [path, t] : a.leaves()) EXPECT_EQ(t.data, b.at(path).data);
}

TEST(RgdStep, ZeroGradientKeepsPoint) {
  CounterRng rng(1);
  const LorentzPoint x = random_point(rng, space(2));
  const LorentzPoint y = rgd_step(x, TangentVector{x, Vec::Zero(3)}, 0.3);
  EXPECT_EQ(y.coords(), x.coords());
}

TEST(RgdStep, RejectsNonTangentGradient) {
  const LorentzPoint o = origin(space(2));
  EXPECT_THROW(rgd_step(o, TangentVector{o, (Vec(3) << 1.0, 0.0, 0.0).finished()}, 0.1), Error);
}
