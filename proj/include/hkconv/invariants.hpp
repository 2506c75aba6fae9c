#pragma once

#include "hkconv/io.hpp"
#include "hkconv/kernelgen.hpp"
#include "hkconv/layers.hpp"
#include "hkconv/manifold.hpp"
#include "hkconv/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace hkconv::inv {

struct PropertyResult {
  std::string name;
  std::string suite;
  int trials = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string note;  // exception text when a trial threw
  double seconds = 0.0;
};

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"manifold", "layers", "theorem1", "prop1"};
  return names;
}

/// Faulty transports used to show that the suites can fail.
/// PT_{x->y}(v) with the leading v dropped, as the transport is sometimes
/// printed; it still composes consistently along a single geodesic.
struct CorrectionOnlyTransport {
  static Vec apply(const Vec& x, const Vec& y, const Vec& v, double kappa) {
    return lorentz::transport(x, y, v, kappa) - v;
  }
};
/// PT_{x->y}(v) = v, leaving the vector in the wrong tangent space.
struct DropCorrectionTransport {
  static Vec apply(const Vec&, const Vec&, const Vec& v, double) { return v; }
};

enum class Mutation { none, correction_only, drop_correction };

inline std::string_view to_string(Mutation m) {
  switch (m) {
    case Mutation::correction_only: return "correction-only";
    case Mutation::drop_correction: return "drop-correction";
    default: return "none";
  }
}
inline Mutation mutation_from_string(std::string_view s) {
  if (s == "none") return Mutation::none;
  if (s == "correction-only") return Mutation::correction_only;
  if (s == "drop-correction") return Mutation::drop_correction;
  throw ValidationError("unknown transport mutation '" + std::string(s) + "'");
}

/// Runs `trial(i, rng)` for i < trials and keeps the largest returned error.
template <class F>
PropertyResult run_property(const std::string& suite, const std::string& name, int trials, double tol,
                            std::uint64_t seed, F&& trial) {
  PropertyResult r{name, suite, trials, 0.0, tol, false, "", 0.0};
  const auto t0 = std::chrono::steady_clock::now();
  const CounterRng root = CounterRng(seed).split(suite).split(name);
  try {
    for (int i = 0; i < trials; ++i) {
      CounterRng rng = root.split(static_cast<std::uint64_t>(i));
      const double e = trial(i, rng);
      if (!(e <= r.max_error)) r.max_error = std::isnan(e) ? std::numeric_limits<double>::infinity() : e;
    }
    r.passed = r.max_error <= tol;
  } catch (const std::exception& e) {
    r.note = e.what();
    r.max_error = std::numeric_limits<double>::infinity();
    r.passed = false;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ------------------------------------------------------------------ samplers

/// Point at hyperbolic distance r from o in a uniformly random direction.
inline Vec point_at_radius(CounterRng& rng, int dim, double r, double kappa) {
  Vec z(dim);
  for (int i = 0; i < dim; ++i) z[i] = rng.normal();
  const double n = z.norm();
  if (n == 0.0) return lorentz::origin(dim, kappa);
  z *= r / n;
  return embed_euclidean(z, ManifoldConfig{kappa, dim}).coords();
}

/// Point with distance to o uniform in [0, max_radius].
inline Vec point_within(CounterRng& rng, int dim, double max_radius, double kappa) {
  return point_at_radius(rng, dim, rng.uniform(0.0, max_radius), kappa);
}

inline HLinearParams random_hlinear(int m, int n, CounterRng& rng, Activation act = Activation::identity) {
  HLinearParams p = HLinearParams::init(m, n, rng, act);
  for (Eigen::Index i = 0; i < p.v.size(); ++i) p.v[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b[i] = 0.3 * rng.normal();
  p.b_prime = 0.5 * rng.normal();
  p.log_lambda = rng.uniform(-1.0, 1.5);
  return p;
}

inline HKConvParams random_hkconv(const KernelSet& ks, int n, CounterRng& rng, ConvMode mode = ConvMode::relative,
                                  Pooling pooling = Pooling::uniform) {
  HKConvParams p;
  for (int k = 0; k < ks.K(); ++k) p.sublayers.push_back(random_hlinear(ks.cfg.dim, n, rng));
  p.kernels = ks;
  p.mode = mode;
  p.pooling = pooling;
  return p;
}

inline double residual(const Vec& y, double kappa) { return std::abs(lorentz::constraint_residual(y, kappa)); }

/// Relative coordinate difference max|a - b| / max(1, max|a|).
inline double rel_diff(const Vec& a, const Vec& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, a.cwiseAbs().maxCoeff());
}

inline double bitwise_diff(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double e = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (!(a[i] == b[i])) e = std::max(e, std::isfinite(a[i] - b[i]) ? std::abs(a[i] - b[i]) : 1.0);
  return e;
}

// ------------------------------------------------------------------- suites

struct SuiteOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  double kappa = -1.0;
};

template <class Transport = LorentzTransport>
std::vector<PropertyResult> manifold_suite(const SuiteOptions& opt) {
  const double kappa = opt.kappa;
  const ManifoldConfig cfg{kappa, 3};
  const int T = opt.trials;
  const std::string S = "manifold";
  std::vector<PropertyResult> out;

  out.push_back(run_property(S, "exp_closure", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg);
    const TangentVector v = random_tangent(rng, x, rng.uniform(0.0, 5.0));
    return residual(lorentz::exp(x.coords(), v.vec, kappa), kappa);
  }));
  out.push_back(run_property(S, "log_tangency", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), u = random_point(rng, cfg);
    return std::abs(lorentz::inner(lorentz::log(x.coords(), u.coords(), kappa), x.coords()));
  }));
  out.push_back(run_property(S, "transport_tangency", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), y = random_point(rng, cfg);
    const TangentVector v = random_tangent(rng, x, rng.uniform(0.0, 3.0));
    return std::abs(lorentz::inner(Transport::apply(x.coords(), y.coords(), v.vec, kappa), y.coords()));
  }));
  out.push_back(run_property(S, "log_exp_inverse", T, 1e-8, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg);
    const TangentVector v = random_tangent(rng, x, rng.uniform(0.0, 5.0));
    const Vec back = lorentz::log(x.coords(), lorentz::exp(x.coords(), v.vec, kappa), kappa);
    return (back - v.vec).norm() / (1.0 + v.vec.norm());
  }));
  out.push_back(run_property(S, "exp_log_inverse", T, 1e-8, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), u = random_point(rng, cfg);
    const Vec back = lorentz::exp(x.coords(), lorentz::log(x.coords(), u.coords(), kappa), kappa);
    return lorentz::distance(back, u.coords(), kappa);
  }));
  out.push_back(run_property(S, "transport_isometry", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), y = random_point(rng, cfg);
    const Vec u = random_tangent(rng, x, rng.uniform(0.0, 3.0)).vec;
    const Vec v = random_tangent(rng, x, rng.uniform(0.0, 3.0)).vec;
    const Vec pu = Transport::apply(x.coords(), y.coords(), u, kappa);
    const Vec pv = Transport::apply(x.coords(), y.coords(), v, kappa);
    return std::abs(lorentz::inner(pu, pv) - lorentz::inner(u, v)) / std::max(1.0, std::abs(lorentz::inner(u, v)));
  }));
  out.push_back(run_property(S, "transport_identity", T, 1e-12, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg);
    const Vec v = random_tangent(rng, x, rng.uniform(0.0, 3.0)).vec;
    return rel_diff(v, Transport::apply(x.coords(), x.coords(), v, kappa));
  }));
  out.push_back(run_property(S, "translate_isometry", T, 1e-8, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), y = random_point(rng, cfg);
    const LorentzPoint a = random_point(rng, cfg), b = random_point(rng, cfg);
    const Vec ta = lorentz::translate<Transport>(x.coords(), y.coords(), a.coords(), kappa);
    const Vec tb = lorentz::translate<Transport>(x.coords(), y.coords(), b.coords(), kappa);
    const double d0 = lorentz::distance(a.coords(), b.coords(), kappa);
    return std::abs(lorentz::distance(ta, tb, kappa) - d0) / std::max(1.0, d0);
  }));
  out.push_back(run_property(S, "ominus_distance", T, 1e-8, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), u = random_point(rng, cfg);
    const Vec rel = lorentz::ominus<Transport>(u.coords(), x.coords(), kappa);
    return std::abs(lorentz::distance(lorentz::origin(cfg.dim, kappa), rel, kappa) -
                    lorentz::distance(x.coords(), u.coords(), kappa));
  }));
  out.push_back(run_property(S, "ominus_self_is_origin", T, 1e-12, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg);
    return rel_diff(lorentz::origin(cfg.dim, kappa), lorentz::ominus<Transport>(x.coords(), x.coords(), kappa));
  }));
  out.push_back(run_property(S, "metric_axioms", T, 1e-8, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), y = random_point(rng, cfg), z = random_point(rng, cfg);
    const double dxy = lorentz::distance(x.coords(), y.coords(), kappa);
    const double dyx = lorentz::distance(y.coords(), x.coords(), kappa);
    const double dyz = lorentz::distance(y.coords(), z.coords(), kappa);
    const double dxz = lorentz::distance(x.coords(), z.coords(), kappa);
    double e = std::max(0.0, -dxy);
    e = std::max(e, std::abs(dxy - dyx));
    return std::max(e, dxz - dxy - dyz);
  }));
  out.push_back(run_property(S, "log_norm_is_distance", T, 1e-8, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = random_point(rng, cfg), u = random_point(rng, cfg);
    const Vec v = lorentz::log(x.coords(), u.coords(), kappa);
    const double d = lorentz::distance(x.coords(), u.coords(), kappa);
    return std::abs(std::sqrt(std::max(0.0, lorentz::inner(v, v))) - d) / std::max(1.0, d);
  }));
  return out;
}

/// Shared fixtures of the layer-level suites.
struct LayerFixture {
  double kappa = -1.0;
  int m = 3;
  int n = 3;
  KernelSet kernels;

  static LayerFixture make(const SuiteOptions& opt, int K = 4, int m = 3, int n = 3) {
    LayerFixture f;
    f.kappa = opt.kappa;
    f.m = m;
    f.n = n;
    f.kernels = optimized_kernels(K, m, opt.seed, opt.kappa);
    return f;
  }
};

/// One random composition of the manifold and layer operations in L^dim.
/// Inputs are drawn from the ball d(o, .) <= max_radius; an output outside
/// the ball is not checked and is replaced by a fresh input. Returns the
/// worst constraint residual among the checked outputs.
template <class Transport = LorentzTransport>
double random_composition(CounterRng& rng, const LayerFixture& f, double max_radius = 10.0, int steps = 3) {
  const double kappa = f.kappa;
  const int dim = f.m;
  auto fresh = [&] { return point_within(rng, dim, max_radius, kappa); };
  auto inside = [&](const Vec& y) {
    return lorentz::distance(lorentz::origin(dim, kappa), y, kappa) <= max_radius;
  };
  Vec x = fresh();
  double worst = residual(x, kappa);
  for (int s = 0; s < steps; ++s) {
    Vec y;
    switch (rng.below(7)) {
      case 0: {  // exp
        const Vec v = random_tangent(rng, LorentzPoint::unchecked(x, kappa), rng.uniform(0.0, 5.0)).vec;
        y = lorentz::exp(x, v, kappa);
        break;
      }
      case 1: {  // exp(log): the log output is consumed by exp
        const Vec u = fresh();
        y = lorentz::exp(x, 0.5 * lorentz::log(x, u, kappa), kappa);
        break;
      }
      case 2: {  // exp after transport
        const Vec z = fresh();
        const Vec v = random_tangent(rng, LorentzPoint::unchecked(x, kappa), rng.uniform(0.0, 3.0)).vec;
        y = lorentz::exp(z, Transport::apply(x, z, v, kappa), kappa);
        break;
      }
      case 3: {
        const Vec a = fresh(), b = fresh();
        y = lorentz::translate<Transport>(a, b, x, kappa);
        break;
      }
      case 4: y = lorentz::ominus<Transport>(x, fresh(), kappa); break;
      case 5: {
        y = detail::hlinear_raw(x, random_hlinear(dim, dim, rng), kappa);
        break;
      }
      default: {
        const int N = 1 + static_cast<int>(rng.below(4));
        std::vector<Vec> pts{x};
        for (int i = 1; i < N; ++i) pts.push_back(fresh());
        std::vector<const Vec*> ptr;
        for (const auto& p : pts) ptr.push_back(&p);
        if (rng.below(2) == 0) {
          Vec w(N);
          for (int i = 0; i < N; ++i) w[i] = rng.uniform(0.05, 1.0);
          y = detail::hcent_raw(ptr, w, kappa);
        } else {
          const HKConvParams p = random_hkconv(f.kernels, dim, rng);
          y = detail::hkconv_raw<Transport>(x, ptr, p, nullptr, kappa);
        }
        break;
      }
    }
    if (inside(y)) {
      worst = std::max(worst, residual(y, kappa));
      x = y;
    } else {
      x = fresh();
    }
  }
  return worst;
}

/// Straight transcription of the relative-mode HKConv through the typed
/// public operations, used as an independent oracle.
inline LorentzPoint naive_hkconv(const LorentzPoint& x, const std::vector<LorentzPoint>& nbrs, const HKConvParams& p) {
  const int K = p.kernels.K();
  std::vector<const LorentzPoint*> sorted;
  for (const auto& q : nbrs) sorted.push_back(&q);
  std::stable_sort(sorted.begin(), sorted.end(), [](const LorentzPoint* a, const LorentzPoint* b) {
    return std::lexicographical_compare(a->coords().data(), a->coords().data() + a->coords().size(),
                                        b->coords().data(), b->coords().data() + b->coords().size());
  });
  std::vector<LorentzPoint> xprime;
  for (const LorentzPoint* xi : sorted) {
    const LorentzPoint rel = ominus(*xi, x);
    std::vector<LorentzPoint> xik;
    WeightVector nu{Vec(K)};
    for (int k = 0; k < K; ++k) {
      xik.push_back(hlinear(rel, p.sublayers[k]));
      nu.values[k] = distance(rel, p.kernels.points[k]);
    }
    xprime.push_back(hcent(xik, nu));
  }
  return hcent(xprime, WeightVector{Vec::Ones(static_cast<Eigen::Index>(xprime.size()))});
}

template <class Transport = LorentzTransport>
std::vector<PropertyResult> layers_suite(const SuiteOptions& opt) {
  const LayerFixture f = LayerFixture::make(opt);
  const double kappa = f.kappa;
  const int T = opt.trials;
  const std::string S = "layers";
  std::vector<PropertyResult> out;

  out.push_back(run_property(S, "hlinear_closure", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    const Vec x = point_within(rng, f.m, 10.0, kappa);
    return residual(detail::hlinear_raw(x, random_hlinear(f.m, 5, rng), kappa), kappa);
  }));
  out.push_back(run_property(S, "hlinear_spatial_norm", T, 1e-12, opt.seed, [&](int, CounterRng& rng) {
    const Vec x = point_within(rng, f.m, 5.0, kappa);
    const HLinearParams p = random_hlinear(f.m, 5, rng);
    const Vec y = detail::hlinear_raw(x, p, kappa);
    const double r = p.lambda() * detail::sigmoid(p.v.dot(x) + p.b_prime);
    return std::abs(y.tail(y.size() - 1).norm() - r) / r;
  }));
  out.push_back(run_property(S, "hcent_closure", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    std::vector<Vec> pts;
    std::vector<const Vec*> ptr;
    const int N = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < N; ++i) pts.push_back(point_within(rng, f.m, 10.0, kappa));
    for (const auto& p : pts) ptr.push_back(&p);
    Vec w(N);
    for (int i = 0; i < N; ++i) w[i] = rng.uniform(0.0, 1.0);
    w[0] += 0.1;
    return residual(detail::hcent_raw(ptr, w, kappa), kappa);
  }));
  out.push_back(run_property(S, "hcent_weight_scale", T, 0.0, opt.seed, [&](int, CounterRng& rng) {
    std::vector<Vec> pts;
    std::vector<const Vec*> ptr;
    const int N = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < N; ++i) pts.push_back(point_within(rng, f.m, 5.0, kappa));
    for (const auto& p : pts) ptr.push_back(&p);
    Vec w(N);
    for (int i = 0; i < N; ++i) w[i] = static_cast<double>(1 + rng.below(100));
    return bitwise_diff(detail::hcent_raw(ptr, w, kappa), detail::hcent_raw(ptr, 3.0 * w, kappa));
  }));
  out.push_back(run_property(S, "hkconv_closure", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    const Vec x = point_within(rng, f.m, 10.0, kappa);
    std::vector<Vec> nb;
    std::vector<const Vec*> ptr;
    const int N = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < N; ++i) nb.push_back(point_within(rng, f.m, 10.0, kappa));
    for (const auto& p : nb) ptr.push_back(&p);
    const auto mode = rng.below(2) ? ConvMode::relative : ConvMode::direct;
    const auto pool = rng.below(2) ? Pooling::uniform : Pooling::attention;
    const HKConvParams p = random_hkconv(f.kernels, 4, rng, mode, pool);
    return residual(detail::hkconv_raw<Transport>(x, ptr, p, nullptr, kappa), kappa);
  }));
  out.push_back(run_property(S, "hkconv_self_neighborhood", T, 1e-12, opt.seed, [&](int, CounterRng& rng) {
    const Vec x = point_within(rng, f.m, 5.0, kappa);
    const HKConvParams p = random_hkconv(f.kernels, 4, rng);
    const Vec y = detail::hkconv_raw<Transport>(x, {&x}, p, nullptr, kappa);
    const Vec o = lorentz::origin(f.m, kappa);
    std::vector<Vec> outs;
    Vec nu(p.kernels.K());
    for (int k = 0; k < p.kernels.K(); ++k) {
      outs.push_back(detail::hlinear_raw(o, p.sublayers[k], kappa));
      nu[k] = lorentz::distance(o, p.kernels.points[k].coords(), kappa);
    }
    std::vector<const Vec*> ptr;
    for (const auto& v : outs) ptr.push_back(&v);
    return rel_diff(detail::hcent_raw(ptr, nu, kappa), y);
  }));
  out.push_back(run_property(S, "hkconv_matches_composition", T, 1e-10, opt.seed, [&](int, CounterRng& rng) {
    const LorentzPoint x = LorentzPoint::unchecked(point_within(rng, f.m, 4.0, kappa), kappa);
    std::vector<LorentzPoint> nb;
    const int N = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < N; ++i) nb.push_back(LorentzPoint::unchecked(point_within(rng, f.m, 4.0, kappa), kappa));
    const HKConvParams p = random_hkconv(f.kernels, 4, rng);
    return rel_diff(naive_hkconv(x, nb, p).coords(), hkconv<Transport>(x, nb, p).coords());
  }));
  out.push_back(run_property(S, "attention_rows_normalized", T, 1e-12, opt.seed, [&](int, CounterRng& rng) {
    std::vector<LorentzPoint> q, k;
    const int A = 1 + static_cast<int>(rng.below(4)), B = 1 + static_cast<int>(rng.below(6));
    for (int i = 0; i < A; ++i) q.push_back(LorentzPoint::unchecked(point_within(rng, f.m, 5.0, kappa), kappa));
    for (int i = 0; i < B; ++i) k.push_back(LorentzPoint::unchecked(point_within(rng, f.m, 5.0, kappa), kappa));
    const Mat w = attention_weights(q, k, f.m);
    return (w.rowwise().sum().array() - 1.0).abs().maxCoeff();
  }));
  out.push_back(run_property(S, "closure_compositions", T, 1e-9, opt.seed, [&](int, CounterRng& rng) {
    return random_composition<Transport>(rng, f);
  }));
  return out;
}

/// Relative disagreement between hkconv(x; N) and hkconv(T(x); T(N)) with
/// T = T_{x->y} and y = exp_o(t log_o x).
template <class Transport = LorentzTransport>
double translation_gap(CounterRng& rng, const LayerFixture& f, const HKConvParams& p) {
  const double kappa = f.kappa;
  const Vec o = lorentz::origin(f.m, kappa);
  const Vec x = point_within(rng, f.m, 3.0, kappa);
  std::vector<Vec> nb;
  const int N = 1 + static_cast<int>(rng.below(6));
  for (int i = 0; i < N; ++i) nb.push_back(point_within(rng, f.m, 3.0, kappa));
  const double t = rng.uniform(0.0, 1.0);
  const Vec y = lorentz::exp(o, t * lorentz::log(o, x, kappa), kappa);
  std::vector<Vec> tnb;
  for (const auto& u : nb) tnb.push_back(lorentz::translate<Transport>(x, y, u, kappa));
  const Vec tx = lorentz::translate<Transport>(x, y, x, kappa);
  std::vector<const Vec*> a, b;
  for (const auto& u : nb) a.push_back(&u);
  for (const auto& u : tnb) b.push_back(&u);
  const Vec out1 = detail::hkconv_raw<Transport>(x, a, p, nullptr, kappa);
  const Vec out2 = detail::hkconv_raw<Transport>(tx, b, p, nullptr, kappa);
  return rel_diff(out1, out2);
}

template <class Transport = LorentzTransport>
std::vector<PropertyResult> theorem1_suite(const SuiteOptions& opt) {
  const LayerFixture f = LayerFixture::make(opt);
  const std::string S = "theorem1";
  std::vector<PropertyResult> out;
  out.push_back(run_property(S, "local_translation_invariance", opt.trials, 1e-6, opt.seed, [&](int, CounterRng& rng) {
    const HKConvParams p = random_hkconv(f.kernels, 4, rng);
    return translation_gap<Transport>(rng, f, p);
  }));
  out.push_back(
      run_property(S, "local_translation_invariance_attention", opt.trials, 1e-6, opt.seed, [&](int, CounterRng& rng) {
        const HKConvParams p = random_hkconv(f.kernels, 4, rng, ConvMode::relative, Pooling::attention);
        return translation_gap<Transport>(rng, f, p);
      }));
  return out;
}

// ------------------------------------------------------------ permutations

/// Random graph on N nodes with every node's neighbor set given in ascending
/// index order, isolated nodes falling back to themselves.
inline std::vector<std::vector<int>> random_neighborhoods(CounterRng& rng, int N, double p) {
  std::vector<std::vector<int>> nb(N);
  for (int a = 0; a < N; ++a)
    for (int b = a + 1; b < N; ++b)
      if (rng.uniform() < p) {
        nb[a].push_back(b);
        nb[b].push_back(a);
      }
  for (int v = 0; v < N; ++v) {
    std::sort(nb[v].begin(), nb[v].end());
    if (nb[v].empty()) nb[v].push_back(v);
  }
  return nb;
}

inline std::vector<int> random_permutation(CounterRng& rng, int N) {
  std::vector<int> pi(N);
  std::iota(pi.begin(), pi.end(), 0);
  for (int i = N; i > 1; --i) std::swap(pi[i - 1], pi[rng.below(static_cast<std::uint64_t>(i))]);
  return pi;
}

/// Node-wise HKConv on N random points and on the same points relabelled by
/// pi; returns the largest coordinate disagreement (0 when bitwise equal).
template <class Transport = LorentzTransport>
double nodewise_permutation_gap(CounterRng& rng, const LayerFixture& f) {
  const double kappa = f.kappa;
  const int N = 5 + static_cast<int>(rng.below(10));
  std::vector<Vec> X;
  for (int i = 0; i < N; ++i) X.push_back(point_within(rng, f.m, 4.0, kappa));
  const auto nb = random_neighborhoods(rng, N, 0.35);
  const HKConvParams p =
      random_hkconv(f.kernels, f.n, rng, ConvMode::relative, rng.below(2) ? Pooling::uniform : Pooling::attention);
  const auto pi = random_permutation(rng, N);

  auto run = [&](const std::vector<Vec>& pts, const std::vector<std::vector<int>>& nbs) {
    std::vector<Vec> out;
    for (int v = 0; v < N; ++v) {
      std::vector<const Vec*> ptr;
      for (int u : nbs[v]) ptr.push_back(&pts[u]);
      out.push_back(detail::hkconv_raw<Transport>(pts[v], ptr, p, nullptr, kappa));
    }
    return out;
  };
  std::vector<Vec> PX(N);
  std::vector<std::vector<int>> Pnb(N);
  for (int v = 0; v < N; ++v) {
    PX[pi[v]] = X[v];
    for (int u : nb[v]) Pnb[pi[v]].push_back(pi[u]);
    std::sort(Pnb[pi[v]].begin(), Pnb[pi[v]].end());
  }
  const auto out = run(X, nb);
  const auto pout = run(PX, Pnb);
  double e = 0.0;
  for (int v = 0; v < N; ++v) e = std::max(e, bitwise_diff(out[v], pout[pi[v]]));
  return e;
}

/// Random single-graph dataset for end-to-end permutation checks.
inline GraphBatch random_graph_batch(CounterRng& rng, Task task, int N, int F, int C) {
  GraphBatch g;
  g.task = task;
  g.features.resize(N, F);
  for (int v = 0; v < N; ++v)
    for (int j = 0; j < F; ++j) g.features(v, j) = rng.normal();
  const auto nb = random_neighborhoods(rng, N, 0.3);
  for (int a = 0; a < N; ++a)
    for (int b : nb[a])
      if (a < b) g.edges.emplace_back(a, b);
  g.graph_ids.assign(N, 0);
  const int L = task == Task::graph ? 1 : N;
  for (int i = 0; i < L; ++i) g.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(C))));
  g.train.resize(L);
  std::iota(g.train.begin(), g.train.end(), 0);
  g.finalize();
  return g;
}

inline GraphBatch permute_nodes(const GraphBatch& g, const std::vector<int>& pi) {
  GraphBatch p;
  p.task = g.task;
  p.features.resize(g.features.rows(), g.features.cols());
  p.graph_ids.assign(g.num_nodes(), 0);
  for (int v = 0; v < g.num_nodes(); ++v) {
    p.features.row(pi[v]) = g.features.row(v);
    p.graph_ids[pi[v]] = g.graph_ids[v];
  }
  for (const auto& [a, b] : g.edges) p.edges.emplace_back(pi[a], pi[b]);
  if (g.task == Task::node) {
    p.labels.assign(g.labels.size(), 0);
    for (int v = 0; v < g.num_nodes(); ++v) p.labels[pi[v]] = g.labels[v];
    for (int v : g.train) p.train.push_back(pi[v]);
  } else {
    p.labels = g.labels;
    p.train = g.train;
  }
  p.finalize();
  return p;
}

inline std::vector<Vec> model_logits(const HKNModel& m, const GraphBatch& data, const std::vector<int>& items) {
  ad::Tape t;
  const auto leaves = ad::bind(t, m.params, false);
  std::vector<Vec> out;
  for (const auto& l : hkn_logits(t, leaves, m, data, items)) out.push_back(l.value());
  return out;
}

/// Node-task logits of a relabelled graph are the relabelled logits.
inline double node_logits_permutation_gap(CounterRng& rng, std::uint64_t seed) {
  const int N = 8 + static_cast<int>(rng.below(12));
  const GraphBatch g = random_graph_batch(rng, Task::node, N, 4, 3);
  HKNConfig cfg;
  cfg.task = Task::node;
  cfg.K = 3;
  cfg.hidden_dim = 4;
  cfg.kernel_source = KernelSource::random;
  cfg.pooling = rng.below(2) ? Pooling::uniform : Pooling::attention;
  cfg.seed = seed + rng.below(1000);
  const HKNModel m = build_hkn(cfg, 4, 3);
  const auto pi = random_permutation(rng, N);
  const GraphBatch pg = permute_nodes(g, pi);
  std::vector<int> all(N);
  std::iota(all.begin(), all.end(), 0);
  const auto a = model_logits(m, g, all);
  const auto b = model_logits(m, pg, all);
  double e = 0.0;
  for (int v = 0; v < N; ++v) e = std::max(e, bitwise_diff(a[v], b[pi[v]]));
  return e;
}

/// Graph-task logits do not depend on the order of the nodes of a graph.
inline double graph_logits_permutation_gap(CounterRng& rng, std::uint64_t seed) {
  const int N = 8 + static_cast<int>(rng.below(12));
  const GraphBatch g = random_graph_batch(rng, Task::graph, N, 4, 2);
  HKNConfig cfg;
  cfg.K = 3;
  cfg.hidden_dim = 4;
  cfg.kernel_source = KernelSource::random;
  cfg.seed = seed + rng.below(1000);
  const HKNModel m = build_hkn(cfg, 4, 2);
  const GraphBatch pg = permute_nodes(g, random_permutation(rng, N));
  return bitwise_diff(model_logits(m, g, {0})[0], model_logits(m, pg, {0})[0]);
}

template <class Transport = LorentzTransport>
std::vector<PropertyResult> prop1_suite(const SuiteOptions& opt) {
  const LayerFixture f = LayerFixture::make(opt, 4, 3, 4);
  const std::string S = "prop1";
  std::vector<PropertyResult> out;
  out.push_back(run_property(S, "hkconv_permutation_equivariance", opt.trials, 0.0, opt.seed,
                             [&](int, CounterRng& rng) { return nodewise_permutation_gap<Transport>(rng, f); }));
  out.push_back(run_property(S, "node_logits_permutation_equivariance", opt.trials, 0.0, opt.seed,
                             [&](int, CounterRng& rng) { return node_logits_permutation_gap(rng, opt.seed); }));
  out.push_back(run_property(S, "graph_logits_node_order_invariance", opt.trials, 0.0, opt.seed,
                             [&](int, CounterRng& rng) { return graph_logits_permutation_gap(rng, opt.seed); }));
  return out;
}

/// Runs one suite by name, or every suite for "all".
template <class Transport = LorentzTransport>
std::vector<PropertyResult> run_suites(const std::string& suite, const SuiteOptions& opt) {
  if (opt.trials < 1) throw ParameterError("invariants: trials must be positive");
  std::vector<PropertyResult> out;
  auto append = [&](std::vector<PropertyResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  bool known = suite == "all";
  if (suite == "all" || suite == "manifold") append(manifold_suite<Transport>(opt)), known = true;
  if (suite == "all" || suite == "layers") append(layers_suite<Transport>(opt)), known = true;
  if (suite == "all" || suite == "theorem1") append(theorem1_suite<Transport>(opt)), known = true;
  if (suite == "all" || suite == "prop1") append(prop1_suite<Transport>(opt)), known = true;
  if (!known) throw ParameterError("invariants: unknown suite '" + suite + "'");
  return out;
}

inline std::vector<PropertyResult> run_suites(const std::string& suite, const SuiteOptions& opt, Mutation m) {
  switch (m) {
    case Mutation::correction_only: return run_suites<CorrectionOnlyTransport>(suite, opt);
    case Mutation::drop_correction: return run_suites<DropCorrectionTransport>(suite, opt);
    default: return run_suites<LorentzTransport>(suite, opt);
  }
}

inline int count_failures(const std::vector<PropertyResult>& rs) {
  return static_cast<int>(std::count_if(rs.begin(), rs.end(), [](const PropertyResult& r) { return !r.passed; }));
}

inline io::Json report_to_json(const std::vector<PropertyResult>& rs, const SuiteOptions& opt,
                               Mutation mutation = Mutation::none) {
  io::Json j;
  j["version"] = std::string(kVersion);
  j["seed"] = opt.seed;
  j["trials"] = opt.trials;
  j["curvature"] = opt.kappa;
  j["transport_mutation"] = std::string(to_string(mutation));
  j["failed"] = count_failures(rs);
  io::Json props = io::Json::array();
  for (const auto& r : rs) {
    io::Json p;
    p["suite"] = r.suite;
    p["name"] = r.name;
    p["trials"] = r.trials;
    // Non-finite errors are reported as null.
    if (std::isfinite(r.max_error))
      p["max_error"] = r.max_error;
    else
      p["max_error"] = nullptr;
    p["tolerance"] = r.tolerance;
    p["passed"] = r.passed;
    p["seconds"] = r.seconds;
    if (!r.note.empty()) p["note"] = r.note;
    props.push_back(std::move(p));
  }
  j["properties"] = std::move(props);
  return j;
}

}  // namespace hkconv::inv
