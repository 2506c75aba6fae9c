#pragma once

// Kernel point placement. K points near the origin of L^m are chosen by
// minimizing
//
//   L = sum_k sum_{l != k} 1 / d(x_l, x_k) + sum_k d(o, x_k)
//
// with Riemannian gradient descent (ordered pairs, so every unordered pair is
// counted twice in the first term).

#include "hkconv/manifold.hpp"
#include "hkconv/optim.hpp"

#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace hkconv {

enum class KernelProvenance { optimized, random_wrapped_normal, loaded };

inline std::string_view to_string(KernelProvenance p) {
  switch (p) {
    case KernelProvenance::optimized: return "optimized";
    case KernelProvenance::random_wrapped_normal: return "random_wrapped_normal";
    case KernelProvenance::loaded: return "loaded";
  }
  return "loaded";
}

inline KernelProvenance provenance_from_string(std::string_view s) {
  if (s == "optimized") return KernelProvenance::optimized;
  if (s == "random_wrapped_normal") return KernelProvenance::random_wrapped_normal;
  if (s == "loaded") return KernelProvenance::loaded;
  throw ValidationError("unknown kernel provenance '" + std::string(s) + "'");
}

struct KernelSet {
  std::vector<LorentzPoint> points;
  ManifoldConfig cfg;
  KernelProvenance provenance = KernelProvenance::optimized;

  [[nodiscard]] int K() const { return static_cast<int>(points.size()); }

  /// Throws ValidationError unless every point is on the manifold and all points are distinct.
  void validate() const {
    cfg.validate();
    if (points.empty()) throw ValidationError("KernelSet: no points");
    if (provenance == KernelProvenance::optimized && K() < 2)
      throw ValidationError("KernelSet: optimized kernels need K >= 2");
    for (int k = 0; k < K(); ++k) {
      const auto& p = points[k];
      if (p.dim() != cfg.dim || p.curvature() != cfg.curvature)
        throw ValidationError("KernelSet: point " + std::to_string(k) + " has the wrong dimension or curvature");
      if (!p.coords().allFinite() || !(p.time() > 0.0) ||
          p.constraint_error() > cfg.tol_manifold * std::max(1.0, p.time() * p.time()))
        throw ValidationError("KernelSet: point " + std::to_string(k) + " violates the manifold constraint");
    }
    for (int k = 0; k < K(); ++k)
      for (int l = k + 1; l < K(); ++l)
        if (!(distance(points[k], points[l]) > 0.0))
          throw ValidationError("KernelSet: points " + std::to_string(k) + " and " + std::to_string(l) + " coincide");
  }
};

struct SolverConfig {
  double learning_rate = 1e-4;
  long max_iters = 200000;
  double grad_tol = 1e-6;
  std::uint64_t seed = 0;
  double init_scale = 0.5;
  long log_every = 100;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ParameterError("SolverConfig: learning_rate must be positive");
    if (max_iters <= 0) throw ParameterError("SolverConfig: max_iters must be positive");
    if (!(grad_tol > 0.0)) throw ParameterError("SolverConfig: grad_tol must be positive");
    if (!(init_scale > 0.0)) throw ParameterError("SolverConfig: init_scale must be positive");
    if (log_every <= 0) throw ParameterError("SolverConfig: log_every must be positive");
  }
};

struct SolverLogRow {
  long iter = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct SolverTrace {
  std::vector<SolverLogRow> log;
  long iterations = 0;
  bool converged = false;
  double best_loss = 0.0;
  long best_iter = 0;
  double final_grad_norm = 0.0;  // max tangent-gradient norm at the returned iterate
  double max_loss_increase = 0.0;
  double max_constraint_error = 0.0;
  int jitter_events = 0;
};

struct SolveResult {
  KernelSet kernels;
  SolverTrace trace;
};

namespace detail {

inline constexpr double kDegenerateDistance = 1e-12;
inline constexpr double kDivergenceLoss = 1e6;
inline constexpr double kSeparationGuard = 1e-6;

inline constexpr double kAtOrigin = 1e-12;

struct LossAndGrads {
  double loss = 0.0;
  std::vector<Vec> egrad;  // Euclidean gradients w.r.t. ambient coordinates
  double min_pair_distance = std::numeric_limits<double>::infinity();
  int closest_l = -1;
};

/// `origin_term_grad` false leaves the d(o, .) term out of the gradients.
inline LossAndGrads kernel_loss_and_grads(const std::vector<Vec>& pts, double kappa, bool with_grads,
                                          bool origin_term_grad = true) {
  const int K = static_cast<int>(pts.size());
  const Eigen::Index dim = pts.empty() ? 0 : pts.front().size() - 1;
  const Vec o = lorentz::origin(dim, kappa);
  LossAndGrads out;
  if (with_grads) out.egrad.assign(K, Vec::Zero(dim + 1));

  // Each unordered pair appears twice in the ordered double sum.
  for (int k = 0; k < K; ++k) {
    for (int l = k + 1; l < K; ++l) {
      const double d = lorentz::distance(pts[k], pts[l], kappa);
      if (d < out.min_pair_distance) {
        out.min_pair_distance = d;
        out.closest_l = l;
      }
      if (d < kDegenerateDistance) {
        out.loss = std::numeric_limits<double>::infinity();
        continue;
      }
      out.loss += 2.0 / d;
      if (with_grads) {
        const double coef = -2.0 / (d * d);
        out.egrad[k] += coef * lorentz::distance_grad_first(pts[k], pts[l], kappa);
        out.egrad[l] += coef * lorentz::distance_grad_first(pts[l], pts[k], kappa);
      }
    }
  }
  for (int k = 0; k < K; ++k) {
    const double r = lorentz::distance(o, pts[k], kappa);
    out.loss += r;
    if (with_grads && origin_term_grad && r > kAtOrigin) out.egrad[k] += lorentz::distance_grad_first(pts[k], o, kappa);
  }
  return out;
}

/// Euclidean gradient -> Riemannian gradient at x: raise the index with the
/// metric, then project onto T_x via u - kappa <x,u>_L x.
inline Vec riemannian_from_euclidean(const Vec& x, const Vec& egrad, double kappa) {
  const Vec u = lorentz::metric(egrad);
  return u - kappa * lorentz::inner(x, u) * x;
}

inline std::vector<Vec> coords_of(const KernelSet& ks) {
  std::vector<Vec> pts;
  pts.reserve(ks.points.size());
  for (const auto& p : ks.points) pts.push_back(p.coords());
  return pts;
}

}  // namespace detail

inline double kernel_loss(const KernelSet& kernels) {
  if (kernels.K() < 2) throw ParameterError("kernel_loss: need at least two kernel points");
  const auto lg = detail::kernel_loss_and_grads(detail::coords_of(kernels), kernels.cfg.curvature, false);
  if (lg.min_pair_distance < detail::kDegenerateDistance)
    throw DegenerateError("kernel_loss: coincident kernel points (distance " + std::to_string(lg.min_pair_distance) + ")");
  return lg.loss;
}

inline TangentVector riemannian_grad(const KernelSet& kernels, int k) {
  if (k < 0 || k >= kernels.K()) throw ParameterError("riemannian_grad: kernel index out of range");
  const auto lg = detail::kernel_loss_and_grads(detail::coords_of(kernels), kernels.cfg.curvature, true);
  const auto& x = kernels.points[k];
  return {x, detail::riemannian_from_euclidean(x.coords(), lg.egrad[k], kernels.cfg.curvature)};
}

namespace detail {

/// Moves y toward o by t along their geodesic, stopping at o: the proximal
/// map of t * d(o, .).
inline Vec shrink_toward_origin(const Vec& y, double t, double kappa) {
  const Vec o = lorentz::origin(y.size() - 1, kappa);
  const double r = lorentz::distance(o, y, kappa);
  if (r <= t) return o;
  return lorentz::exp(o, ((r - t) / r) * lorentz::log(o, y, kappa), kappa);
}

/// Largest per-point norm of the minimal Riemannian subgradient. Away from o
/// this is the gradient norm; a point sitting at o contributes
/// max(0, |repulsion gradient| - 1) since d(o, .) has the unit ball as its
/// subdifferential there.
inline double stationarity(const std::vector<Vec>& pts, double kappa) {
  const auto rep = kernel_loss_and_grads(pts, kappa, true, false);
  const Vec o = lorentz::origin(pts.front().size() - 1, kappa);
  double gmax = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    Vec g = rep.egrad[k];
    const bool at_origin = lorentz::distance(o, pts[k], kappa) <= kAtOrigin;
    if (!at_origin) g += lorentz::distance_grad_first(pts[k], o, kappa);
    const Vec rg = riemannian_from_euclidean(pts[k], g, kappa);
    double n = std::sqrt(std::max(0.0, lorentz::inner(rg, rg)));
    if (at_origin) n = std::max(0.0, n - 1.0);
    gmax = std::max(gmax, n);
  }
  return gmax;
}

/// Two points with o on the geodesic segment between them can slide along it
/// without changing the loss. Places the pair symmetrically about o.
inline void center_pair(std::vector<Vec>& pts, double kappa) {
  const Vec o = lorentz::origin(pts[0].size() - 1, kappa);
  const double d = lorentz::distance(pts[0], pts[1], kappa);
  const double r0 = lorentz::distance(o, pts[0], kappa), r1 = lorentz::distance(o, pts[1], kappa);
  if (r0 + r1 - d > 1e-9 * std::max(1.0, d)) return;
  const Vec dir = lorentz::log(o, pts[1], kappa) - lorentz::log(o, pts[0], kappa);
  const double n = std::sqrt(std::max(0.0, lorentz::inner(dir, dir)));
  if (!(n > 0.0)) return;
  pts[0] = lorentz::exp(o, (-0.5 * d / n) * dir, kappa);
  pts[1] = lorentz::exp(o, (0.5 * d / n) * dir, kappa);
}

}  // namespace detail

/// Riemannian gradient descent on the kernel loss. Each step is a gradient
/// step on the repulsion term followed by the proximal map of the d(o, .)
/// term, which agrees with the plain step away from o and lets a point
/// settle exactly on o. Returns the iterate with the lowest recorded loss.
inline SolveResult solve_kernels(int K, int m, const SolverConfig& solver, const ManifoldConfig& base_cfg) {
  if (K < 2) throw ParameterError("solve_kernels: K must be >= 2");
  if (m < 1) throw ParameterError("solve_kernels: m must be >= 1");
  solver.validate();
  ManifoldConfig cfg = base_cfg;
  cfg.dim = m;
  cfg.validate();
  const double kappa = cfg.curvature;

  const CounterRng root(solver.seed);
  const CounterRng init_rng = root.split("init");
  CounterRng jitter_rng = root.split("jitter");
  const LorentzPoint o = origin(cfg);
  const Mat init_cov = solver.init_scale * solver.init_scale * Mat::Identity(m, m);

  std::vector<Vec> pts;
  pts.reserve(K);
  for (int k = 0; k < K; ++k) {
    CounterRng r = init_rng.split(static_cast<std::uint64_t>(k));
    pts.push_back(sample_wrapped_normal({o, init_cov, r()}, cfg).coords());
  }

  SolverTrace trace;
  std::vector<Vec> best = pts;
  double best_loss = std::numeric_limits<double>::infinity();
  double prev_loss = std::numeric_limits<double>::infinity();

  long iter = 0;
  for (;; ++iter) {
    auto lg = detail::kernel_loss_and_grads(pts, kappa, true, false);

    // Separation guard: nudge the later point of a near-coincident pair.
    if (lg.min_pair_distance < detail::kSeparationGuard) {
      const int l = lg.closest_l;
      const Mat cov = 1e-6 * Mat::Identity(m, m);
      pts[l] = sample_wrapped_normal({LorentzPoint::unchecked(pts[l], kappa), cov, jitter_rng()}, cfg).coords();
      ++trace.jitter_events;
      prev_loss = std::numeric_limits<double>::infinity();
      lg = detail::kernel_loss_and_grads(pts, kappa, true, false);
    }

    if (!std::isfinite(lg.loss) || lg.loss > detail::kDivergenceLoss)
      throw SolverError("solve_kernels: diverged at iteration " + std::to_string(iter) +
                        " (loss=" + std::to_string(lg.loss) + ", min pair distance=" +
                        std::to_string(lg.min_pair_distance) + ", lr=" + std::to_string(solver.learning_rate) + ")");

    for (int k = 0; k < K; ++k)
      trace.max_constraint_error =
          std::max(trace.max_constraint_error, std::abs(lorentz::inner(pts[k], pts[k]) - 1.0 / kappa));
    if (std::isfinite(prev_loss)) trace.max_loss_increase = std::max(trace.max_loss_increase, lg.loss - prev_loss);
    prev_loss = lg.loss;
    if (lg.loss < best_loss) {
      best_loss = lg.loss;
      best = pts;
      trace.best_iter = iter;
    }

    const bool log_now = iter % solver.log_every == 0;
    const double gmax = detail::stationarity(pts, kappa);
    const bool done = gmax <= solver.grad_tol || iter >= solver.max_iters;
    if (log_now || done) trace.log.push_back({iter, lg.loss, gmax});
    if (done) {
      if (gmax <= solver.grad_tol && lg.loss <= best_loss + 1e-12 * std::abs(best_loss)) best = pts;
      break;
    }

    for (int k = 0; k < K; ++k) {
      const Vec g = detail::riemannian_from_euclidean(pts[k], lg.egrad[k], kappa);
      pts[k] = detail::shrink_toward_origin(rgd_step(pts[k], g, solver.learning_rate, kappa),
                                            solver.learning_rate, kappa);
    }
  }

  if (K == 2) detail::center_pair(best, kappa);
  trace.iterations = iter;
  trace.best_loss = detail::kernel_loss_and_grads(best, kappa, false).loss;
  trace.final_grad_norm = detail::stationarity(best, kappa);
  trace.converged = trace.final_grad_norm <= solver.grad_tol;

  KernelSet ks;
  ks.cfg = cfg;
  ks.provenance = KernelProvenance::optimized;
  for (auto& p : best) ks.points.push_back(LorentzPoint::unchecked(std::move(p), kappa));
  return {std::move(ks), std::move(trace)};
}

/// K i.i.d. draws from the wrapped normal with mean o and identity covariance.
inline KernelSet random_kernels(int K, int m, std::uint64_t seed, const ManifoldConfig& base_cfg) {
  if (K < 1) throw ParameterError("random_kernels: K must be >= 1");
  ManifoldConfig cfg = base_cfg;
  cfg.dim = m;
  cfg.validate();
  const CounterRng root = CounterRng(seed).split("random_kernels");
  const LorentzPoint o = origin(cfg);
  const Mat eye = Mat::Identity(m, m);
  KernelSet ks;
  ks.cfg = cfg;
  ks.provenance = KernelProvenance::random_wrapped_normal;
  for (int k = 0; k < K; ++k) {
    CounterRng r = root.split(static_cast<std::uint64_t>(k));
    ks.points.push_back(sample_wrapped_normal({o, eye, r()}, cfg));
  }
  return ks;
}

struct GradientDecayRow {
  double radius = 0.0;
  double grad_norm = 0.0;
};

struct LogLinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// K points at evenly spaced angles of the unit circle, pushed out along
/// their geodesics from o to each radius. For every radius the row holds the
/// norm of the gradient of the repulsion term sum_k sum_{l!=k} 1/d with
/// respect to the ambient Lorentz coordinates, using the acosh form of the
/// distance, which is the gradient backpropagation delivers to the points.
inline std::vector<GradientDecayRow> gradient_decay_experiment(int K, const std::vector<double>& radii,
                                                               const ManifoldConfig& base_cfg) {
  if (K < 2) throw ParameterError("gradient_decay_experiment: K must be >= 2");
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (!(radii[i] > 0.0)) throw ParameterError("gradient_decay_experiment: radii must be positive");
    if (i > 0 && !(radii[i] > radii[i - 1])) throw ParameterError("gradient_decay_experiment: radii must ascend");
  }
  ManifoldConfig cfg = base_cfg;
  cfg.dim = std::max(2, cfg.dim);
  cfg.validate();
  const double kappa = cfg.curvature;
  const double s = std::sqrt(-kappa);
  const Vec o = lorentz::origin(cfg.dim, kappa);

  std::vector<GradientDecayRow> rows;
  rows.reserve(radii.size());
  for (double r : radii) {
    std::vector<Vec> pts;
    for (int j = 0; j < K; ++j) {
      const double theta = 2.0 * std::numbers::pi * j / K;
      Vec dir = Vec::Zero(cfg.dim + 1);
      dir[1] = std::cos(theta);
      dir[2] = std::sin(theta);
      pts.push_back(lorentz::exp(o, r * dir, kappa));
    }
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
      Vec g = Vec::Zero(cfg.dim + 1);
      for (int l = 0; l < K; ++l) {
        if (l == k) continue;
        const double psi = kappa * lorentz::inner(pts[k], pts[l]);
        const double d = std::acosh(psi) / s;
        // d/dx_k of acosh(kappa <x_k, x_l>) / s, counted for (k,l) and (l,k).
        const Vec dd = -s * lorentz::metric(pts[l]) / std::sqrt(psi * psi - 1.0);
        g += 2.0 * (-1.0 / (d * d)) * dd;
      }
      total += g.squaredNorm();
    }
    rows.push_back({r, std::sqrt(total)});
  }
  return rows;
}

/// Least-squares fit of log(grad_norm) against radius.
inline LogLinearFit fit_log_linear(const std::vector<GradientDecayRow>& rows) {
  const auto n = static_cast<double>(rows.size());
  if (rows.size() < 2) throw ParameterError("fit_log_linear: need at least two rows");
  double sx = 0, sy = 0;
  for (const auto& r : rows) {
    sx += r.radius;
    sy += std::log(r.grad_norm);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& r : rows) {
    const double dx = r.radius - mx, dy = std::log(r.grad_norm) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  LogLinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

/// Geodesic from a to b sampled at `steps` + 1 points.
inline std::vector<LorentzPoint> geodesic_polyline(const LorentzPoint& a, const LorentzPoint& b, int steps = 64) {
  const Vec v = lorentz::log(a.coords(), b.coords(), a.curvature());
  std::vector<LorentzPoint> out;
  out.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i)
    out.push_back(LorentzPoint::unchecked(
        lorentz::exp(a.coords(), (static_cast<double>(i) / steps) * v, a.curvature()), a.curvature()));
  return out;
}

}  // namespace hkconv
