#pragma once

// Lorentz (hyperboloid) model of hyperbolic space with constant curvature
// kappa < 0. A point x in R^{n+1} satisfies <x,x>_L = 1/kappa with x_t > 0,
// where <x,y>_L = -x_t*y_t + x_s . y_s.

#include "hkconv/core.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>

namespace hkconv {

struct ManifoldConfig {
  double curvature = -1.0;
  int dim = 2;
  double tol_manifold = 1e-9;
  double tol_inverse = 1e-8;

  void validate() const {
    if (!(curvature < 0.0) || !std::isfinite(curvature))
      throw ParameterError("ManifoldConfig: curvature must be finite and strictly negative");
    if (dim < 1) throw ParameterError("ManifoldConfig: dim must be >= 1");
    if (!(tol_manifold > 0.0) || !(tol_inverse > 0.0))
      throw ParameterError("ManifoldConfig: tolerances must be positive");
  }
};

// Raw kernels on coordinate vectors. Both the typed API below and the
// autograd ops evaluate their forward pass through these functions, so the
// two paths agree bit for bit.
namespace lorentz {

inline double inner(const Vec& x, const Vec& y) {
  const Eigen::Index n = x.size() - 1;
  return x.tail(n).dot(y.tail(n)) - x[0] * y[0];
}

/// Applies the metric tensor diag(-1, 1, ..., 1).
inline Vec metric(Vec v) {
  v[0] = -v[0];
  return v;
}

/// Time component that puts `spatial` on the hyperboloid.
inline double time_for(const Eigen::Ref<const Vec>& spatial, double kappa) {
  return std::sqrt(spatial.squaredNorm() - 1.0 / kappa);
}

/// <y,y>_L - 1/kappa with compensated products and sums, accurate far below
/// the rounding of a plain evaluation (which is about eps * y_t^2).
inline double constraint_residual(const Vec& y, double kappa) {
  double hi = 0.0;
  double lo = 0.0;
  auto add = [&](double a) {
    const double s = hi + a;
    const double bb = s - hi;
    lo += (hi - (s - bb)) + (a - bb);
    hi = s;
  };
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double p = y[i] * y[i];
    const double e = std::fma(y[i], y[i], -p);
    add(i == 0 ? -p : p);
    lo += i == 0 ? -e : e;
  }
  add(-1.0 / kappa);
  return hi + lo;
}

inline constexpr double kPolishTol = 2e-11;

namespace polish_detail {

inline double ulp(double x) { return std::nextafter(std::abs(x), INFINITY) - std::abs(x); }

struct Best {
  Vec y;
  double r;
  void offer(const Vec& cand, double kappa) {
    const double rc = std::abs(constraint_residual(cand, kappa));
    if (rc < r) {
      r = rc;
      y = cand;
    }
  }
};

}  // namespace polish_detail

/// Moves coordinates by a few units in the last place so that the exactly
/// evaluated constraint holds to about 1e-12 even far from the origin, where a
/// correctly rounded time coordinate alone leaves a residual near eps * y_t^2.
/// The displacement is of the order of the residual being removed.
inline void polish(Vec& y, double kappa) {
  using polish_detail::ulp;
  const double r0 = constraint_residual(y, kappa);
  if (std::abs(r0) <= kPolishTol || !y.allFinite()) return;
  const Eigen::Index n = y.size();
  polish_detail::Best best{y, std::abs(r0)};

  auto single = [&](const Vec& base, double r) {
    // residual(y_j + k u) - residual(y) = 2 k u y_j + k^2 u^2
    for (Eigen::Index j = 1; j < n; ++j) {
      if (std::abs(base[j]) < 1.0) continue;
      const double u = ulp(base[j]) * (base[j] < 0 ? -1.0 : 1.0);
      const double k = std::round(-r / (2.0 * u * base[j]));
      for (double dk = -1; dk <= 1; ++dk) {
        Vec c = base;
        c[j] = base[j] + (k + dk) * u;
        best.offer(c, kappa);
      }
    }
  };
  single(y, r0);

  // Equal shifts of y_t and |y_j| change the residual by 2 s (|y_j| - y_t),
  // which is fine-grained when the point lies close to the j-th axis.
  for (Eigen::Index j = 1; j < n && best.r > kPolishTol; ++j) {
    const double U = std::max(ulp(y[0]), ulp(y[j]));
    const double gap = std::abs(y[j]) - y[0];
    if (gap == 0.0) continue;
    const double k = std::round(-r0 / (2.0 * U * gap));
    if (!(std::abs(k) < 1e12)) continue;
    for (double dk = -1; dk <= 1; ++dk) {
      Vec c = y;
      c[0] = y[0] + (k + dk) * U;
      c[j] = y[j] + (y[j] < 0 ? -1.0 : 1.0) * (k + dk) * U;
      best.offer(c, kappa);
    }
  }

  // Small integer lattice over the time coordinate and the two largest
  // spatial coordinates.
  if (best.r > kPolishTol && n >= 3) {
    Eigen::Index j1 = 1;
    Eigen::Index j2 = 2;
    for (Eigen::Index j = 1; j < n; ++j) {
      if (std::abs(y[j]) > std::abs(y[j1])) {
        j2 = j1;
        j1 = j;
      } else if (j != j1 && (j2 == j1 || std::abs(y[j]) > std::abs(y[j2]))) {
        j2 = j;
      }
    }
    if (j1 == j2) j2 = j1 == 1 ? 2 : 1;
    const double ut = ulp(y[0]);
    const double u1 = ulp(y[j1]);
    const double u2 = ulp(y[j2]);
    constexpr int N = 16;
    double bestf = best.r;
    int ba = 0, bb = 0, bc = 0;
    for (int a = -N; a <= N; ++a) {
      const double fa = r0 - (2.0 * y[0] * a * ut + a * a * ut * ut);
      for (int b = -N; b <= N; ++b) {
        const double fb = fa + 2.0 * y[j1] * b * u1 + b * b * u1 * u1;
        for (int c = -N; c <= N; ++c) {
          const double f = std::abs(fb + 2.0 * y[j2] * c * u2 + c * c * u2 * u2);
          if (f < bestf) {
            bestf = f;
            ba = a;
            bb = b;
            bc = c;
          }
        }
      }
    }
    Vec c = y;
    c[0] += ba * ut;
    c[j1] += bb * u1;
    c[j2] += bc * u2;
    best.offer(c, kappa);
  }

  if (best.r > kPolishTol) {
    const Vec base = best.y;
    single(base, constraint_residual(base, kappa));
  }
  y = best.y;
}

inline Vec lift(const Eigen::Ref<const Vec>& spatial, double kappa) {
  Vec out(spatial.size() + 1);
  out[0] = time_for(spatial, kappa);
  out.tail(spatial.size()) = spatial;
  polish(out, kappa);
  return out;
}

/// Squared chord <x-y, x-y>_L, clamped at zero. Equals (4/c) sinh^2(sqrt(c) d / 2).
inline double chord2(const Vec& x, const Vec& y) { return std::max(0.0, inner(x - y, x - y)); }

/// Geodesic distance (-kappa)^{-1/2} acosh(kappa <x,y>_L), evaluated through the
/// equivalent chord form 2/sqrt(c) * asinh(sqrt(c <x-y,x-y>_L) / 2). The chord
/// form keeps full relative precision for nearby points, where acosh of an
/// argument near 1 loses half the digits.
inline double distance(const Vec& x, const Vec& y, double kappa) {
  const double c = -kappa;
  const double m2 = chord2(x, y);
  if (m2 == 0.0) return 0.0;
  return 2.0 / std::sqrt(c) * std::asinh(0.5 * std::sqrt(c * m2));
}

/// Euclidean gradient of `distance` with respect to its first argument.
/// Zero at coincident points.
inline Vec distance_grad_first(const Vec& x, const Vec& y, double kappa) {
  const double c = -kappa;
  const Vec delta = x - y;
  const double m2 = inner(delta, delta);
  if (m2 <= 0.0) return Vec::Zero(x.size());
  const double m = std::sqrt(m2);
  return metric(delta) / (m * std::sqrt(1.0 + 0.25 * c * m2));
}

/// Literal acosh form of the distance, kept as an independent reference.
inline double distance_acosh(const Vec& x, const Vec& y, double kappa) {
  const double c = -kappa;
  return std::acosh(std::max(1.0, kappa * inner(x, y))) / std::sqrt(c);
}

inline constexpr double kSmallPhi = 1e-7;

/// exp_x(v) = cosh(phi) x + sinh(phi)/phi v, phi = sqrt(c) ||v||_L. The time
/// coordinate of the result is recomputed from its spatial part.
inline Vec exp(const Vec& x, const Vec& v, double kappa) {
  const double c = -kappa;
  const double phi = std::sqrt(c * std::max(0.0, inner(v, v)));
  if (phi == 0.0) return x;
  Vec y = phi < kSmallPhi ? Vec(std::cosh(phi) * x + v)
                          : Vec(std::cosh(phi) * x + (std::sinh(phi) / phi) * v);
  y[0] = time_for(y.tail(y.size() - 1), kappa);
  polish(y, kappa);
  return y;
}

/// asinh(sqrt(t)) / (sqrt(t) sqrt(1 + t)), and its derivative in t.
inline double log_scale(double t) {
  if (t < 1e-3) return 1.0 + t * (-2.0 / 3.0 + t * (8.0 / 15.0 - t * 16.0 / 35.0));
  const double a = std::sqrt(t);
  return std::asinh(a) / (a * std::sqrt(1.0 + t));
}
inline double log_scale_deriv(double t) {
  if (t < 1e-3) return -2.0 / 3.0 + t * (16.0 / 15.0 - t * 48.0 / 35.0);
  const double a = std::sqrt(t);
  const double s1 = std::sqrt(1.0 + t);
  const double dg_da = (a - std::asinh(a) * (1.0 + 2.0 * t) / s1) / (t * (1.0 + t));
  return dg_da / (2.0 * a);
}

/// log_x(u). With delta = u - x and t = c <delta,delta>_L / 4 one has
/// psi - 1 = 2t for psi = kappa <x,u>_L, so u - psi x = delta - 2t x and
/// acosh(psi) / (sqrt(c) ||u - psi x||_L) = log_scale(t). Coincident points map
/// to the zero vector.
inline Vec log(const Vec& x, const Vec& u, double kappa) {
  const double c = -kappa;
  const Vec delta = u - x;
  const double t = 0.25 * c * std::max(0.0, inner(delta, delta));
  return log_scale(t) * (delta - 2.0 * t * x);
}

/// PT_{x->y}(v) = v + <y,v>_L / (-1/kappa - <x,y>_L) (x + y).
inline Vec transport(const Vec& x, const Vec& y, const Vec& v, double kappa) {
  const double den = -1.0 / kappa - inner(x, y);
  if (!(den > 1e-300)) throw DomainError("parallel_transport: antipodal configuration (denominator is zero)");
  return v + (inner(y, v) / den) * (x + y);
}

inline Vec origin(Eigen::Index dim, double kappa) {
  Vec o = Vec::Zero(dim + 1);
  o[0] = 1.0 / std::sqrt(-kappa);
  return o;
}

}  // namespace lorentz

class LorentzPoint {
 public:
  LorentzPoint() = default;

  /// Validating constructor; the constraint tolerance is scaled by max(1, x_t^2)
  /// because the constraint cannot be represented more precisely than that.
  static LorentzPoint from_coords(Vec coords, double curvature, double tol = 1e-9) {
    if (coords.size() < 2) throw DimensionError("LorentzPoint: need at least 2 coordinates");
    if (!(curvature < 0.0)) throw ParameterError("LorentzPoint: curvature must be negative");
    LorentzPoint p(std::move(coords), curvature);
    if (!p.coords_.allFinite()) throw DomainError("LorentzPoint: non-finite coordinate");
    if (!(p.time() > 0.0)) throw DomainError("LorentzPoint: time component must be positive");
    if (p.constraint_error() > tol * std::max(1.0, p.time() * p.time()))
      throw DomainError("LorentzPoint: coordinates are off the hyperboloid");
    return p;
  }
  static LorentzPoint unchecked(Vec coords, double curvature) { return LorentzPoint(std::move(coords), curvature); }

  [[nodiscard]] double curvature() const { return curvature_; }
  [[nodiscard]] int dim() const { return static_cast<int>(coords_.size()) - 1; }
  [[nodiscard]] double time() const { return coords_[0]; }
  [[nodiscard]] auto spatial() const { return coords_.tail(coords_.size() - 1); }
  [[nodiscard]] const Vec& coords() const { return coords_; }
  [[nodiscard]] double operator[](Eigen::Index i) const { return coords_[i]; }

  /// |<x,x>_L - 1/kappa|, evaluated with compensated arithmetic.
  [[nodiscard]] double constraint_error() const {
    return std::abs(lorentz::constraint_residual(coords_, curvature_));
  }

  friend bool operator==(const LorentzPoint& a, const LorentzPoint& b) {
    return a.curvature_ == b.curvature_ && a.coords_.size() == b.coords_.size() && a.coords_ == b.coords_;
  }

 private:
  LorentzPoint(Vec coords, double curvature) : coords_(std::move(coords)), curvature_(curvature) {}

  Vec coords_;
  double curvature_ = -1.0;
};

struct TangentVector {
  LorentzPoint base;
  Vec vec;

  /// |<vec, base>_L|
  [[nodiscard]] double tangency_error() const { return std::abs(lorentz::inner(vec, base.coords())); }
  /// ||vec||_L, nonnegative on tangent spaces.
  [[nodiscard]] double norm() const { return std::sqrt(std::max(0.0, lorentz::inner(vec, vec))); }
};

struct WrappedNormalParams {
  LorentzPoint mean;
  Mat covariance;
  std::uint64_t seed = 0;
};

namespace detail {

inline void require_same_space(const LorentzPoint& a, const LorentzPoint& b, const char* op) {
  if (a.dim() != b.dim())
    throw DimensionError(std::string(op) + ": dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()) + ")");
  if (a.curvature() != b.curvature()) throw DimensionError(std::string(op) + ": curvature mismatch");
}

inline void require_tangent(const Vec& base, const Vec& v, double tol, const char* op) {
  if (base.size() != v.size()) throw DimensionError(std::string(op) + ": tangent vector has wrong length");
  const double scale = std::max(1.0, base.norm() * v.norm());
  if (std::abs(lorentz::inner(v, base)) > tol * scale)
    throw DomainError(std::string(op) + ": vector is not tangent at its base point");
}

}  // namespace detail

inline double lorentz_inner(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw DimensionError("lorentz_inner: length mismatch");
  if (x.size() < 2) throw DimensionError("lorentz_inner: vectors need at least 2 entries");
  return lorentz::inner(x, y);
}

inline LorentzPoint origin(const ManifoldConfig& cfg) {
  cfg.validate();
  return LorentzPoint::unchecked(lorentz::origin(cfg.dim, cfg.curvature), cfg.curvature);
}

inline LorentzPoint project_to_manifold(const Vec& raw_spatial, const ManifoldConfig& cfg) {
  if (raw_spatial.size() != cfg.dim) throw DimensionError("project_to_manifold: expected dim spatial entries");
  return LorentzPoint::unchecked(lorentz::lift(raw_spatial, cfg.curvature), cfg.curvature);
}

inline double distance(const LorentzPoint& x, const LorentzPoint& y) {
  detail::require_same_space(x, y, "distance");
  return lorentz::distance(x.coords(), y.coords(), x.curvature());
}

inline LorentzPoint exp_map(const TangentVector& v, double tol = 1e-9) {
  detail::require_tangent(v.base.coords(), v.vec, tol, "exp_map");
  return LorentzPoint::unchecked(lorentz::exp(v.base.coords(), v.vec, v.base.curvature()), v.base.curvature());
}

inline TangentVector log_map(const LorentzPoint& x, const LorentzPoint& u) {
  detail::require_same_space(x, u, "log_map");
  return {x, lorentz::log(x.coords(), u.coords(), x.curvature())};
}

inline TangentVector parallel_transport(const LorentzPoint& x, const LorentzPoint& y, const TangentVector& v,
                                        double tol = 1e-9) {
  detail::require_same_space(x, y, "parallel_transport");
  detail::require_same_space(x, v.base, "parallel_transport");
  detail::require_tangent(x.coords(), v.vec, tol, "parallel_transport");
  return {y, lorentz::transport(x.coords(), y.coords(), v.vec, x.curvature())};
}

/// Transport policy used by the translation operators. Swapping it out is how
/// the invariant suites inject a faulty transport to prove they can fail.
struct LorentzTransport {
  static Vec apply(const Vec& x, const Vec& y, const Vec& v, double kappa) { return lorentz::transport(x, y, v, kappa); }
};

namespace lorentz {

template <class Transport = LorentzTransport>
Vec translate(const Vec& x, const Vec& y, const Vec& u, double kappa) {
  return exp(y, Transport::apply(x, y, log(x, u, kappa), kappa), kappa);
}

/// u (-) x = T_{x->o}(u)
template <class Transport = LorentzTransport>
Vec ominus(const Vec& u, const Vec& x, double kappa) {
  return translate<Transport>(x, origin(x.size() - 1, kappa), u, kappa);
}

}  // namespace lorentz

/// T_{x->y}(u) = exp_y(PT_{x->y}(log_x(u)))
template <class Transport = LorentzTransport>
LorentzPoint translate(const LorentzPoint& x, const LorentzPoint& y, const LorentzPoint& u) {
  detail::require_same_space(x, y, "translate");
  detail::require_same_space(x, u, "translate");
  return LorentzPoint::unchecked(lorentz::translate<Transport>(x.coords(), y.coords(), u.coords(), x.curvature()),
                                 x.curvature());
}

template <class Transport = LorentzTransport>
LorentzPoint ominus(const LorentzPoint& u, const LorentzPoint& x) {
  detail::require_same_space(u, x, "ominus");
  return LorentzPoint::unchecked(lorentz::ominus<Transport>(u.coords(), x.coords(), x.curvature()), x.curvature());
}

/// exp_o((0, z))
inline LorentzPoint embed_euclidean(const Vec& z, const ManifoldConfig& cfg) {
  if (z.size() != cfg.dim) throw DimensionError("embed_euclidean: expected dim entries");
  Vec v = Vec::Zero(z.size() + 1);
  v.tail(z.size()) = z;
  return LorentzPoint::unchecked(lorentz::exp(lorentz::origin(cfg.dim, cfg.curvature), v, cfg.curvature),
                                 cfg.curvature);
}

inline LorentzPoint sample_wrapped_normal(const WrappedNormalParams& params, const ManifoldConfig& cfg) {
  const Mat& sigma = params.covariance;
  const Eigen::Index n = cfg.dim;
  if (params.mean.dim() != n || params.mean.curvature() != cfg.curvature)
    throw DimensionError("sample_wrapped_normal: mean does not live on the configured manifold");
  if (sigma.rows() != n || sigma.cols() != n) throw DimensionError("sample_wrapped_normal: covariance must be dim x dim");
  if (!sigma.allFinite()) throw ParameterError("sample_wrapped_normal: covariance has non-finite entries");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ParameterError("sample_wrapped_normal: covariance is not symmetric");
  if ((sigma.diagonal().array() < 0.0).any())
    throw ParameterError("sample_wrapped_normal: covariance has a negative diagonal entry");

  Eigen::SelfAdjointEigenSolver<Mat> eig(sigma);
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale)
    throw ParameterError("sample_wrapped_normal: covariance is not positive semidefinite");
  const Mat factor = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  CounterRng rng(params.seed);
  Vec xi(n);
  for (Eigen::Index i = 0; i < n; ++i) xi[i] = rng.normal();
  const Vec e = sigma.isZero(0.0) ? Vec(Vec::Zero(n)) : Vec(factor * xi);

  const double kappa = cfg.curvature;
  const Vec o = lorentz::origin(n, kappa);
  const Vec x = embed_euclidean(e, cfg).coords();
  const Vec& mu = params.mean.coords();
  return LorentzPoint::unchecked(lorentz::exp(mu, lorentz::transport(o, mu, lorentz::log(o, x, kappa), kappa), kappa),
                                 kappa);
}

/// Spatial components i.i.d. uniform in [-half_width, half_width], then lifted.
inline LorentzPoint random_point(CounterRng& rng, const ManifoldConfig& cfg, double half_width = 2.0) {
  Vec s(cfg.dim);
  for (int i = 0; i < cfg.dim; ++i) s[i] = rng.uniform(-half_width, half_width);
  return project_to_manifold(s, cfg);
}

/// Random tangent vector at x with Lorentz norm `norm`.
inline TangentVector random_tangent(CounterRng& rng, const LorentzPoint& x, double norm) {
  const double kappa = x.curvature();
  Vec v(x.dim() + 1);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v -= kappa * lorentz::inner(x.coords(), v) * x.coords();  // project onto T_x
  const double n = std::sqrt(std::max(0.0, lorentz::inner(v, v)));
  if (n == 0.0) return {x, Vec::Zero(v.size())};
  return {x, v * (norm / n)};
}

/// Projection onto the unit Poincare disk/ball: sqrt(c) x_s / (1 + sqrt(c) x_t).
inline Vec to_poincare(const LorentzPoint& x) {
  const double s = std::sqrt(-x.curvature());
  return (s * x.spatial()) / (1.0 + s * x.time());
}

}  // namespace hkconv
