#pragma once

#include "hkconv/kernelgen.hpp"
#include "hkconv/manifold.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hkconv {

enum class Activation { identity, relu, tanh };
enum class ConvMode { relative, direct };
enum class Pooling { uniform, attention };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}
inline std::string_view to_string(ConvMode m) { return m == ConvMode::relative ? "relative" : "direct"; }
inline std::string_view to_string(Pooling p) { return p == Pooling::uniform ? "uniform" : "attention"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}
inline ConvMode conv_mode_from_string(std::string_view s) {
  if (s == "relative") return ConvMode::relative;
  if (s == "direct") return ConvMode::direct;
  throw ValidationError("unknown convolution mode '" + std::string(s) + "'");
}
inline Pooling pooling_from_string(std::string_view s) {
  if (s == "uniform") return Pooling::uniform;
  if (s == "attention") return Pooling::attention;
  throw ValidationError("unknown pooling '" + std::string(s) + "'");
}

/// Fully hyperbolic linear layer L^m -> L^n:
///   h(x) = lambda * sigmoid(v.x + b') / ||W tau(x) + b|| * (W tau(x) + b)
///   y    = (sqrt(||h||^2 - 1/kappa), h)
/// lambda is stored as its logarithm.
struct HLinearParams {
  Mat W;  // n x (m+1)
  Vec v;  // m+1
  Vec b;  // n
  double b_prime = 0.0;
  double log_lambda = 0.0;
  Activation activation = Activation::identity;

  [[nodiscard]] int in_dim() const { return static_cast<int>(W.cols()) - 1; }
  [[nodiscard]] int out_dim() const { return static_cast<int>(W.rows()); }
  [[nodiscard]] double lambda() const { return std::exp(log_lambda); }

  void validate() const {
    if (W.rows() < 1 || W.cols() < 2) throw DimensionError("HLinearParams: W must be n x (m+1) with n, m >= 1");
    if (v.size() != W.cols()) throw DimensionError("HLinearParams: v must have m+1 entries");
    if (b.size() != W.rows()) throw DimensionError("HLinearParams: b must have n entries");
  }

  /// W ~ U[-a, a] with a = (m+1)^{-1/2}; b = 0, v = 0, b' = 0, lambda = 1.
  static HLinearParams init(int m, int n, CounterRng& rng, Activation act = Activation::identity) {
    if (m < 1 || n < 1) throw DimensionError("HLinearParams::init: dimensions must be positive");
    HLinearParams p;
    const double a = 1.0 / std::sqrt(static_cast<double>(m + 1));
    p.W.resize(n, m + 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= m; ++j) p.W(i, j) = rng.uniform(-a, a);
    p.v = Vec::Zero(m + 1);
    p.b = Vec::Zero(n);
    p.activation = act;
    return p;
  }
};

struct CentroidBank {
  std::vector<LorentzPoint> centroids;
  [[nodiscard]] int size() const { return static_cast<int>(centroids.size()); }
};

struct WeightVector {
  Vec values;

  void validate() const {
    if (values.size() == 0) throw ParameterError("WeightVector: empty");
    if (!values.allFinite()) throw ParameterError("WeightVector: non-finite weight");
    if ((values.array() < 0.0).any()) throw ParameterError("WeightVector: negative weight");
    if (!(values.sum() > 0.0)) throw ParameterError("WeightVector: weights sum to zero");
  }
};

struct HKConvParams {
  std::vector<HLinearParams> sublayers;
  KernelSet kernels;
  ConvMode mode = ConvMode::relative;
  Pooling pooling = Pooling::uniform;

  [[nodiscard]] int in_dim() const { return kernels.cfg.dim; }
  [[nodiscard]] int out_dim() const { return sublayers.empty() ? 0 : sublayers.front().out_dim(); }

  void validate() const {
    if (static_cast<int>(sublayers.size()) != kernels.K())
      throw DimensionError("HKConvParams: need one HLinear per kernel point");
    for (const auto& s : sublayers) {
      s.validate();
      if (s.in_dim() != kernels.cfg.dim) throw DimensionError("HKConvParams: sublayer input dim differs from kernel dim");
      if (s.out_dim() != out_dim()) throw DimensionError("HKConvParams: sublayers disagree on output dim");
    }
  }

  static HKConvParams init(int n, KernelSet kernels, CounterRng& rng, Activation act = Activation::identity,
                           ConvMode mode = ConvMode::relative, Pooling pooling = Pooling::uniform) {
    HKConvParams p;
    for (int k = 0; k < kernels.K(); ++k) p.sublayers.push_back(HLinearParams::init(kernels.cfg.dim, n, rng, act));
    p.kernels = std::move(kernels);
    p.mode = mode;
    p.pooling = pooling;
    return p;
  }
};

namespace detail {

inline double activate(double x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}
inline double activate_deriv(double x, Activation a) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline constexpr double kDegenerateNorm = 1e-12;

struct HLinearForward {
  Vec tau_x;
  Vec z;  // W tau(x) + b, after the optional dropout mask
  double znorm = 0.0;
  double sig = 0.0;
  double r = 0.0;  // lambda * sigmoid(v.x + b') = ||h||
  Vec y;
};

inline HLinearForward hlinear_forward(const Vec& x, const Mat& W, const Vec& v, const Vec& b, double b_prime,
                                      double log_lambda, Activation act, double kappa, const Vec* mask = nullptr) {
  HLinearForward f;
  f.tau_x = x.unaryExpr([act](double t) { return activate(t, act); });
  f.z = W * f.tau_x + b;
  if (mask) f.z = f.z.cwiseProduct(*mask);
  f.znorm = f.z.norm();
  if (!(f.znorm >= kDegenerateNorm)) throw DegenerateError("hlinear: ||W tau(x) + b|| vanishes");
  f.sig = sigmoid(v.dot(x) + b_prime);
  f.r = std::exp(log_lambda) * f.sig;
  const Vec h = (f.r / f.znorm) * f.z;
  f.y.resize(h.size() + 1);
  f.y[0] = lorentz::time_for(h, kappa);
  f.y.tail(h.size()) = h;
  lorentz::polish(f.y, kappa);
  return f;
}

inline Vec hlinear_raw(const Vec& x, const HLinearParams& p, double kappa, const Vec* mask = nullptr) {
  return hlinear_forward(x, p.W, p.v, p.b, p.b_prime, p.log_lambda, p.activation, kappa, mask).y;
}

/// S / (sqrt(c) |<S,S>_L|^{1/2}) with S = sum_i (w_i / sum w) x_i, summed in
/// index order. Dividing by the weight sum first makes the result bitwise
/// identical for w and c*w whenever c*w is exact.
inline Vec hcent_raw(const std::vector<const Vec*>& pts, const Vec& w, double kappa) {
  const double total = w.sum();
  if (!(total > 0.0)) throw DegenerateError("hcent: weights sum to zero");
  Vec S = Vec::Zero(pts.front()->size());
  for (std::size_t i = 0; i < pts.size(); ++i) S += (w[static_cast<Eigen::Index>(i)] / total) * (*pts[i]);
  const double nrm = std::sqrt(std::abs(lorentz::inner(S, S)));
  if (!(nrm > 0.0)) throw DegenerateError("hcent: weighted sum has zero Lorentz norm");
  Vec y = S / (std::sqrt(-kappa) * nrm);
  lorentz::polish(y, kappa);
  return y;
}

/// Indices sorted by lexicographic order of coordinates. Depends only on the
/// multiset of points, never on their positions in the input list.
inline std::vector<int> canonical_order(const std::vector<const Vec*>& pts) {
  std::vector<int> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    const Vec& pa = *pts[a];
    const Vec& pb = *pts[b];
    return std::lexicographical_compare(pa.data(), pa.data() + pa.size(), pb.data(), pb.data() + pb.size());
  });
  return idx;
}

/// softmax(-d^2 / sqrt(n)) with max subtraction.
inline Vec neg_sq_softmax(const Vec& d, int n) {
  const Vec logits = (-d.array().square() / std::sqrt(static_cast<double>(n))).matrix();
  const Vec e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Row softmax of -d^2(q, k_j) / sqrt(n).
inline Vec attention_row_raw(const Vec& q, const std::vector<const Vec*>& keys, int n, double kappa) {
  Vec d(static_cast<Eigen::Index>(keys.size()));
  for (std::size_t j = 0; j < keys.size(); ++j) d[static_cast<Eigen::Index>(j)] = lorentz::distance(q, *keys[j], kappa);
  return neg_sq_softmax(d, n);
}

/// One HKConv evaluation on raw coordinates; neighbors are processed in
/// canonical order so the result is a function of the neighbor set.
template <class Transport = LorentzTransport>
Vec hkconv_raw(const Vec& x, const std::vector<const Vec*>& neighbors, const HKConvParams& p, const Vec* attn,
               double kappa) {
  const int K = p.kernels.K();
  const Eigen::Index m = x.size() - 1;
  const std::vector<int> order = canonical_order(neighbors);
  const Vec o = lorentz::origin(m, kappa);

  std::vector<Vec> kernel_at_x;
  if (p.mode == ConvMode::direct)
    for (const auto& kp : p.kernels.points) kernel_at_x.push_back(lorentz::translate<Transport>(o, x, kp.coords(), kappa));

  std::vector<Vec> xprime;
  xprime.reserve(order.size());
  std::vector<Vec> xik(K);
  std::vector<const Vec*> xik_ptr(K);
  Vec nu(K);
  for (int i : order) {
    const Vec& xi = *neighbors[i];
    const Vec rel = p.mode == ConvMode::relative ? lorentz::ominus<Transport>(xi, x, kappa) : xi;
    for (int k = 0; k < K; ++k) {
      xik[k] = hlinear_raw(rel, p.sublayers[k], kappa);
      xik_ptr[k] = &xik[k];
      nu[k] = p.mode == ConvMode::relative ? lorentz::distance(rel, p.kernels.points[k].coords(), kappa)
                                           : lorentz::distance(xi, kernel_at_x[k], kappa);
    }
    if (!(nu.sum() > 0.0)) throw DegenerateError("hkconv: every kernel correlation is zero (invariant violation)");
    xprime.push_back(hcent_raw(xik_ptr, nu, kappa));
  }

  std::vector<const Vec*> xp_ptr;
  for (const auto& v : xprime) xp_ptr.push_back(&v);
  Vec w;
  if (attn) {
    w.resize(static_cast<Eigen::Index>(order.size()));
    for (std::size_t j = 0; j < order.size(); ++j) w[static_cast<Eigen::Index>(j)] = (*attn)[order[j]];
  } else if (p.pooling == Pooling::attention) {
    std::vector<const Vec*> keys;
    for (int i : order) keys.push_back(neighbors[i]);
    w = attention_row_raw(x, keys, static_cast<int>(m), kappa);
  } else {
    w = Vec::Ones(static_cast<Eigen::Index>(order.size()));
  }
  return hcent_raw(xp_ptr, w, kappa);
}

}  // namespace detail

inline LorentzPoint hlinear(const LorentzPoint& x, const HLinearParams& p) {
  p.validate();
  if (x.dim() != p.in_dim())
    throw DimensionError("hlinear: input lives in L^" + std::to_string(x.dim()) + ", layer expects L^" +
                         std::to_string(p.in_dim()));
  return LorentzPoint::unchecked(detail::hlinear_raw(x.coords(), p, x.curvature()), x.curvature());
}

inline LorentzPoint hcent(const std::vector<LorentzPoint>& points, const WeightVector& nu) {
  if (points.empty()) throw ParameterError("hcent: no points");
  if (static_cast<Eigen::Index>(points.size()) != nu.values.size())
    throw DimensionError("hcent: number of weights differs from number of points");
  nu.validate();
  std::vector<const Vec*> pts;
  for (const auto& p : points) {
    detail::require_same_space(points.front(), p, "hcent");
    pts.push_back(&p.coords());
  }
  const double kappa = points.front().curvature();
  return LorentzPoint::unchecked(detail::hcent_raw(pts, nu.values, kappa), kappa);
}

inline Vec hcdist(const LorentzPoint& x, const CentroidBank& bank) {
  if (bank.centroids.empty()) throw ParameterError("hcdist: empty centroid bank");
  Vec out(bank.size());
  for (int i = 0; i < bank.size(); ++i) {
    detail::require_same_space(x, bank.centroids[i], "hcdist");
    out[i] = lorentz::distance(x.coords(), bank.centroids[i].coords(), x.curvature());
  }
  return out;
}

/// w_ij = softmax_j(-d^2(q_i, k_j) / sqrt(n)).
inline Mat attention_weights(const std::vector<LorentzPoint>& queries, const std::vector<LorentzPoint>& keys, int n) {
  if (queries.empty() || keys.empty()) throw ParameterError("attention_weights: empty query or key set");
  std::vector<const Vec*> kp;
  for (const auto& k : keys) {
    detail::require_same_space(queries.front(), k, "attention_weights");
    kp.push_back(&k.coords());
  }
  Mat w(static_cast<Eigen::Index>(queries.size()), static_cast<Eigen::Index>(keys.size()));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    detail::require_same_space(queries.front(), queries[i], "attention_weights");
    w.row(static_cast<Eigen::Index>(i)) =
        detail::attention_row_raw(queries[i].coords(), kp, n, queries[i].curvature()).transpose();
  }
  return w;
}

/// HKConv(x; N(x)).
///   relative: x_ik = HLinear_k(x_i (-) x),  nu_k = d(x_i (-) x, kernel_k)
///   direct:   x_ik = HLinear_k(x_i),        nu_k = d(x_i, T_{o->x}(kernel_k))
///   x_i' = HCent({x_ik}_k, nu),  output = HCent({x_i'}_i, w)
/// with w uniform, the supplied attention weights, or (pooling == attention
/// and no weights supplied) softmax(-d^2(x, x_i)/sqrt(m)).
template <class Transport = LorentzTransport>
LorentzPoint hkconv(const LorentzPoint& x, const std::vector<LorentzPoint>& neighbors, const HKConvParams& p,
                    const std::optional<WeightVector>& attn = std::nullopt) {
  p.validate();
  if (neighbors.empty()) throw ParameterError("hkconv: empty neighborhood");
  if (x.dim() != p.in_dim()) throw DimensionError("hkconv: input dimension differs from kernel dimension");
  if (x.curvature() != p.kernels.cfg.curvature) throw DimensionError("hkconv: curvature differs from kernels");
  std::vector<const Vec*> nb;
  for (const auto& n : neighbors) {
    detail::require_same_space(x, n, "hkconv");
    nb.push_back(&n.coords());
  }
  if (attn) {
    if (p.pooling != Pooling::attention) throw ParameterError("hkconv: attention weights given but pooling is uniform");
    if (attn->values.size() != static_cast<Eigen::Index>(neighbors.size()))
      throw DimensionError("hkconv: one attention weight per neighbor required");
    attn->validate();
  }
  return LorentzPoint::unchecked(
      detail::hkconv_raw<Transport>(x.coords(), nb, p, attn ? &attn->values : nullptr, x.curvature()), x.curvature());
}

}  // namespace hkconv
