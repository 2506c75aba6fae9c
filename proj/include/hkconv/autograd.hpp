#pragma once

#include "hkconv/layers.hpp"
#include "hkconv/manifold.hpp"
#include "hkconv/params.hpp"

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

// Reverse-mode differentiation over vector-valued nodes. Every op evaluates
// its forward value with the same raw kernels as the value-level API.
namespace hkconv::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] const Vec& value() const;
  [[nodiscard]] double scalar() const { return value()[0]; }
  [[nodiscard]] Eigen::Index size() const { return value().size(); }
};

using ParentGrads = std::vector<Vec>;
using Backward = std::function<void(const Vec& gout, ParentGrads& gin)>;

class Tape {
 public:
  class Scope {
   public:
    Scope(Tape& t, const std::string& name) : tape_(t) { tape_.push_scope(name); }
    ~Scope() { tape_.pop_scope(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
  };

  Var constant(Vec value) { return push(std::move(value), {}, false, "constant", nullptr); }
  Var leaf(Vec value, const std::string& name) {
    Var v = push(std::move(value), {}, true, "leaf:" + name, nullptr);
    return v;
  }

  /// Records an op. `make_backward` is only invoked when some parent needs a
  /// gradient, so forward-only evaluation builds no closures.
  template <class MakeBackward>
  Var record(Vec value, std::initializer_list<Var> parents, const char* op, MakeBackward&& make_backward) {
    return record(std::move(value), std::vector<Var>(parents), op, std::forward<MakeBackward>(make_backward));
  }
  template <class MakeBackward>
  Var record(Vec value, const std::vector<Var>& parents, const char* op, MakeBackward&& make_backward) {
    bool needs = false;
    std::vector<int> ids;
    ids.reserve(parents.size());
    for (const Var& p : parents) {
      if (p.tape != this) throw Error("ad: operand recorded on a different tape");
      ids.push_back(p.id);
      needs = needs || nodes_[p.id].requires_grad;
    }
    if (!value.allFinite()) throw NumericError("ad: non-finite forward value in " + path_for(op));
    if (!needs) return push(std::move(value), {}, false, op, nullptr);
    return push(std::move(value), std::move(ids), true, op, Backward(make_backward()));
  }

  [[nodiscard]] const Vec& value(int id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(const Var& v) const { return nodes_[v.id].requires_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const std::string& op_path(int id) const { return paths_[nodes_[id].path]; }

  /// Seeds d(loss)/d(loss) = seed and sweeps nodes in reverse creation order,
  /// which is a reverse topological order; each node is visited once.
  void backward(const Var& loss, double seed = 1.0) {
    if (loss.size() != 1) throw DimensionError("ad::backward: loss must be a scalar");
    grads_.assign(nodes_.size(), Vec());
    grads_[loss.id] = Vec::Constant(1, seed);
    ParentGrads gin;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || grads_[id].size() == 0) continue;
      gin.assign(n.parents.size(), Vec());
      n.backward(grads_[id], gin);
      for (std::size_t i = 0; i < n.parents.size(); ++i) {
        const int p = n.parents[i];
        if (gin[i].size() == 0 || !nodes_[p].requires_grad) continue;
        if (!gin[i].allFinite())
          throw NumericError("ad: non-finite gradient in backward of " + paths_[n.path]);
        if (grads_[p].size() == 0)
          grads_[p] = std::move(gin[i]);
        else
          grads_[p] += gin[i];
      }
    }
  }

  /// Gradient accumulated at `v` by the last backward(); zeros if none arrived.
  [[nodiscard]] Vec grad(const Var& v) const {
    if (v.id < static_cast<int>(grads_.size()) && grads_[v.id].size() != 0) return grads_[v.id];
    return Vec::Zero(nodes_[v.id].value.size());
  }

 private:
  struct Node {
    Vec value;
    std::vector<int> parents;
    bool requires_grad = false;
    int path = 0;
    Backward backward;
  };

  Var push(Vec value, std::vector<int> parents, bool rg, const std::string& op, Backward bw) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.requires_grad = rg;
    n.path = intern(op);
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::string path_for(const std::string& op) const { return scope_.empty() ? op : scope_ + "/" + op; }

  int intern(const std::string& op) {
    std::string full = path_for(op);
    auto it = path_ids_.find(full);
    if (it != path_ids_.end()) return it->second;
    paths_.push_back(full);
    const int id = static_cast<int>(paths_.size()) - 1;
    path_ids_.emplace(std::move(full), id);
    return id;
  }

  void push_scope(const std::string& name) {
    scope_lengths_.push_back(scope_.size());
    scope_ = scope_.empty() ? name : scope_ + "/" + name;
  }
  void pop_scope() {
    scope_.resize(scope_lengths_.back());
    scope_lengths_.pop_back();
  }

  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
  std::vector<Vec> grads_;
  std::string scope_;
  std::vector<std::size_t> scope_lengths_;
  std::vector<std::string> paths_;
  std::unordered_map<std::string, int> path_ids_;
};

inline const Vec& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------- arithmetic

inline Var add(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw DimensionError("ad::add: size mismatch");
  return a.tape->record(a.value() + b.value(), {a, b}, "add", [] {
    return [](const Vec& g, ParentGrads& gin) { gin[0] = g; gin[1] = g; };
  });
}

inline Var sub(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw DimensionError("ad::sub: size mismatch");
  return a.tape->record(a.value() - b.value(), {a, b}, "sub", [] {
    return [](const Vec& g, ParentGrads& gin) { gin[0] = g; gin[1] = -g; };
  });
}

inline Var scale(const Var& a, double s) {
  return a.tape->record(s * a.value(), {a}, "scale", [s] {
    return [s](const Vec& g, ParentGrads& gin) { gin[0] = s * g; };
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw DimensionError("ad::mul: size mismatch");
  return a.tape->record(a.value().cwiseProduct(b.value()), {a, b}, "mul", [&] {
    return [av = a.value(), bv = b.value()](const Vec& g, ParentGrads& gin) {
      gin[0] = g.cwiseProduct(bv);
      gin[1] = g.cwiseProduct(av);
    };
  });
}

inline Var dot(const Var& a, const Var& b) {
  if (a.size() != b.size()) throw DimensionError("ad::dot: size mismatch");
  return a.tape->record(Vec::Constant(1, a.value().dot(b.value())), {a, b}, "dot", [&] {
    return [av = a.value(), bv = b.value()](const Vec& g, ParentGrads& gin) {
      gin[0] = g[0] * bv;
      gin[1] = g[0] * av;
    };
  });
}

inline Var sum(const Var& a) {
  return a.tape->record(Vec::Constant(1, a.value().sum()), {a}, "sum", [n = a.size()] {
    return [n](const Vec& g, ParentGrads& gin) { gin[0] = Vec::Constant(n, g[0]); };
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ParameterError("ad::concat: nothing to concatenate");
  Eigen::Index total = 0;
  for (const Var& p : parts) total += p.size();
  Vec out(total);
  std::vector<Eigen::Index> sizes;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.segment(off, p.size()) = p.value();
    off += p.size();
    sizes.push_back(p.size());
  }
  return parts.front().tape->record(std::move(out), parts, "concat", [&] {
    return [sizes](const Vec& g, ParentGrads& gin) {
      Eigen::Index o = 0;
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        gin[i] = g.segment(o, sizes[i]);
        o += sizes[i];
      }
    };
  });
}

/// Contiguous segment [start, start+len).
inline Var slice(const Var& a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || start + len > a.size()) throw DimensionError("ad::slice: out of range");
  return a.tape->record(a.value().segment(start, len), {a}, "slice", [&] {
    return [start, n = a.size()](const Vec& g, ParentGrads& gin) {
      gin[0] = Vec::Zero(n);
      gin[0].segment(start, g.size()) = g;
    };
  });
}

// ------------------------------------------------------------------ geometry

inline Var inner(const Var& x, const Var& y) {
  if (x.size() != y.size()) throw DimensionError("ad::inner: size mismatch");
  return x.tape->record(Vec::Constant(1, lorentz::inner(x.value(), y.value())), {x, y}, "inner", [&] {
    return [gx = lorentz::metric(y.value()), gy = lorentz::metric(x.value())](const Vec& g, ParentGrads& gin) {
      gin[0] = g[0] * gx;
      gin[1] = g[0] * gy;
    };
  });
}

/// Geodesic distance; the adjoint is zero at coincident points.
inline Var distance(const Var& x, const Var& y, double kappa) {
  if (x.size() != y.size()) throw DimensionError("ad::distance: size mismatch");
  return x.tape->record(Vec::Constant(1, lorentz::distance(x.value(), y.value(), kappa)), {x, y}, "distance", [&] {
    return [gx = lorentz::distance_grad_first(x.value(), y.value(), kappa)](const Vec& g, ParentGrads& gin) {
      gin[0] = g[0] * gx;
      gin[1] = -g[0] * gx;
    };
  });
}

namespace detail {

/// Backward of y = (time_for(raw_s), raw_s): g_raw_s = g_s + g_t y_s / y_t, g_raw_t = 0.
inline Vec reproject_backward(const Vec& y, const Vec& g) {
  Vec out = g;
  const Eigen::Index n = y.size() - 1;
  out.tail(n) += (g[0] / y[0]) * y.tail(n);
  out[0] = 0.0;
  return out;
}

}  // namespace detail

inline Var exp_map(const Var& x, const Var& v, double kappa) {
  if (x.size() != v.size()) throw DimensionError("ad::exp_map: size mismatch");
  Vec y = lorentz::exp(x.value(), v.value(), kappa);
  return x.tape->record(y, {x, v}, "exp", [&] {
    return [xv = x.value(), vv = v.value(), y, kappa](const Vec& g, ParentGrads& gin) {
      const double c = -kappa;
      const double phi = std::sqrt(c * std::max(0.0, lorentz::inner(vv, vv)));
      const Vec graw = detail::reproject_backward(y, g);
      if (phi < lorentz::kSmallPhi) {
        gin[0] = std::cosh(phi) * graw;
        gin[1] = graw + (graw.dot(xv) * c) * lorentz::metric(vv);
        return;
      }
      const double ch = std::cosh(phi);
      const double sh = std::sinh(phi);
      const double B = sh / phi;
      const double dB = phi < 1e-3 ? phi / 3.0 + phi * phi * phi / 30.0 : (phi * ch - sh) / (phi * phi);
      gin[0] = ch * graw;
      gin[1] = B * graw + ((graw.dot(xv) * sh + graw.dot(vv) * dB) * c / phi) * lorentz::metric(vv);
    };
  });
}

inline Var log_map(const Var& x, const Var& u, double kappa) {
  if (x.size() != u.size()) throw DimensionError("ad::log_map: size mismatch");
  return x.tape->record(lorentz::log(x.value(), u.value(), kappa), {x, u}, "log", [&] {
    return [xv = x.value(), uv = u.value(), kappa](const Vec& g, ParentGrads& gin) {
      const double c = -kappa;
      const Vec delta = uv - xv;
      const double dd = lorentz::inner(delta, delta);
      const double t = 0.25 * c * std::max(0.0, dd);
      const double G = lorentz::log_scale(t);
      const Vec w = delta - 2.0 * t * xv;
      const Vec gw = G * g;
      Vec gdelta = gw;
      Vec gx = -2.0 * t * gw;
      if (dd > 0.0) {
        const double gt = lorentz::log_scale_deriv(t) * g.dot(w) - 2.0 * gw.dot(xv);
        gdelta += (gt * 0.5 * c) * lorentz::metric(delta);
      }
      gx -= gdelta;
      gin[0] = std::move(gx);
      gin[1] = std::move(gdelta);
    };
  });
}

inline Var transport(const Var& x, const Var& y, const Var& v, double kappa) {
  if (x.size() != y.size() || x.size() != v.size()) throw DimensionError("ad::transport: size mismatch");
  return x.tape->record(lorentz::transport(x.value(), y.value(), v.value(), kappa), {x, y, v}, "transport", [&] {
    return [xv = x.value(), yv = y.value(), vv = v.value(), kappa](const Vec& g, ParentGrads& gin) {
      const double D = -1.0 / kappa - lorentz::inner(xv, yv);
      const double N = lorentz::inner(yv, vv);
      const double alpha = N / D;
      const double beta = g.dot(xv + yv);
      const double k1 = beta / D;
      const double k2 = beta * N / (D * D);
      gin[0] = alpha * g + k2 * lorentz::metric(yv);
      gin[1] = alpha * g + k1 * lorentz::metric(vv) + k2 * lorentz::metric(xv);
      gin[2] = g + k1 * lorentz::metric(yv);
    };
  });
}

/// T_{x->y}(u) = exp_y(PT_{x->y}(log_x u))
inline Var translate(const Var& x, const Var& y, const Var& u, double kappa) {
  return exp_map(y, transport(x, y, log_map(x, u, kappa), kappa), kappa);
}

/// u (-) x = T_{x->o}(u)
inline Var ominus(const Var& u, const Var& x, double kappa) {
  const Var o = x.tape->constant(lorentz::origin(x.size() - 1, kappa));
  return translate(x, o, u, kappa);
}

/// exp_o((0, z))
inline Var embed_euclidean(const Var& z, double kappa) {
  const Eigen::Index n = z.size();
  Vec v = Vec::Zero(n + 1);
  v.tail(n) = z.value();
  const Var vv = z.tape->record(std::move(v), {z}, "pad_time", [n] {
    return [n](const Vec& g, ParentGrads& gin) { gin[0] = g.tail(n); };
  });
  return exp_map(z.tape->constant(lorentz::origin(n, kappa)), vv, kappa);
}

// -------------------------------------------------------------------- layers

struct HLinearVars {
  Var W;  // row-major n x (m+1)
  Var v;
  Var b;
  Var b_prime;
  Var log_lambda;
  Activation activation = Activation::identity;
  int in_dim = 0;
  int out_dim = 0;
};

inline HLinearVars constant_hlinear(Tape& t, const HLinearParams& p) {
  const Tensor Wt = Tensor::matrix(p.W);
  return {t.constant(Wt.data), t.constant(p.v), t.constant(p.b), t.constant(Vec::Constant(1, p.b_prime)),
          t.constant(Vec::Constant(1, p.log_lambda)), p.activation, p.in_dim(), p.out_dim()};
}

/// `mask` (optional) multiplies W tau(x) + b before normalization.
inline Var hlinear(const Var& x, const HLinearVars& p, double kappa, const Vec* mask = nullptr) {
  const int m1 = p.in_dim + 1;
  if (x.size() != m1) throw DimensionError("ad::hlinear: input dimension differs from layer input dimension");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> W(p.W.value().data(), p.out_dim, m1);
  const Mat Wm = W;
  auto f = ::hkconv::detail::hlinear_forward(x.value(), Wm, p.v.value(), p.b.value(), p.b_prime.scalar(),
                                            p.log_lambda.scalar(), p.activation, kappa, mask);
  Vec y = f.y;
  return x.tape->record(std::move(y), {x, p.W, p.v, p.b, p.b_prime, p.log_lambda}, "hlinear", [&] {
    return [f = std::move(f), Wm, xv = x.value(), vv = p.v.value(), act = p.activation,
            lam = std::exp(p.log_lambda.scalar()), mask = mask ? *mask : Vec()](const Vec& g, ParentGrads& gin) {
      const Eigen::Index n = f.z.size();
      const Vec h = f.y.tail(n);
      const Vec gh = g.tail(n) + (g[0] / f.y[0]) * h;
      const Vec u = f.z / f.znorm;
      const double gr = gh.dot(u);
      const Vec gu = f.r * gh;
      Vec gz = (gu - gu.dot(u) * u) / f.znorm;
      if (mask.size() != 0) gz = gz.cwiseProduct(mask);
      const double gs = gr * lam * f.sig * (1.0 - f.sig);
      Vec tau_d = xv;
      for (Eigen::Index i = 0; i < tau_d.size(); ++i) tau_d[i] = ::hkconv::detail::activate_deriv(xv[i], act);
      gin[0] = gs * vv + (Wm.transpose() * gz).cwiseProduct(tau_d);
      Vec gW(Wm.size());
      Eigen::Map<RowMat>(gW.data(), Wm.rows(), Wm.cols()) = gz * f.tau_x.transpose();
      gin[1] = std::move(gW);
      gin[2] = gs * xv;
      gin[3] = gz;
      gin[4] = Vec::Constant(1, gs);
      gin[5] = Vec::Constant(1, gr * f.r);
    };
  });
}

/// sum_i w_i x_i / (sqrt(c) |<S,S>_L|^{1/2}); gradients flow to points and weights.
inline Var hcent(const std::vector<Var>& pts, const Var& w, double kappa) {
  if (pts.empty()) throw ParameterError("ad::hcent: no points");
  if (w.size() != static_cast<Eigen::Index>(pts.size())) throw DimensionError("ad::hcent: one weight per point");
  std::vector<const Vec*> ptr;
  for (const Var& p : pts) ptr.push_back(&p.value());
  std::vector<Var> parents = pts;
  parents.push_back(w);
  return w.tape->record(::hkconv::detail::hcent_raw(ptr, w.value(), kappa), parents, "hcent", [&] {
    std::vector<Vec> xs;
    for (const Var& p : pts) xs.push_back(p.value());
    return [xs = std::move(xs), w0 = w.value(), kappa](const Vec& g, ParentGrads& gin) {
      const double total = w0.sum();
      const Vec wv = w0 / total;
      Vec S = Vec::Zero(xs.front().size());
      for (std::size_t i = 0; i < xs.size(); ++i) S += wv[static_cast<Eigen::Index>(i)] * xs[i];
      const double q = lorentz::inner(S, S);
      const double nrm = std::sqrt(std::abs(q));
      const double sc = std::sqrt(-kappa);
      const double sgn = q < 0.0 ? -1.0 : 1.0;
      const Vec gS = g / (sc * nrm) - (sgn * g.dot(S) / (sc * nrm * nrm * nrm)) * lorentz::metric(S);
      Vec gw(static_cast<Eigen::Index>(xs.size()));
      for (std::size_t i = 0; i < xs.size(); ++i) {
        gin[i] = wv[static_cast<Eigen::Index>(i)] * gS;
        gw[static_cast<Eigen::Index>(i)] = gS.dot(xs[i]);
      }
      gin[xs.size()] = (gw.array() - gw.dot(wv)).matrix() / total;
    };
  });
}

inline Var hcent(const std::vector<Var>& pts, const Vec& w, double kappa) {
  return hcent(pts, pts.front().tape->constant(w), kappa);
}

/// (d(x, c_1), ..., d(x, c_l))
inline Var hcdist(const Var& x, const std::vector<Var>& centroids, double kappa) {
  if (centroids.empty()) throw ParameterError("ad::hcdist: empty centroid bank");
  std::vector<Var> ds;
  for (const Var& c : centroids) ds.push_back(distance(x, c, kappa));
  return concat(ds);
}

/// softmax(-d^2 / sqrt(n)) over a vector of distances.
inline Var neg_sq_softmax(const Var& d, int n) {
  Vec p = ::hkconv::detail::neg_sq_softmax(d.value(), n);
  return d.tape->record(p, {d}, "attention", [&] {
    return [p, dv = d.value(), n](const Vec& g, ParentGrads& gin) {
      const Vec gl = p.cwiseProduct((g.array() - g.dot(p)).matrix());
      gin[0] = gl.cwiseProduct(dv) * (-2.0 / std::sqrt(static_cast<double>(n)));
    };
  });
}

/// Attention weights of one query against a key list.
inline Var attention_row(const Var& q, const std::vector<Var>& keys, int n, double kappa) {
  std::vector<Var> ds;
  for (const Var& k : keys) ds.push_back(distance(q, k, kappa));
  return neg_sq_softmax(concat(ds), n);
}

struct HKConvVars {
  std::vector<HLinearVars> sublayers;
  const KernelSet* kernels = nullptr;
  ConvMode mode = ConvMode::relative;
  Pooling pooling = Pooling::uniform;
};

/// Recorded HKConv; same op sequence and summation order as the value-level
/// hkconv, so without dropout the two outputs agree bit for bit. `mask`
/// (optional) is the dropout mask shared by this node's sublayer calls.
inline Var hkconv(const Var& x, const std::vector<Var>& neighbors, const HKConvVars& p, double kappa,
                  const Vec* mask = nullptr, const Vec* attn = nullptr) {
  if (neighbors.empty()) throw ParameterError("ad::hkconv: empty neighborhood");
  Tape& t = *x.tape;
  const int K = p.kernels->K();
  const Eigen::Index m = x.size() - 1;
  std::vector<const Vec*> nb;
  for (const Var& n : neighbors) nb.push_back(&n.value());
  const std::vector<int> order = ::hkconv::detail::canonical_order(nb);

  std::vector<Var> kernels;
  for (const auto& kp : p.kernels->points) kernels.push_back(t.constant(kp.coords()));
  std::vector<Var> kernel_at_x;
  if (p.mode == ConvMode::direct) {
    const Var o = t.constant(lorentz::origin(m, kappa));
    for (const Var& k : kernels) kernel_at_x.push_back(translate(o, x, k, kappa));
  }

  std::vector<Var> xprime;
  for (int i : order) {
    const Var& xi = neighbors[i];
    const Var rel = p.mode == ConvMode::relative ? ominus(xi, x, kappa) : xi;
    std::vector<Var> xik;
    std::vector<Var> nu;
    for (int k = 0; k < K; ++k) {
      xik.push_back(hlinear(rel, p.sublayers[k], kappa, mask));
      nu.push_back(p.mode == ConvMode::relative ? distance(rel, kernels[k], kappa) : distance(xi, kernel_at_x[k], kappa));
    }
    const Var nuv = concat(nu);
    if (!(nuv.value().sum() > 0.0))
      throw DegenerateError("hkconv: every kernel correlation is zero (invariant violation)");
    xprime.push_back(hcent(xik, nuv, kappa));
  }

  if (attn) {
    Vec w(static_cast<Eigen::Index>(order.size()));
    for (std::size_t j = 0; j < order.size(); ++j) w[static_cast<Eigen::Index>(j)] = (*attn)[order[j]];
    return hcent(xprime, w, kappa);
  }
  if (p.pooling == Pooling::attention) {
    std::vector<Var> keys;
    for (int i : order) keys.push_back(neighbors[i]);
    return hcent(xprime, attention_row(x, keys, static_cast<int>(m), kappa), kappa);
  }
  return hcent(xprime, Vec::Ones(static_cast<Eigen::Index>(order.size())), kappa);
}

/// -log softmax(logits)[label]
inline Var softmax_cross_entropy(const Var& logits, int label) {
  const Vec& l = logits.value();
  if (label < 0 || label >= l.size()) throw DimensionError("ad::softmax_cross_entropy: label out of range");
  const double mx = l.maxCoeff();
  const Vec e = (l.array() - mx).exp().matrix();
  const double se = e.sum();
  const double loss = std::log(se) + mx - l[label];
  return logits.tape->record(Vec::Constant(1, loss), {logits}, "cross_entropy", [&] {
    Vec grad = e / se;
    grad[label] -= 1.0;
    return [grad = std::move(grad)](const Vec& g, ParentGrads& gin) { gin[0] = g[0] * grad; };
  });
}

// ------------------------------------------------------------------- drivers

using Leaves = std::map<std::string, Var>;
using LossFn = std::function<Var(Tape&, const Leaves&)>;

/// Places every store leaf on the tape, as trainable leaves or as constants.
inline Leaves bind(Tape& t, const ParamStore& store, bool requires_grad = true) {
  Leaves out;
  for (const auto& [path, tensor] : store.leaves())
    out.emplace(path, requires_grad ? t.leaf(tensor.data, path) : t.constant(tensor.data));
  return out;
}

inline const Var& leaf(const Leaves& leaves, const std::string& path) {
  auto it = leaves.find(path);
  if (it == leaves.end()) throw ParameterError("ad: unknown leaf '" + path + "'");
  return it->second;
}

struct ValueAndGrad {
  double loss = 0.0;
  Gradients grads;
};

inline ValueAndGrad value_and_grad(const LossFn& loss_fn, const ParamStore& store) {
  Tape t;
  const Leaves leaves = bind(t, store, true);
  const Var loss = loss_fn(t, leaves);
  if (loss.size() != 1) throw DimensionError("ad::value_and_grad: loss must be a scalar");
  t.backward(loss);
  ValueAndGrad out;
  out.loss = loss.scalar();
  for (const auto& [path, v] : leaves) out.grads.emplace(path, t.grad(v));
  return out;
}

inline Gradients grad(const LossFn& loss_fn, const ParamStore& store) { return value_and_grad(loss_fn, store).grads; }

inline double evaluate(const LossFn& loss_fn, const ParamStore& store) {
  Tape t;
  return loss_fn(t, bind(t, store, false)).scalar();
}

struct FdLeafReport {
  std::string path;
  double max_rel_error = 0.0;
  double ad_at_max = 0.0;
  double fd_at_max = 0.0;
  int directions = 0;
};

struct FdReport {
  std::vector<FdLeafReport> leaves;
  [[nodiscard]] double max_rel_error() const {
    double m = 0.0;
    for (const auto& l : leaves) m = std::max(m, l.max_rel_error);
    return m;
  }
};

/// Compares reverse-mode directional derivatives with central differences
/// (L(p + h u) - L(p - h u)) / 2h. `dirs` random unit directions per leaf, or
/// every coordinate axis when dirs <= 0. Relative error uses the floor
/// max(|ad|, |fd|, 1e-7).
inline FdReport finite_diff_check(const LossFn& loss_fn, const ParamStore& store, double h, int dirs,
                                  std::uint64_t seed = 0) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_check: h must be positive");
  const Gradients g = grad(loss_fn, store);
  CounterRng base(seed);
  FdReport report;
  for (const auto& [path, tensor] : store.leaves()) {
    FdLeafReport r;
    r.path = path;
    const Eigen::Index n = tensor.data.size();
    const int count = dirs <= 0 ? static_cast<int>(n) : dirs;
    CounterRng rng = base.split(path);
    for (int d = 0; d < count; ++d) {
      Vec u = Vec::Zero(n);
      if (dirs <= 0) {
        u[d] = 1.0;
      } else {
        for (Eigen::Index i = 0; i < n; ++i) u[i] = rng.normal();
        u /= u.norm();
      }
      ParamStore plus = store;
      ParamStore minus = store;
      plus.at(path).data += h * u;
      minus.at(path).data -= h * u;
      const double fd = (evaluate(loss_fn, plus) - evaluate(loss_fn, minus)) / (2.0 * h);
      const double adv = g.at(path).dot(u);
      const double err = std::abs(adv - fd) / std::max({std::abs(adv), std::abs(fd), 1e-7});
      if (err >= r.max_rel_error) {
        r.max_rel_error = err;
        r.ad_at_max = adv;
        r.fd_at_max = fd;
      }
    }
    r.directions = count;
    report.leaves.push_back(r);
  }
  return report;
}

}  // namespace hkconv::ad
