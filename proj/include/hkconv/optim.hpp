#pragma once

#include "hkconv/manifold.hpp"
#include "hkconv/params.hpp"

namespace hkconv {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with bias correction and decoupled weight decay. Leaves without a
/// gradient entry are left untouched.
inline void adam_step(ParamStore& store, const Gradients& grads, const AdamConfig& cfg) {
  for (const auto& [path, g] : grads) {
    Tensor& leaf = store.at(path);
    if (g.size() != leaf.data.size())
      throw DimensionError("adam_step: gradient for '" + path + "' has " + std::to_string(g.size()) +
                           " entries, leaf has " + std::to_string(leaf.data.size()));
    AdamMoments& mom = store.moments()[path];
    if (mom.m.size() != g.size()) {
      mom.m = Vec::Zero(g.size());
      mom.v = Vec::Zero(g.size());
      mom.step = 0;
    }
    ++mom.step;
    mom.m = cfg.beta1 * mom.m + (1.0 - cfg.beta1) * g;
    mom.v = cfg.beta2 * mom.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mom.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mom.step));
    const Vec mhat = mom.m / bc1;
    const Vec vhat = mom.v / bc2;
    Vec update = (mhat.array() / (vhat.array().sqrt() + cfg.eps)).matrix();
    if (cfg.weight_decay != 0.0) update += cfg.weight_decay * leaf.data;
    leaf.data -= cfg.lr * update;
  }
}

/// One Riemannian gradient-descent step: exp_x(-lr * rgrad).
inline Vec rgd_step(const Vec& x, const Vec& rgrad, double lr, double kappa) {
  return lorentz::exp(x, -lr * rgrad, kappa);
}

inline LorentzPoint rgd_step(const LorentzPoint& point, const TangentVector& rgrad, double lr, double tol = 1e-9) {
  detail::require_same_space(point, rgrad.base, "rgd_step");
  detail::require_tangent(point.coords(), rgrad.vec, tol, "rgd_step");
  return LorentzPoint::unchecked(rgd_step(point.coords(), rgrad.vec, lr, point.curvature()), point.curvature());
}

}  // namespace hkconv
