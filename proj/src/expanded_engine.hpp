#pragma once

// Expanded-model passes shared by training, evaluation and the channel
// module. Frozen features are computed once; only phi_s_new and the new head
// run per step.

#include <cmath>
#include <span>
#include <vector>

#include "smc/detail/engine.hpp"
#include "smc/expandable.hpp"

namespace smc::detail {

struct Geometry {
  std::vector<LayerSpec> s_specs;
  std::vector<LayerSpec> h_specs;
  std::vector<Shape> s_shapes;
  std::vector<Shape> h_shapes;
  std::size_t g_width = 0;
  std::size_t f_width = 0;
  std::size_t out_width = 0;
};

Geometry geometry(const ExpandedModel& em);

template <class T>
struct PassResult {
  T loss{};
  T ce{};
  double semdist = 0.0;
  std::vector<T> out;
};

/// Gradient of min(d, cap) with respect to f_new, d being the distance of
/// the batch means of row-normalised features. Returns d.
template <class T>
T semantic_term(const std::vector<T>& f_new, std::span<const double> f_old, std::size_t n, std::size_t w,
                std::vector<T>* grad) {
  using std::sqrt;
  std::vector<T> unit(n * w);
  std::vector<T> norms(n);
  std::vector<T> diff(w);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    const T* f = f_new.data() + s * w;
    T sq{};
    for (std::size_t j = 0; j < w; ++j) sq += f[j] * f[j];
    norms[s] = sqrt(sq);
    if (value_of(norms[s]) < 1e-12) continue;
    for (std::size_t j = 0; j < w; ++j) {
      unit[s * w + j] = f[j] / norms[s];
      diff[j] += unit[s * w + j] * T{inv_n};
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    const double* o = f_old.data() + s * w;
    double on = 0.0;
    for (std::size_t j = 0; j < w; ++j) on += o[j] * o[j];
    on = std::sqrt(on);
    if (on < 1e-12) continue;
    for (std::size_t j = 0; j < w; ++j) diff[j] -= T{o[j] / on * inv_n};
  }
  T d2{};
  for (std::size_t j = 0; j < w; ++j) d2 += diff[j] * diff[j];
  const T d = sqrt(d2);
  if (grad) {
    grad->assign(n * w, T{});
    if (value_of(d) < 1e-12) return d;
    for (std::size_t s = 0; s < n; ++s) {
      if (value_of(norms[s]) < 1e-12) continue;
      // q = diff / (d n);  ∂d/∂f = (q − u (u·q)) / ‖f‖
      const T* u = unit.data() + s * w;
      T uq{};
      for (std::size_t j = 0; j < w; ++j) uq += u[j] * diff[j];
      const T scale = T{inv_n} / (d * norms[s]);
      for (std::size_t j = 0; j < w; ++j) (*grad)[s * w + j] = (diff[j] - u[j] * uq) * scale;
    }
  }
  return d;
}

/// Loss of the expanded model on frozen features. When `backprop` is set the
/// gradient lands in the refs' gradient slots (callers zero them).
template <class T>
PassResult<T> expanded_pass(const Geometry& geo, const LayerRefs<T>& refs, std::span<const double> g,
                            std::span<const double> f_old, std::size_t n, const LossSpec* loss, double lambda,
                            double cap, bool backprop) {
  PassResult<T> r;
  SeqCache<T> s_cache, h_cache;
  const bool has_s = !geo.s_specs.empty();
  std::vector<T> f_new = has_s ? forward_sequence<T>(geo.s_specs, geo.s_shapes, refs, lift<T>(g), n, backprop ? &s_cache : nullptr)
                               : lift<T>(g);
  const std::size_t w = geo.f_width;
  std::vector<T> z(n * 2 * w);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < w; ++j) {
      z[s * 2 * w + j] = T{f_old[s * w + j]};
      z[s * 2 * w + w + j] = f_new[s * w + j];
    }
  }
  r.out = forward_sequence<T>(geo.h_specs, geo.h_shapes, refs, std::move(z), n, backprop ? &h_cache : nullptr);
  if (!loss) return r;

  std::vector<T> dout;
  r.ce = loss_and_grad(*loss, r.out, n, geo.out_width, backprop ? &dout : nullptr);
  r.loss = r.ce;
  std::vector<T> dsem;
  const bool semantic = lambda > 0.0 && has_s;
  if (semantic) {
    const T d = semantic_term<T>(f_new, f_old, n, w, backprop ? &dsem : nullptr);
    r.semdist = value_of(d);
    if (value_of(d) < cap) {
      r.loss -= T{lambda} * d;
      for (auto& v : dsem) v *= T{-lambda};
    } else {
      r.loss -= T{lambda * cap};
      dsem.clear();
    }
  }
  if (!backprop) return r;
  std::vector<T> dz = backward_sequence<T>(geo.h_specs, geo.h_shapes, refs, h_cache, std::move(dout), n, has_s);
  if (!has_s) return r;
  std::vector<T> df(n * w);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < w; ++j) df[s * w + j] = dz[s * 2 * w + w + j];
  if (!dsem.empty())
    for (std::size_t i = 0; i < df.size(); ++i) df[i] += dsem[i];
  backward_sequence<T>(geo.s_specs, geo.s_shapes, refs, s_cache, std::move(df), n, false);
  return r;
}

/// ‖∇θ L‖ and its gradient H·∇L/‖∇L‖. `eval(theta, grad)` must return the
/// loss for any scalar type and add ∇θ L into grad.
template <class Eval>
double grad_norm_gradient(Eval&& eval, std::span<const double> theta, PenaltyMode mode, std::vector<double>& out) {
  const std::size_t dim = theta.size();
  std::vector<double> g(dim, 0.0);
  eval(theta.data(), g.data());
  const double norm = std::sqrt(kernels::sum_squares(g.data(), dim));
  out.assign(dim, 0.0);
  if (!(norm > 1e-300)) return norm;
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = g[i] / norm;
  if (mode == PenaltyMode::analytic) {
    std::vector<Dual> th(dim), gd(dim);
    for (std::size_t i = 0; i < dim; ++i) th[i] = Dual{theta[i], v[i]};
    eval(static_cast<const Dual*>(th.data()), gd.data());
    for (std::size_t i = 0; i < dim; ++i) out[i] = gd[i].d;
  } else {
    const double eps = 1e-5;
    std::vector<double> tp(theta.begin(), theta.end()), tm(theta.begin(), theta.end());
    for (std::size_t i = 0; i < dim; ++i) {
      tp[i] += eps * v[i];
      tm[i] -= eps * v[i];
    }
    std::vector<double> gp(dim, 0.0), gm(dim, 0.0);
    eval(static_cast<const double*>(tp.data()), gp.data());
    eval(static_cast<const double*>(tm.data()), gm.data());
    for (std::size_t i = 0; i < dim; ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps);
  }
  return norm;
}

}  // namespace smc::detail
