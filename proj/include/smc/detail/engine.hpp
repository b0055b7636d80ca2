#pragma once

// Templated layer math shared by plain models, expanded models and the
// second-order noise penalty. T is double or Dual.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "smc/dual.hpp"
#include "smc/error.hpp"
#include "smc/kernels.hpp"
#include "smc/model.hpp"

namespace smc::detail {

inline double dot(const double* a, const double* b, std::size_t n) { return kernels::dot(a, b, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { kernels::axpy(a, x, y, n); }

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc{};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
void axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

/// Where a layer reads its parameters from and (if trainable) writes its
/// gradients to. Lengths follow from the LayerSpec.
template <class T>
struct LayerRef {
  const T* w = nullptr;
  const T* b = nullptr;
  T* gw = nullptr;
  T* gb = nullptr;
};

template <class T>
using LayerRefs = std::map<std::string, LayerRef<T>, std::less<>>;

template <class T>
struct LayerCache {
  std::vector<T> input;  // dense/relu input, conv im2col columns
  std::vector<std::uint32_t> argmax;
};

template <class T>
struct SeqCache {
  std::vector<LayerCache<T>> layers;
};

inline std::vector<Shape> sequence_shapes(std::span<const LayerSpec> specs, Shape in) {
  std::vector<Shape> shapes{in};
  shapes.reserve(specs.size() + 1);
  for (const auto& s : specs) shapes.push_back(layer_output_shape(s, shapes.back()));
  return shapes;
}

template <class T>
void im2col(const T* x, const Shape& in, const Shape& out, std::size_t k, std::size_t pad, T* cols) {
  const std::size_t kk = in.c * k * k;
  for (std::size_t oy = 0; oy < out.h; ++oy) {
    for (std::size_t ox = 0; ox < out.w; ++ox) {
      T* col = cols + (oy * out.w + ox) * kk;
      std::size_t idx = 0;
      for (std::size_t c = 0; c < in.c; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t kx = 0; kx < k; ++kx, ++idx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(in.h) &&
                                ix < static_cast<std::ptrdiff_t>(in.w);
            col[idx] = inside ? x[(c * in.h + static_cast<std::size_t>(iy)) * in.w + static_cast<std::size_t>(ix)] : T{};
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const Shape& in, const Shape& out, std::size_t k, std::size_t pad, T* dx) {
  const std::size_t kk = in.c * k * k;
  for (std::size_t oy = 0; oy < out.h; ++oy) {
    for (std::size_t ox = 0; ox < out.w; ++ox) {
      const T* col = cols + (oy * out.w + ox) * kk;
      std::size_t idx = 0;
      for (std::size_t c = 0; c < in.c; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t kx = 0; kx < k; ++kx, ++idx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(in.h) && ix < static_cast<std::ptrdiff_t>(in.w)) {
              dx[(c * in.h + static_cast<std::size_t>(iy)) * in.w + static_cast<std::size_t>(ix)] += col[idx];
            }
          }
        }
      }
    }
  }
}

template <class T>
std::vector<T> forward_layer(const LayerSpec& spec, const Shape& in, const Shape& out, const LayerRef<T>* ref,
                             std::vector<T> x, std::size_t n, LayerCache<T>* cache) {
  const std::size_t in_w = in.size();
  const std::size_t out_w = out.size();
  switch (spec.kind) {
    case LayerKind::dense: {
      std::vector<T> y(n * out_w);
      for (std::size_t s = 0; s < n; ++s) {
        const T* xs = x.data() + s * in_w;
        for (std::size_t o = 0; o < out_w; ++o) y[s * out_w + o] = dot(ref->w + o * in_w, xs, in_w) + ref->b[o];
      }
      if (cache) cache->input = std::move(x);
      return y;
    }
    case LayerKind::conv2d: {
      const std::size_t kk = in.c * spec.kernel * spec.kernel;
      const std::size_t positions = out.h * out.w;
      std::vector<T> cols(n * positions * kk);
      std::vector<T> y(n * out_w);
      for (std::size_t s = 0; s < n; ++s) {
        T* sc = cols.data() + s * positions * kk;
        im2col(x.data() + s * in_w, in, out, spec.kernel, spec.pad, sc);
        for (std::size_t co = 0; co < out.c; ++co) {
          const T* wrow = ref->w + co * kk;
          T* ys = y.data() + s * out_w + co * positions;
          for (std::size_t p = 0; p < positions; ++p) ys[p] = dot(wrow, sc + p * kk, kk) + ref->b[co];
        }
      }
      if (cache) cache->input = std::move(cols);
      return y;
    }
    case LayerKind::relu: {
      std::vector<T> y(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{} ? x[i] : T{};
      if (cache) cache->input = std::move(x);
      return y;
    }
    case LayerKind::maxpool2x2: {
      std::vector<T> y(n * out_w);
      std::vector<std::uint32_t> arg(n * out_w);
      for (std::size_t s = 0; s < n; ++s) {
        const T* xs = x.data() + s * in_w;
        for (std::size_t c = 0; c < out.c; ++c) {
          for (std::size_t oy = 0; oy < out.h; ++oy) {
            for (std::size_t ox = 0; ox < out.w; ++ox) {
              std::size_t best = (c * in.h + 2 * oy) * in.w + 2 * ox;
              for (std::size_t dy = 0; dy < 2; ++dy) {
                for (std::size_t dx = 0; dx < 2; ++dx) {
                  const std::size_t idx = (c * in.h + 2 * oy + dy) * in.w + 2 * ox + dx;
                  if (xs[idx] > xs[best]) best = idx;
                }
              }
              const std::size_t o = s * out_w + (c * out.h + oy) * out.w + ox;
              y[o] = xs[best];
              arg[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
      }
      if (cache) cache->argmax = std::move(arg);
      return y;
    }
    case LayerKind::flatten:
      return x;
    case LayerKind::concat_channels:
      fail(ErrorCode::InvalidInput, "concat_channels joins two branches and cannot run inside a sequence");
  }
  return x;
}

/// Propagates grad (n × out) through one layer. Accumulates parameter
/// gradients when ref has gradient slots; returns the input gradient when
/// need_input is set (empty otherwise).
template <class T>
std::vector<T> backward_layer(const LayerSpec& spec, const Shape& in, const Shape& out, const LayerRef<T>* ref,
                              const LayerCache<T>& cache, const std::vector<T>& grad, std::size_t n, bool need_input) {
  const std::size_t in_w = in.size();
  const std::size_t out_w = out.size();
  std::vector<T> dx;
  if (need_input) dx.assign(n * in_w, T{});
  switch (spec.kind) {
    case LayerKind::dense: {
      for (std::size_t s = 0; s < n; ++s) {
        const T* xs = cache.input.data() + s * in_w;
        const T* gs = grad.data() + s * out_w;
        for (std::size_t o = 0; o < out_w; ++o) {
          if (ref->gw) axpy(gs[o], xs, ref->gw + o * in_w, in_w);
          if (ref->gb) ref->gb[o] += gs[o];
          if (need_input) axpy(gs[o], ref->w + o * in_w, dx.data() + s * in_w, in_w);
        }
      }
      return dx;
    }
    case LayerKind::conv2d: {
      const std::size_t kk = in.c * spec.kernel * spec.kernel;
      const std::size_t positions = out.h * out.w;
      std::vector<T> dcols(need_input ? positions * kk : 0);
      for (std::size_t s = 0; s < n; ++s) {
        const T* sc = cache.input.data() + s * positions * kk;
        if (need_input) std::fill(dcols.begin(), dcols.end(), T{});
        for (std::size_t co = 0; co < out.c; ++co) {
          const T* gs = grad.data() + s * out_w + co * positions;
          for (std::size_t p = 0; p < positions; ++p) {
            if (ref->gw) axpy(gs[p], sc + p * kk, ref->gw + co * kk, kk);
            if (ref->gb) ref->gb[co] += gs[p];
            if (need_input) axpy(gs[p], ref->w + co * kk, dcols.data() + p * kk, kk);
          }
        }
        if (need_input) col2im_add(dcols.data(), in, out, spec.kernel, spec.pad, dx.data() + s * in_w);
      }
      return dx;
    }
    case LayerKind::relu: {
      if (need_input)
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = cache.input[i] > T{} ? grad[i] : T{};
      return dx;
    }
    case LayerKind::maxpool2x2: {
      if (need_input) {
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t o = 0; o < out_w; ++o) dx[s * in_w + cache.argmax[s * out_w + o]] += grad[s * out_w + o];
      }
      return dx;
    }
    case LayerKind::flatten:
      if (need_input) dx = grad;
      return dx;
    case LayerKind::concat_channels:
      fail(ErrorCode::InvalidInput, "concat_channels joins two branches and cannot run inside a sequence");
  }
  return dx;
}

template <class T>
const LayerRef<T>* find_ref(const LayerRefs<T>& refs, const LayerSpec& spec) {
  if (!spec.has_params()) return nullptr;
  auto it = refs.find(spec.name);
  require(it != refs.end(), ErrorCode::NotFound, "no parameters bound for layer " + spec.name);
  return &it->second;
}

struct Capture {
  std::span<const std::string> names;
  std::function<void(const std::string&, const Shape&, std::span<const double>)> sink;
};

template <class T>
std::vector<T> forward_sequence(std::span<const LayerSpec> specs, std::span<const Shape> shapes, const LayerRefs<T>& refs,
                                std::vector<T> x, std::size_t n, SeqCache<T>* cache, const Capture* capture = nullptr) {
  if (cache) cache->layers.assign(specs.size(), {});
  for (std::size_t i = 0; i < specs.size(); ++i) {
    x = forward_layer(specs[i], shapes[i], shapes[i + 1], find_ref(refs, specs[i]), std::move(x), n,
                      cache ? &cache->layers[i] : nullptr);
    if constexpr (std::is_same_v<T, double>) {
      if (capture && std::find(capture->names.begin(), capture->names.end(), specs[i].name) != capture->names.end())
        capture->sink(specs[i].name, shapes[i + 1], x);
    }
  }
  return x;
}

/// Backward through a sequence. Stops early once no layer below needs a
/// gradient, unless the input gradient is requested.
template <class T>
std::vector<T> backward_sequence(std::span<const LayerSpec> specs, std::span<const Shape> shapes,
                                 const LayerRefs<T>& refs, const SeqCache<T>& cache, std::vector<T> grad,
                                 std::size_t n, bool need_input) {
  std::size_t lowest = specs.size();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!specs[i].has_params()) continue;
    const auto* ref = find_ref(refs, specs[i]);
    if (ref->gw || ref->gb) {
      lowest = i;
      break;
    }
  }
  if (need_input) lowest = 0;
  for (std::size_t i = specs.size(); i-- > lowest;) {
    const bool below_needed = need_input || i > lowest;
    grad = backward_layer(specs[i], shapes[i], shapes[i + 1], find_ref(refs, specs[i]), cache.layers[i], grad, n,
                          below_needed);
  }
  if (!need_input) grad.clear();
  return grad;
}

template <class T>
T softplus(const T& z) {
  using std::exp;
  using std::log;
  // log(1 + e^z) without overflow
  if (z > T{}) return z + log(T{1.0} + exp(-z));
  return log(T{1.0} + exp(z));
}

template <class T>
T sigmoid(const T& z) {
  using std::exp;
  if (z >= T{}) return T{1.0} / (T{1.0} + exp(-z));
  const T e = exp(z);
  return e / (T{1.0} + e);
}

/// Loss over n × width outputs; writes dLoss/dOutput into grad when given.
template <class T>
T loss_and_grad(const LossSpec& loss, const std::vector<T>& out, std::size_t n, std::size_t width, std::vector<T>* grad) {
  using std::exp;
  using std::log;
  if (grad) grad->assign(n * width, T{});
  T total{};
  switch (loss.kind) {
    case LossKind::softmax_cross_entropy: {
      require(loss.labels.size() == n, ErrorCode::DimensionMismatch, "label count differs from batch size");
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t s = 0; s < n; ++s) {
        const T* z = out.data() + s * width;
        const auto label = static_cast<std::size_t>(loss.labels[s]);
        require(label < width, ErrorCode::InvalidInput, "label outside the output range");
        T m = z[0];
        for (std::size_t j = 1; j < width; ++j)
          if (z[j] > m) m = z[j];
        T sum{};
        for (std::size_t j = 0; j < width; ++j) sum += exp(z[j] - m);
        const T log_sum = log(sum);
        total += (log_sum - (z[label] - m)) * T{inv_n};
        if (grad) {
          for (std::size_t j = 0; j < width; ++j) {
            T p = exp(z[j] - m - log_sum);
            if (j == label) p -= T{1.0};
            (*grad)[s * width + j] = p * T{inv_n};
          }
        }
      }
      return total;
    }
    case LossKind::sigmoid_cross_entropy: {
      require(loss.targets.size() == n * width, ErrorCode::DimensionMismatch, "target count differs from outputs");
      const double inv = 1.0 / static_cast<double>(n * width);
      for (std::size_t i = 0; i < n * width; ++i) {
        const T& z = out[i];
        const double t = loss.targets[i];
        total += (softplus(z) - z * T{t}) * T{inv};
        if (grad) (*grad)[i] = (sigmoid(z) - T{t}) * T{inv};
      }
      return total;
    }
    case LossKind::mean_squared: {
      require(loss.targets.size() == n * width, ErrorCode::DimensionMismatch, "target count differs from outputs");
      const double inv = 1.0 / static_cast<double>(n * width);
      for (std::size_t i = 0; i < n * width; ++i) {
        const T diff = out[i] - T{loss.targets[i]};
        total += diff * diff * T{inv};
        if (grad) (*grad)[i] = T{2.0 * inv} * diff;
      }
      return total;
    }
    case LossKind::linear: {
      require(loss.targets.size() == n * width, ErrorCode::DimensionMismatch, "target count differs from outputs");
      for (std::size_t i = 0; i < n * width; ++i) {
        total += out[i] * T{loss.targets[i]};
        if (grad) (*grad)[i] = T{loss.targets[i]};
      }
      return total;
    }
  }
  return total;
}

/// Binds a ParamMap (read-only) for forward passes in double.
inline LayerRefs<double> bind_params(const ParamMap& params) {
  LayerRefs<double> refs;
  for (const auto& [name, p] : params) refs[name] = {p.weight.values.data(), p.bias.values.data(), nullptr, nullptr};
  return refs;
}

/// Binds a flat parameter vector and an optional flat gradient vector laid out
/// by `layout` (weight then bias per layer).
template <class T>
void bind_flat(LayerRefs<T>& refs, const ParamLayout& layout, const T* theta, T* grad) {
  for (const auto& slot : layout.slots) {
    auto& ref = refs[slot.layer];
    if (slot.role == "weight") {
      ref.w = theta + slot.offset;
      ref.gw = grad ? grad + slot.offset : nullptr;
    } else {
      ref.b = theta + slot.offset;
      ref.gb = grad ? grad + slot.offset : nullptr;
    }
  }
}

template <class T>
std::vector<T> lift(std::span<const double> x) {
  return std::vector<T>(x.begin(), x.end());
}

}  // namespace smc::detail
