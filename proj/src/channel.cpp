#include "smc/channel.hpp"

#include <cmath>
#include <fmt/format.h>
#include <map>

#include "expanded_engine.hpp"
#include "smc/error.hpp"
#include "smc/kernels.hpp"
#include "smc/rng.hpp"

namespace smc {
namespace {

double mean_square(std::span<const double> v) {
  return v.empty() ? 0.0 : kernels::sum_squares(v.data(), v.size()) / static_cast<double>(v.size());
}

double sigma_for(double power, double snr_db, const std::string& scope) {
  require(power > 0.0, ErrorCode::ZeroSignalPower, fmt::format("{} has zero signal power", scope));
  return std::sqrt(power / std::pow(10.0, snr_db / 10.0));
}

void check_layout(std::span<const double> params, const ParamLayout& layout) {
  require(!params.empty(), ErrorCode::InvalidInput, "nothing to transmit");
  require(params.size() == layout.total, ErrorCode::DimensionMismatch, "parameter vector does not match its layout");
}

template <class T>
using Store = std::map<std::string, std::pair<std::vector<T>, std::vector<T>>>;

template <class T>
detail::LayerRefs<T> lift_params(const ParamMap& params, Store<T>& store) {
  detail::LayerRefs<T> refs;
  for (const auto& [name, p] : params) {
    auto& slot = store[name];
    slot.first = detail::lift<T>(p.weight.values);
    slot.second = detail::lift<T>(p.bias.values);
    refs[name] = {slot.first.data(), slot.second.data(), nullptr, nullptr};
  }
  return refs;
}

PenaltyResult finish(double norm, const ParamLayout& layout, const std::vector<double>& grad) {
  require(std::isfinite(norm), ErrorCode::NumericalError, "gradient norm is not finite");
  for (double g : grad) require(std::isfinite(g), ErrorCode::NumericalError, "penalty gradient is not finite");
  PenaltyResult r;
  r.penalty = norm;
  unflatten_params(r.grads, layout, grad);
  return r;
}

}  // namespace

std::string_view to_string(PowerMode m) { return m == PowerMode::per_tensor ? "per_tensor" : "global"; }

PowerMode power_mode_from_string(std::string_view name) {
  if (name == "per_tensor") return PowerMode::per_tensor;
  if (name == "global") return PowerMode::global;
  fail(ErrorCode::InvalidInput, fmt::format("unknown power mode '{}'", name));
}

std::vector<double> snr_to_sigma(std::span<const double> params, const ParamLayout& layout, const ChannelConfig& cfg) {
  check_layout(params, layout);
  require(!std::isnan(cfg.snr_db), ErrorCode::InvalidInput, "SNR is NaN");
  const bool noiseless = std::isinf(cfg.snr_db) && cfg.snr_db > 0.0;
  if (cfg.power_mode == PowerMode::global) {
    if (noiseless) return {0.0};
    return {sigma_for(mean_square(params), cfg.snr_db, "parameter vector")};
  }
  std::vector<double> sigma;
  for (const auto& slot : layout.slots) {
    if (noiseless) {
      sigma.push_back(0.0);
      continue;
    }
    sigma.push_back(sigma_for(mean_square(params.subspan(slot.offset, slot.length)), cfg.snr_db,
                              fmt::format("{}.{}", slot.layer, slot.role)));
  }
  return sigma;
}

std::vector<double> transmit(std::span<const double> params, const ParamLayout& layout, const ChannelConfig& cfg) {
  const auto sigma = snr_to_sigma(params, layout, cfg);
  std::vector<double> out(params.begin(), params.end());
  const RngStream base{cfg.seed, 0};
  for (std::size_t t = 0; t < layout.slots.size(); ++t) {
    const double s = cfg.power_mode == PowerMode::global ? sigma[0] : sigma[t];
    if (s == 0.0) continue;
    const auto& slot = layout.slots[t];
    const auto noise = gaussian(base.derive(static_cast<std::uint64_t>(t)), slot.length, s);
    for (std::size_t i = 0; i < slot.length; ++i) out[slot.offset + i] += noise[i];
  }
  return out;
}

ExpandedModel transmit_component(const ExpandedModel& em, const ChannelConfig& cfg) {
  FlatParams flat = component_params(em);
  flat.values = transmit(flat.values, flat.layout, cfg);
  ExpandedModel out = em;
  set_component_params(out, flat);
  return out;
}

double empirical_snr_db(std::span<const double> clean, std::span<const double> noisy) {
  require(clean.size() == noisy.size() && !clean.empty(), ErrorCode::DimensionMismatch, "vectors differ in length");
  double signal = 0.0, noise = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    signal += clean[i] * clean[i];
    noise += (noisy[i] - clean[i]) * (noisy[i] - clean[i]);
  }
  return 10.0 * std::log10(signal / noise);
}

PenaltyResult grad_norm_penalty(const ModelGraph& model, const Batch& batch, const LossSpec& loss, PenaltyMode mode) {
  const auto names = trainable_layers(model);
  require(!names.empty(), ErrorCode::InvalidInput, "model has no trainable layers");
  const FlatParams theta = flatten_params(model.params, names);
  const auto shapes = model.shapes();
  const std::size_t width = shapes.back().size();
  auto eval = [&](const auto* th, auto* gr) {
    using T = std::remove_cvref_t<decltype(*th)>;
    Store<T> store;
    auto refs = lift_params<T>(model.params, store);
    detail::bind_flat<T>(refs, theta.layout, th, gr);
    detail::SeqCache<T> cache;
    auto out = detail::forward_sequence<T>(model.layers, shapes, refs, detail::lift<T>(batch.data), batch.n, &cache);
    std::vector<T> dout;
    const T l = detail::loss_and_grad(loss, out, batch.n, width, &dout);
    detail::backward_sequence<T>(model.layers, shapes, refs, cache, std::move(dout), batch.n, false);
    return l;
  };
  std::vector<double> grad;
  const double norm = detail::grad_norm_gradient(eval, theta.values, mode, grad);
  return finish(norm, theta.layout, grad);
}

PenaltyResult grad_norm_penalty(const ExpandedModel& em, const Batch& batch, const LossSpec& loss, PenaltyMode mode) {
  const auto geo = detail::geometry(em);
  const FrozenFeatures f = frozen_features(em, batch);
  const FlatParams theta = component_params(em);
  auto eval = [&](const auto* th, auto* gr) {
    using T = std::remove_cvref_t<decltype(*th)>;
    detail::LayerRefs<T> refs;
    detail::bind_flat<T>(refs, theta.layout, th, gr);
    return detail::expanded_pass<T>(geo, refs, f.g, f.f_old, f.n, &loss, 0.0, 0.0, true).ce;
  };
  std::vector<double> grad;
  const double norm = detail::grad_norm_gradient(eval, theta.values, mode, grad);
  return finish(norm, theta.layout, grad);
}

DisturbanceResult disturbance(const ExpandedModel& em, const Batch& batch, const ChannelConfig& cfg, std::size_t trials,
                              double p) {
  require(trials >= 1, ErrorCode::InvalidInput, "need at least one trial");
  require(p > 0.0, ErrorCode::InvalidInput, "p must be positive");
  const auto geo = detail::geometry(em);
  const FrozenFeatures f = frozen_features(em, batch);
  FlatParams theta = component_params(em);
  const auto sigma = snr_to_sigma(theta.values, theta.layout, cfg);
  const Batch clean = expanded_forward(em, f);

  DisturbanceResult r;
  for (std::size_t k = 0; k < trials; ++k) {
    ChannelConfig trial = cfg;
    trial.seed = cfg.seed + k;
    const ExpandedModel noisy = transmit_component(em, trial);
    const Batch out = expanded_forward(noisy, f);
    double sq = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) sq += (out.data[i] - clean.data[i]) * (out.data[i] - clean.data[i]);
    r.trial_epsilon.push_back(std::sqrt(sq));
    r.epsilon += std::sqrt(sq);
  }
  r.epsilon /= static_cast<double>(trials);

  // ‖J_t‖_F² per slot, one output at a time: a linear loss with a one-hot
  // weight picks out a single Jacobian row.
  const std::size_t ow = geo.out_width, gw = geo.g_width, fw = geo.f_width;
  std::vector<double> jac_sq(theta.layout.slots.size(), 0.0);
  std::vector<double> grad(theta.values.size());
  detail::LayerRefs<double> refs;
  detail::bind_flat<double>(refs, theta.layout, theta.values.data(), grad.data());
  LossSpec pick{LossKind::linear, {}, std::vector<double>(ow, 0.0)};
  for (std::size_t s = 0; s < f.n; ++s) {
    std::span<const double> gs(f.g.data() + s * gw, gw);
    std::span<const double> fs(f.f_old.data() + s * fw, fw);
    for (std::size_t o = 0; o < ow; ++o) {
      std::fill(grad.begin(), grad.end(), 0.0);
      pick.targets[o] = 1.0;
      detail::expanded_pass<double>(geo, refs, gs, fs, 1, &pick, 0.0, 0.0, true);
      pick.targets[o] = 0.0;
      for (std::size_t t = 0; t < theta.layout.slots.size(); ++t) {
        const auto& slot = theta.layout.slots[t];
        jac_sq[t] += kernels::sum_squares(grad.data() + slot.offset, slot.length);
      }
    }
  }
  double var = 0.0;
  for (std::size_t t = 0; t < jac_sq.size(); ++t) {
    const double s = cfg.power_mode == PowerMode::global ? sigma[0] : sigma[t];
    var += s * s * jac_sq[t];
  }
  r.bound = p * std::sqrt(var);
  return r;
}

}  // namespace smc
