#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "smc/expandable.hpp"
#include "smc/model.hpp"

namespace smc {

enum class PowerMode { per_tensor, global };

std::string_view to_string(PowerMode m);
PowerMode power_mode_from_string(std::string_view name);

struct ChannelConfig {
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  PowerMode power_mode = PowerMode::per_tensor;
};

struct RobustnessConfig {
  double beta = 0.0;
  double p = 3.0;
  PenaltyMode penalty_mode = PenaltyMode::analytic;
};

/// Noise standard deviation per layout slot (per_tensor) or a single value
/// (global): sqrt(P / 10^(snr/10)) with P the mean square of the values in
/// scope. Throws ZeroSignalPower for an all-zero scope at finite SNR.
std::vector<double> snr_to_sigma(std::span<const double> params, const ParamLayout& layout, const ChannelConfig& cfg);

/// params + N(0, σ²) noise, slot t drawing from stream t of cfg.seed. An
/// infinite SNR returns the input unchanged.
std::vector<double> transmit(std::span<const double> params, const ParamLayout& layout, const ChannelConfig& cfg);

/// The component of `em` after passing through the channel.
ExpandedModel transmit_component(const ExpandedModel& em, const ChannelConfig& cfg);

/// 10·log10(P_signal / P_noise) of a clean vector and its noisy copy.
double empirical_snr_db(std::span<const double> clean, std::span<const double> noisy);

struct PenaltyResult {
  double penalty = 0.0;     // ‖∇θ L‖ over the trainable tensors
  ParamMap grads;           // ∂ penalty / ∂θ
};

/// Gradient-norm penalty of the trainable layers of a plain model.
PenaltyResult grad_norm_penalty(const ModelGraph& model, const Batch& batch, const LossSpec& loss, PenaltyMode mode);
/// Same for the component tensors of an expanded model, on its task loss.
PenaltyResult grad_norm_penalty(const ExpandedModel& em, const Batch& batch, const LossSpec& loss, PenaltyMode mode);

struct DisturbanceResult {
  double epsilon = 0.0;  // mean over trials of ‖Δ outputs‖_F
  double bound = 0.0;    // p · sqrt(Σ_t σ_t² ‖J_t‖_F²)
  std::vector<double> trial_epsilon;
};

/// Output disturbance caused by channel noise on the component tensors, and
/// its first-order bound from the output Jacobian. Trial k uses noise seed
/// cfg.seed + k.
DisturbanceResult disturbance(const ExpandedModel& em, const Batch& batch, const ChannelConfig& cfg,
                              std::size_t trials, double p = 3.0);

}  // namespace smc
