#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smc/linalg.hpp"
#include "smc/model.hpp"

namespace smc {

inline constexpr double kDefaultVarianceKeep = 0.99;
inline constexpr double kDefaultRhoThreshold = 0.6;
inline constexpr std::size_t kDefaultProbeSize = 512;

struct SvccaResult {
  double rho1 = 0.0;
  std::size_t k_a = 0;  // directions kept from the first representation
  std::size_t k_b = 0;
};

/// SVCCA similarity of two neurons × samples representations: centre each
/// row, keep the smallest SVD subspace explaining at least `variance_keep` of
/// the variance, then return the top canonical correlation between the two
/// subspaces.
///
/// Throws DimensionMismatch when sample counts differ,
/// DegenerateRepresentation when either input has no variance, and
/// InvalidInput when variance_keep is outside (0, 1] or the kept subspace is
/// not smaller than the sample count.
SvccaResult svcca_similarity(const Matrix& rep_a, const Matrix& rep_b, double variance_keep = kDefaultVarianceKeep);
SvccaResult svcca_similarity(const ActivationRecord& rep_a, const ActivationRecord& rep_b,
                             double variance_keep = kDefaultVarianceKeep);

/// All canonical correlations (descending) between two already-reduced
/// representations, with ridge 1e-8·trace/dim on each covariance.
std::vector<double> canonical_correlations(const Matrix& a, const Matrix& b);

/// Projection of a centred representation onto its top principal directions
/// (k × samples).
Matrix truncate_to_variance(const Matrix& centered, double variance_keep);

struct CcaProfile {
  std::vector<std::string> candidates;
  std::vector<double> rho1;
  std::vector<std::pair<std::size_t, std::size_t>> retained_dims;
};

/// Layers whose activations represent a candidate: the layer itself, or every
/// non-flatten layer of a block.
std::vector<std::string> candidate_layers(const ModelGraph& model, const std::string& candidate);

/// ρ₁ per candidate for the same probe batch pushed through both models.
/// Block candidates average the ρ₁ of their layers; retained dims are those
/// of the block's last measured layer.
CcaProfile layer_profile(const ModelGraph& model_a, const ModelGraph& model_b, const Batch& probe,
                         std::span<const std::string> candidates, double variance_keep = kDefaultVarianceKeep);

struct SplitPlan {
  std::string split_layer;  // last layer of Φ_G; empty when Φ_G is empty
  std::string split_candidate;
  std::vector<std::string> phi_g_layers;
  std::vector<std::string> phi_s_layers;
  double threshold = 0.0;
  std::optional<std::size_t> component_bytes;
};

/// Split after the deepest candidate with ρ₁ ≥ rho_t (the whole extractor is
/// special when none qualifies). size_table, when non-empty, supplies the
/// component size of each candidate.
SplitPlan select_split(const ModelGraph& model, const CcaProfile& profile, double rho_t,
                       std::span<const std::size_t> size_table = {});

/// Split placed directly after a named candidate (layer or block), or before
/// the first layer when candidate is empty.
SplitPlan split_after(const ModelGraph& model, const std::string& candidate);

}  // namespace smc
