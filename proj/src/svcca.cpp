#include "smc/svcca.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "smc/error.hpp"
#include "smc/kernels.hpp"

namespace smc {
namespace {

// Relative cut-off below which an eigenvalue counts as numerically zero.
constexpr double kRankTolerance = 1e-12;

Matrix inverse_sqrt(const Matrix& cov) {
  double trace = 0.0;
  for (std::size_t i = 0; i < cov.rows; ++i) trace += cov(i, i);
  const double ridge = 1e-8 * trace / static_cast<double>(cov.rows);
  Matrix reg = cov;
  for (std::size_t i = 0; i < reg.rows; ++i) reg(i, i) += ridge;
  const EigenResult eig = symmetric_eigen(reg);
  const std::size_t n = cov.rows;
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double scale = 1.0 / std::sqrt(std::max(eig.values[k], ridge));
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = eig.vectors(i, k) * scale;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * eig.vectors(j, k);
    }
  }
  return out;
}

std::size_t last_layer_index(const ModelGraph& model, const std::string& candidate) {
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].name == candidate || model.layers[i].block == candidate) last = i;
  require(last.has_value(), ErrorCode::NotFound, fmt::format("no layer or block named '{}'", candidate));
  return *last;
}

}  // namespace

Matrix truncate_to_variance(const Matrix& centered, double variance_keep) {
  const std::size_t m = centered.rows;
  const std::size_t n = centered.cols;
  // Eigen-decompose the smaller Gram matrix: X Xᵀ = U S² Uᵀ or Xᵀ X = V S² Vᵀ.
  const bool neuron_side = m <= n;
  Matrix gram = neuron_side ? matmul_transposed(centered, centered) : matmul_transposed(transpose(centered), transpose(centered));
  const EigenResult eig = symmetric_eigen(gram);
  const std::size_t dim = eig.values.size();

  double total = 0.0;
  for (double v : eig.values) total += std::max(v, 0.0);
  require(total > 0.0, ErrorCode::DegenerateRepresentation, "representation has zero variance");

  const double floor = eig.values.back() * kRankTolerance;
  std::size_t keep = 0;
  double acc = 0.0;
  for (std::size_t r = 0; r < dim; ++r) {
    const double lambda = eig.values[dim - 1 - r];
    if (lambda <= floor) break;
    acc += lambda;
    ++keep;
    if (acc >= variance_keep * total * (1.0 - 1e-12)) break;
  }

  Matrix reduced(keep, n);
  for (std::size_t r = 0; r < keep; ++r) {
    const std::size_t col = dim - 1 - r;
    if (neuron_side) {
      // u_rᵀ X
      for (std::size_t i = 0; i < m; ++i) {
        const double u = eig.vectors(i, col);
        if (u != 0.0) kernels::axpy(u, centered.row(i).data(), reduced.row(r).data(), n);
      }
    } else {
      const double s = std::sqrt(eig.values[col]);
      for (std::size_t j = 0; j < n; ++j) reduced(r, j) = s * eig.vectors(j, col);
    }
  }
  return reduced;
}

std::vector<double> canonical_correlations(const Matrix& a, const Matrix& b) {
  require(a.cols == b.cols, ErrorCode::DimensionMismatch, "representations have different sample counts");
  const Matrix saa = centered_cross_covariance(a, a);
  const Matrix sbb = centered_cross_covariance(b, b);
  const Matrix sab = centered_cross_covariance(a, b);
  const Matrix whitened = matmul(matmul(inverse_sqrt(saa), sab), inverse_sqrt(sbb));
  std::vector<double> rho = svd(whitened).s;
  for (double& r : rho) r = std::clamp(r, 0.0, 1.0);
  std::sort(rho.begin(), rho.end(), std::greater<>());
  return rho;
}

SvccaResult svcca_similarity(const Matrix& rep_a, const Matrix& rep_b, double variance_keep) {
  require(rep_a.cols == rep_b.cols, ErrorCode::DimensionMismatch,
          fmt::format("sample counts differ ({} vs {})", rep_a.cols, rep_b.cols));
  require(variance_keep > 0.0 && variance_keep <= 1.0, ErrorCode::InvalidInput, "variance_keep must lie in (0, 1]");
  require(rep_a.all_finite() && rep_b.all_finite(), ErrorCode::InvalidInput, "representation is not finite");
  require(rep_a.rows > 0 && rep_b.rows > 0 && rep_a.cols >= 2, ErrorCode::InvalidInput,
          "representations need neurons and at least two samples");
  Matrix a = rep_a;
  Matrix b = rep_b;
  center_rows(a);
  center_rows(b);
  const Matrix ra = truncate_to_variance(a, variance_keep);
  const Matrix rb = truncate_to_variance(b, variance_keep);
  require(std::max(ra.rows, rb.rows) < rep_a.cols, ErrorCode::InvalidInput,
          fmt::format("need more samples ({}) than kept directions ({})", rep_a.cols, std::max(ra.rows, rb.rows)));
  const auto rho = canonical_correlations(ra, rb);
  return {rho.empty() ? 0.0 : rho.front(), ra.rows, rb.rows};
}

SvccaResult svcca_similarity(const ActivationRecord& rep_a, const ActivationRecord& rep_b, double variance_keep) {
  return svcca_similarity(rep_a.values, rep_b.values, variance_keep);
}

std::vector<std::string> candidate_layers(const ModelGraph& model, const std::string& candidate) {
  std::vector<std::string> names;
  for (const auto& layer : model.layers) {
    if (layer.name == candidate) return {layer.name};
    if (layer.block == candidate && layer.kind != LayerKind::flatten) names.push_back(layer.name);
  }
  require(!names.empty(), ErrorCode::NotFound, fmt::format("no layer or block named '{}'", candidate));
  return names;
}

CcaProfile layer_profile(const ModelGraph& model_a, const ModelGraph& model_b, const Batch& probe,
                         std::span<const std::string> candidates, double variance_keep) {
  std::vector<std::string> capture;
  for (const auto& c : candidates) {
    for (const auto& name : candidate_layers(model_a, c)) capture.push_back(name);
    (void)candidate_layers(model_b, c);
  }
  std::sort(capture.begin(), capture.end());
  capture.erase(std::unique(capture.begin(), capture.end()), capture.end());

  const auto fa = forward(model_a, probe, capture);
  const auto fb = forward(model_b, probe, capture);
  auto record = [&](const ForwardResult& f, const std::string& name) -> const ActivationRecord& {
    return *std::find_if(f.records.begin(), f.records.end(), [&](const auto& r) { return r.layer_name == name; });
  };

  CcaProfile profile;
  for (const auto& c : candidates) {
    const auto layers = candidate_layers(model_a, c);
    double sum = 0.0;
    SvccaResult last;
    for (const auto& name : layers) {
      last = svcca_similarity(record(fa, name), record(fb, name), variance_keep);
      sum += last.rho1;
    }
    profile.candidates.push_back(c);
    profile.rho1.push_back(sum / static_cast<double>(layers.size()));
    profile.retained_dims.emplace_back(last.k_a, last.k_b);
  }
  return profile;
}

SplitPlan split_after(const ModelGraph& model, const std::string& candidate) {
  SplitPlan plan;
  plan.split_candidate = candidate;
  std::size_t g_end = 0;
  if (!candidate.empty()) {
    g_end = last_layer_index(model, candidate) + 1;
    require(g_end <= model.head_start, ErrorCode::InvalidInput, "split point lies inside the task head");
    plan.split_layer = model.layers[g_end - 1].name;
  }
  for (std::size_t i = 0; i < model.head_start; ++i)
    (i < g_end ? plan.phi_g_layers : plan.phi_s_layers).push_back(model.layers[i].name);
  return plan;
}

SplitPlan select_split(const ModelGraph& model, const CcaProfile& profile, double rho_t,
                       std::span<const std::size_t> size_table) {
  require(!profile.candidates.empty(), ErrorCode::InvalidInput, "empty CCA profile");
  require(profile.rho1.size() == profile.candidates.size(), ErrorCode::DimensionMismatch, "profile columns differ");
  require(rho_t > 0.0 && rho_t < 1.0, ErrorCode::InvalidInput, "rho_t must lie in (0, 1)");
  require(size_table.empty() || size_table.size() == profile.candidates.size(), ErrorCode::DimensionMismatch,
          "size table length differs from the profile");
  std::optional<std::size_t> chosen;
  for (std::size_t i = 0; i < profile.candidates.size(); ++i)
    if (profile.rho1[i] >= rho_t) chosen = i;
  SplitPlan plan = split_after(model, chosen ? profile.candidates[*chosen] : std::string{});
  plan.threshold = rho_t;
  if (chosen && !size_table.empty()) plan.component_bytes = size_table[*chosen];
  return plan;
}

}  // namespace smc
