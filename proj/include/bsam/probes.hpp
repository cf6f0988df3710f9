#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bsam/autodiff.hpp"
#include "bsam/models.hpp"
#include "bsam/optimizers.hpp"
#include "bsam/tensor.hpp"

namespace bsam {

struct SharpnessEstimate {
  double value = 0.0;
  bool degenerate = false;  // zero gradient, no perturbation direction
};

// L(w + eps_max) - L(w) at the first-order ascent perturbation.
SharpnessEstimate max_sharpness(const ParamVector& params, const Batch& batch, const ModelSpec& spec, double rho);
// L(w) - L(w + eps_min) at the first-order descent perturbation.
SharpnessEstimate min_sharpness(const ParamVector& params, const Batch& batch, const ModelSpec& spec, double rho);

// Central-difference Hessian-vector product along v / ||v||, rescaled by ||v||.
// For MLPs both gradients keep the ReLU on/off pattern of `params`, so a
// sample sitting within h of a kink does not turn the gradient jump into a
// 1/h spike; the result is the Hessian of the local smooth piece.
ParamVector hvp(const ParamVector& params, const ParamVector& v, const Batch& batch, const ModelSpec& spec, double h);
// 1e-4 * max(1, ||w||)
double default_hvp_step(const ParamVector& params);

struct Eigenpair {
  double value = 0.0;
  double residual = 0.0;  // ||H v - lambda v|| / |lambda|
  ParamVector vector;
  int iterations = 0;
};

// Power iteration with deflation over finite-difference HVPs. When the
// dominant eigenvalue is negative (or does not settle) a second pass runs on
// H + sigma I, sigma ~ spectral radius, so the largest algebraic eigenvalue is
// returned. Results are sorted by descending eigenvalue.
std::vector<Eigenpair> top_eigenvalues(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                                       std::size_t k, int iters, double tol, std::uint64_t seed);

struct SharpnessReport {
  double max_s = 0.0;
  double min_s = 0.0;
  double bil_s = 0.0;
  double rho_used = 0.0;
  bool degenerate = false;
  std::vector<double> eigenvalues;
  std::vector<double> eig_residuals;
};

struct ReportOptions {
  double rho = 0.05;
  std::size_t k = 1;
  int iters = 200;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

SharpnessReport sharpness_report(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                                 const ReportOptions& options);

struct CosineSummary {
  std::array<std::optional<double>, 10> decile_means;
  double final_decile_mean = 0.0;
  double final_decile_negative_fraction = 0.0;
  std::size_t samples = 0;
};

// Steps are assigned to decile floor(10 i / n); steps without a cosine are
// skipped. The final decile is the last one that holds any samples.
CosineSummary cosine_diagnostic(std::span<const StepStats> trace);

struct LossSlice {
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<double> losses;  // row-major, losses[i * grid + j] = L(w + alpha_i d1 + beta_j d2)

  std::size_t grid() const { return alphas.size(); }
  double at(std::size_t i, std::size_t j) const { return losses[i * alphas.size() + j]; }
};

// Rescales each layout segment of d to the norm of the matching params segment.
ParamVector filter_normalize(const ParamVector& d, const ParamVector& params);

// Both directions are filter-normalized, then d2 is made orthogonal to d1
// (Gram-Schmidt) and restored to its normalized length. The grid covers
// [-extent, extent]^2 with an odd number of points so the centre is w itself.
LossSlice loss_slice(const ParamVector& params, const ModelSpec& spec, const Batch& probe, const ParamVector& d1,
                     const ParamVector& d2, std::size_t grid, double extent);

}  // namespace bsam
