#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "bsam/autodiff.hpp"
#include "bsam/models.hpp"
#include "bsam/tensor.hpp"

namespace bsam {

enum class Variant { Sgd, Sam, Bsam };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

enum class Direction { Ascent, Descent };

struct LrSchedule {
  double lr_max = 0.05;
  double lr_min = 0.0;
  std::int64_t total_steps = 1;

  void validate() const;
};

// Radius of the descent perturbation, interpolated linearly in the current
// learning rate: rho_hat at lr_max down to rho_check at lr_min.
struct RhoMinSchedule {
  double rho_hat = 0.05;
  double rho_check = 0.0;

  void validate() const;
};

struct OptimizerConfig {
  Variant variant = Variant::Sgd;
  double momentum = 0.9;
  double weight_decay = 0.001;
  double rho_max = 0.05;
  RhoMinSchedule rho_min;
  LrSchedule lr;
  double p_norm = 2.0;
  double zero_grad_eps = 1e-12;

  void validate() const;
};

struct OptimizerState {
  OptimizerConfig config;
  std::int64_t t = 0;
  ParamVector momentum_buf;

  // Zero momentum buffer laid out like `params`.
  static OptimizerState create(const OptimizerConfig& config, const ParamVector& params);
};

struct StepStats {
  std::int64_t fwd = 0;
  std::int64_t bwd = 0;
  double loss = 0.0;  // L_B(w) before the update
  double norm_g = 0.0;
  double norm_gmax = 0.0;
  double norm_gmin = 0.0;
  double scale = 0.0;
  std::optional<double> cos_g_gmin;
  double lr_t = 0.0;
  double rho_min_t = 0.0;
};

struct StepResult {
  ParamVector params;
  StepStats stats;
};

// Maximiser (ascent) or minimiser (descent) of eps^T g over ||eps||_q <= rho,
// 1/p + 1/q = 1:  eps = +-rho sign(g) |g|^(p-1) / (||g||_p^p)^(1/q).
// Returns zeros when rho == 0 or ||g||_2 <= zero_grad_eps.
ParamVector compute_perturbation(const ParamVector& g, double rho, Direction direction, double p = 2.0,
                                 double zero_grad_eps = 1e-12);

double rho_min_at(double lr_t, const RhoMinSchedule& sched, const LrSchedule& lrs);
double cosine_lr(std::int64_t t, const LrSchedule& lrs);
// ||g_max|| / ||g_min||, or 0 when ||g_min|| <= zero_grad_eps.
double scale_factor(const ParamVector& g_max, const ParamVector& g_min, double zero_grad_eps = 1e-12);

StepResult sgd_step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec);
StepResult sam_step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec);
StepResult bsam_step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec);
// Dispatches on state.config.variant.
StepResult step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec);

}  // namespace bsam
