#include "bsam/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bsam/error.hpp"

namespace bsam {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Sgd: return "sgd";
    case Variant::Sam: return "sam";
    case Variant::Bsam: return "bsam";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "sgd" || name == "SGD") return Variant::Sgd;
  if (name == "sam" || name == "SAM") return Variant::Sam;
  if (name == "bsam" || name == "BSAM") return Variant::Bsam;
  throw ConfigError("unknown optimizer variant '" + std::string(name) + "' (expected sgd, sam or bsam)");
}

void LrSchedule::validate() const {
  if (!(lr_min >= 0.0) || !(lr_max >= lr_min)) throw ConfigError("learning rates need lr_max >= lr_min >= 0");
  if (total_steps < 1) throw ConfigError("learning-rate schedule needs total_steps >= 1");
}

void RhoMinSchedule::validate() const {
  if (!(rho_check >= 0.0) || !(rho_hat >= rho_check)) throw ConfigError("rho_min schedule needs rho_hat >= rho_check >= 0");
}

void OptimizerConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(rho_max >= 0.0)) throw ConfigError("rho_max must be >= 0");
  if (!(p_norm > 1.0)) throw ConfigError("p_norm must be > 1");
  if (!(zero_grad_eps >= 0.0)) throw ConfigError("zero_grad_eps must be >= 0");
  rho_min.validate();
  lr.validate();
}

OptimizerState OptimizerState::create(const OptimizerConfig& config, const ParamVector& params) {
  config.validate();
  return OptimizerState{config, 0, ParamVector::zeros_like(params)};
}

ParamVector compute_perturbation(const ParamVector& g, double rho, Direction direction, double p,
                                 double zero_grad_eps) {
  if (!(p > 1.0)) throw ConfigError("compute_perturbation: p must be > 1");
  if (!(rho >= 0.0)) throw RangeError("compute_perturbation: rho must be >= 0");
  const double norm2 = l2_norm(g);
  if (rho == 0.0 || norm2 <= zero_grad_eps) return ParamVector::zeros_like(g);
  const double sign = direction == Direction::Ascent ? 1.0 : -1.0;
  std::vector<double> eps(g.size());
  if (p == 2.0) {
    const double k = sign * rho / norm2;
    for (std::size_t i = 0; i < g.size(); ++i) eps[i] = k * g[i];
    return g.with_values(std::move(eps));
  }
  // Rescale first so |g|^p cannot overflow or underflow; the result is
  // invariant under positive scaling of g.
  double gmax = 0.0;
  for (double x : g.values()) gmax = std::max(gmax, std::abs(x));
  const double q = p / (p - 1.0);
  double sum = 0.0;
  for (double x : g.values()) sum += std::pow(std::abs(x) / gmax, p);
  const double denom = std::pow(sum, 1.0 / q);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double a = std::abs(g[i]) / gmax;
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    eps[i] = sign * rho * s * std::pow(a, p - 1.0) / denom;
  }
  return g.with_values(std::move(eps));
}

double rho_min_at(double lr_t, const RhoMinSchedule& sched, const LrSchedule& lrs) {
  constexpr double slack = 1e-12;
  if (lr_t < lrs.lr_min - slack || lr_t > lrs.lr_max + slack) {
    throw RangeError("rho_min_at: learning rate " + std::to_string(lr_t) + " outside [lr_min, lr_max]");
  }
  if (lrs.lr_max == lrs.lr_min) return sched.rho_hat;
  const double rho = sched.rho_check +
                     (sched.rho_hat - sched.rho_check) * (lr_t - lrs.lr_min) / (lrs.lr_max - lrs.lr_min);
  return std::clamp(rho, sched.rho_check, sched.rho_hat);
}

double cosine_lr(std::int64_t t, const LrSchedule& lrs) {
  if (t < 0 || t > lrs.total_steps) {
    throw RangeError("cosine_lr: step " + std::to_string(t) + " outside [0, " + std::to_string(lrs.total_steps) + "]");
  }
  if (t == 0) return lrs.lr_max;
  if (t == lrs.total_steps) return lrs.lr_min;
  const double frac = static_cast<double>(t) / static_cast<double>(lrs.total_steps);
  const double lr = lrs.lr_min + 0.5 * (lrs.lr_max - lrs.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
  return std::clamp(lr, lrs.lr_min, lrs.lr_max);
}

double scale_factor(const ParamVector& g_max, const ParamVector& g_min, double zero_grad_eps) {
  const double nmin = l2_norm(g_min);
  if (nmin <= zero_grad_eps) return 0.0;
  return l2_norm(g_max) / nmin;
}

namespace {

void require_variant(const OptimizerState& state, Variant v) {
  if (state.config.variant != v) {
    throw ConfigError("optimizer state is " + std::string(variant_name(state.config.variant)) + ", step requires " +
                      std::string(variant_name(v)));
  }
}

// Adds weight decay, runs the momentum recurrence and takes the lr step.
ParamVector apply_update(OptimizerState& state, const ParamVector& params, const ParamVector& composite,
                         double lr_t) {
  const auto& c = state.config;
  if (!state.momentum_buf.same_layout(params)) state.momentum_buf = ParamVector::zeros_like(params);
  std::vector<double> next(params.values().begin(), params.values().end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = composite[i] + c.weight_decay * params[i];
    state.momentum_buf[i] = c.momentum * state.momentum_buf[i] + g;
    next[i] -= lr_t * state.momentum_buf[i];
  }
  ++state.t;
  return params.with_values(std::move(next));
}

double current_lr(const OptimizerState& state) { return cosine_lr(state.t, state.config.lr); }

StepStats base_stats(const PassCounts& counts, const LossAndGrad& base, double lr_t) {
  StepStats s;
  s.fwd = counts.forward;
  s.bwd = counts.backward;
  s.loss = base.loss;
  s.norm_g = l2_norm(base.grad);
  s.lr_t = lr_t;
  return s;
}

}  // namespace

StepResult sgd_step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  require_variant(state, Variant::Sgd);
  const double lr_t = current_lr(state);
  PassCounts counts;
  const auto base = grad(params, batch, spec, &counts);
  StepStats stats = base_stats(counts, base, lr_t);
  return {apply_update(state, params, base.grad, lr_t), stats};
}

StepResult sam_step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  require_variant(state, Variant::Sam);
  const auto& c = state.config;
  const double lr_t = current_lr(state);
  PassCounts counts;
  const auto base = grad(params, batch, spec, &counts);
  if (l2_norm(base.grad) <= c.zero_grad_eps) {
    StepStats stats = base_stats(counts, base, lr_t);
    return {apply_update(state, params, base.grad, lr_t), stats};
  }
  const auto eps = compute_perturbation(base.grad, c.rho_max, Direction::Ascent, c.p_norm, c.zero_grad_eps);
  const auto g_max = grad(axpy(1.0, eps, params), batch, spec, &counts).grad;
  StepStats stats = base_stats(counts, base, lr_t);
  stats.norm_gmax = l2_norm(g_max);
  return {apply_update(state, params, g_max, lr_t), stats};
}

StepResult bsam_step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  require_variant(state, Variant::Bsam);
  const auto& c = state.config;
  const double lr_t = current_lr(state);
  const double rho_min_t = rho_min_at(lr_t, c.rho_min, c.lr);
  PassCounts counts;
  const auto base = grad(params, batch, spec, &counts);
  const auto& g = base.grad;
  if (l2_norm(g) <= c.zero_grad_eps) {
    StepStats stats = base_stats(counts, base, lr_t);
    stats.rho_min_t = rho_min_t;
    return {apply_update(state, params, g, lr_t), stats};
  }
  const auto eps_max = compute_perturbation(g, c.rho_max, Direction::Ascent, c.p_norm, c.zero_grad_eps);
  const auto g_max = grad(axpy(1.0, eps_max, params), batch, spec, &counts).grad;
  const auto eps_min = compute_perturbation(g, rho_min_t, Direction::Descent, c.p_norm, c.zero_grad_eps);
  const auto g_min = grad(axpy(1.0, eps_min, params), batch, spec, &counts).grad;
  const double scale = scale_factor(g_max, g_min, c.zero_grad_eps);

  std::vector<double> composite(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) composite[i] = g[i] + g_max[i] - scale * g_min[i];

  StepStats stats = base_stats(counts, base, lr_t);
  stats.norm_gmax = l2_norm(g_max);
  stats.norm_gmin = l2_norm(g_min);
  stats.scale = scale;
  stats.rho_min_t = rho_min_t;
  if (stats.norm_gmin > 0.0) stats.cos_g_gmin = cosine_similarity(g, g_min);
  return {apply_update(state, params, g.with_values(std::move(composite)), lr_t), stats};
}

StepResult step(OptimizerState& state, const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  switch (state.config.variant) {
    case Variant::Sgd: return sgd_step(state, params, batch, spec);
    case Variant::Sam: return sam_step(state, params, batch, spec);
    case Variant::Bsam: return bsam_step(state, params, batch, spec);
  }
  throw ConfigError("unknown optimizer variant");
}

}  // namespace bsam
