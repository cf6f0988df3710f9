#include "bsam/probes.hpp"

#include <algorithm>
#include <cmath>

#include "bsam/error.hpp"
#include "bsam/rng.hpp"

namespace bsam {

SharpnessEstimate max_sharpness(const ParamVector& params, const Batch& batch, const ModelSpec& spec, double rho) {
  if (!(rho >= 0.0)) throw RangeError("max_sharpness: rho must be >= 0");
  const auto base = grad(params, batch, spec);
  if (l2_norm(base.grad) == 0.0) return {0.0, true};
  if (rho == 0.0) return {0.0, false};
  const auto eps = compute_perturbation(base.grad, rho, Direction::Ascent, 2.0, 0.0);
  return {forward_loss(axpy(1.0, eps, params), batch, spec) - base.loss, false};
}

SharpnessEstimate min_sharpness(const ParamVector& params, const Batch& batch, const ModelSpec& spec, double rho) {
  if (!(rho >= 0.0)) throw RangeError("min_sharpness: rho must be >= 0");
  const auto base = grad(params, batch, spec);
  if (l2_norm(base.grad) == 0.0) return {0.0, true};
  if (rho == 0.0) return {0.0, false};
  const auto eps = compute_perturbation(base.grad, rho, Direction::Descent, 2.0, 0.0);
  return {base.loss - forward_loss(axpy(1.0, eps, params), batch, spec), false};
}

double default_hvp_step(const ParamVector& params) { return 1e-4 * std::max(1.0, l2_norm(params)); }

namespace {

ParamVector hvp_at(const ParamVector& params, const ParamVector& v, const Batch& batch, const ModelSpec& spec, double h,
                   const ReluMasks* masks) {
  if (!(h > 0.0)) throw RangeError("hvp: step h must be > 0");
  const double nv = l2_norm(v);
  if (nv == 0.0) throw DegenerateError("hvp: direction is the zero vector");
  auto g = [&](const ParamVector& at) { return masks ? grad_with_masks(at, batch, spec, *masks).grad : grad(at, batch, spec).grad; };
  const auto up = g(axpy(h / nv, v, params));
  const auto down = g(axpy(-h / nv, v, params));
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (up[i] - down[i]) / (2.0 * h) * nv;
  return params.with_values(std::move(out));
}

}  // namespace

ParamVector hvp(const ParamVector& params, const ParamVector& v, const Batch& batch, const ModelSpec& spec, double h) {
  if (!spec.is_mlp()) return hvp_at(params, v, batch, spec, h, nullptr);
  const auto masks = relu_masks(params, batch, spec);
  return hvp_at(params, v, batch, spec, h, &masks);
}

std::vector<Eigenpair> top_eigenvalues(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                                       std::size_t k, int iters, double tol, std::uint64_t seed) {
  if (k < 1) throw RangeError("top_eigenvalues: k must be >= 1");
  if (iters < 1) throw RangeError("top_eigenvalues: iters must be >= 1");
  if (k > params.size()) {
    throw RangeError("top_eigenvalues: k = " + std::to_string(k) + " exceeds parameter dimension " +
                     std::to_string(params.size()));
  }
  const double h = default_hvp_step(params);
  const auto masks = spec.is_mlp() ? relu_masks(params, batch, spec) : ReluMasks{};
  auto rng = make_rng(seed, "power-iteration");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigenpair> found;

  // Projects out the span of the eigenvectors found so far.
  auto deflate = [&found](ParamVector& x) {
    for (const auto& e : found) x = axpy(-dot(e.vector, x), e.vector, x);
  };
  auto apply = [&](const ParamVector& x, double shift) {
    auto hx = hvp_at(params, x, batch, spec, h, spec.is_mlp() ? &masks : nullptr);
    deflate(hx);
    if (shift != 0.0) hx = axpy(shift, x, hx);
    return hx;
  };

  // Power iteration on H + shift I. `radius` collects max ||H v|| seen.
  auto power = [&](double shift, double& radius) {
    std::vector<double> init(params.size());
    for (double& x : init) x = normal(rng);
    ParamVector v = params.with_values(std::move(init));
    deflate(v);
    double nv = l2_norm(v);
    if (nv == 0.0) throw DegenerateError("top_eigenvalues: start vector vanished after deflation");
    v = scaled(1.0 / nv, v);

    Eigenpair pair;
    for (int it = 1; it <= iters; ++it) {
      const auto hv = apply(v, shift);
      const double mu = dot(v, hv);
      const double lambda = mu - shift;
      const double res = l2_norm(axpy(-mu, v, hv));
      radius = std::max(radius, l2_norm(shift != 0.0 ? axpy(-shift, v, hv) : hv));
      pair.value = lambda;
      pair.residual = lambda != 0.0 ? res / std::abs(lambda) : res;
      pair.iterations = it;
      pair.vector = v;
      if (pair.residual <= tol) break;
      const double nhv = l2_norm(hv);
      if (nhv == 0.0) break;  // v lies in the null space
      v = scaled(1.0 / nhv, hv);
      deflate(v);  // keeps rounding from reintroducing found directions
      nv = l2_norm(v);
      v = scaled(1.0 / nv, v);
    }
    return pair;
  };

  for (std::size_t n = 0; n < k; ++n) {
    double radius = 0.0;
    Eigenpair pair = power(0.0, radius);
    // Dominant eigenvalue negative, or a +/- pair of similar size: shift the
    // spectrum up by about the spectral radius so the top end dominates.
    if (pair.value < 0.0 || pair.residual > tol) {
      radius = std::max(radius, std::abs(pair.value));
      double unused = 0.0;
      Eigenpair shifted = power(radius, unused);
      if (pair.value < 0.0 || shifted.value >= pair.value) pair = std::move(shifted);
    }
    found.push_back(std::move(pair));
  }
  std::stable_sort(found.begin(), found.end(), [](const Eigenpair& a, const Eigenpair& b) { return a.value > b.value; });
  return found;
}

SharpnessReport sharpness_report(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                                 const ReportOptions& options) {
  SharpnessReport r;
  r.rho_used = options.rho;
  const auto mx = max_sharpness(params, batch, spec, options.rho);
  const auto mn = min_sharpness(params, batch, spec, options.rho);
  r.max_s = mx.value;
  r.min_s = mn.value;
  r.bil_s = r.max_s + r.min_s;
  r.degenerate = mx.degenerate || mn.degenerate;
  if (options.k > 0) {
    for (const auto& e : top_eigenvalues(params, batch, spec, options.k, options.iters, options.tol, options.seed)) {
      r.eigenvalues.push_back(e.value);
      r.eig_residuals.push_back(e.residual);
    }
  }
  return r;
}

CosineSummary cosine_diagnostic(std::span<const StepStats> trace) {
  if (trace.empty()) throw RangeError("cosine_diagnostic: empty trace");
  std::array<double, 10> sum{};
  std::array<std::size_t, 10> count{};
  std::array<std::size_t, 10> negative{};
  const std::size_t n = trace.size();
  CosineSummary out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!trace[i].cos_g_gmin) continue;
    const std::size_t d = std::min<std::size_t>(9, 10 * i / n);
    const double c = *trace[i].cos_g_gmin;
    sum[d] += c;
    ++count[d];
    if (c < 0.0) ++negative[d];
    ++out.samples;
  }
  if (out.samples == 0) throw RangeError("cosine_diagnostic: trace holds no cosine values");
  std::size_t last = 0;
  for (std::size_t d = 0; d < 10; ++d) {
    if (count[d] == 0) continue;
    out.decile_means[d] = sum[d] / static_cast<double>(count[d]);
    last = d;
  }
  out.final_decile_mean = *out.decile_means[last];
  out.final_decile_negative_fraction = static_cast<double>(negative[last]) / static_cast<double>(count[last]);
  return out;
}

ParamVector filter_normalize(const ParamVector& d, const ParamVector& params) {
  if (d.size() != params.size() || !d.same_layout(params)) {
    throw DimensionError("filter_normalize: direction layout does not match parameters");
  }
  ParamVector out = d;
  for (std::size_t s = 0; s < params.layout().size(); ++s) {
    auto ds = out.segment(s);
    auto ps = params.segment(s);
    double nd = 0.0, np = 0.0;
    for (double x : ds) nd += x * x;
    for (double x : ps) np += x * x;
    nd = std::sqrt(nd);
    np = std::sqrt(np);
    const double k = nd > 0.0 ? np / nd : 0.0;
    for (double& x : ds) x *= k;
  }
  return out;
}

LossSlice loss_slice(const ParamVector& params, const ModelSpec& spec, const Batch& probe, const ParamVector& d1,
                     const ParamVector& d2, std::size_t grid, double extent) {
  if (grid < 3 || grid % 2 == 0) throw RangeError("loss_slice: grid must be odd and >= 3");
  if (!(extent > 0.0)) throw RangeError("loss_slice: extent must be > 0");
  spec.check(params, probe);
  const auto u = filter_normalize(d1, params);
  auto v = filter_normalize(d2, params);
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) throw DegenerateError("loss_slice: a direction vanished after filter normalization");
  auto v_perp = axpy(-dot(u, v) / (nu * nu), u, v);
  const double np = l2_norm(v_perp);
  if (np <= 1e-9 * nv) throw DegenerateError("loss_slice: directions are parallel");
  v = scaled(nv / np, v_perp);

  LossSlice out;
  const double half = static_cast<double>(grid - 1);
  for (std::size_t i = 0; i < grid; ++i) {
    const double c = extent * (2.0 * static_cast<double>(i) - half) / half;
    out.alphas.push_back(c);
    out.betas.push_back(c);
  }
  out.losses.resize(grid * grid);
  std::vector<double> w(params.size());
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      for (std::size_t n = 0; n < w.size(); ++n) w[n] = params[n] + out.alphas[i] * u[n] + out.betas[j] * v[n];
      out.losses[i * grid + j] = forward_loss(params.with_values(w), probe, spec);
    }
  }
  return out;
}

}  // namespace bsam
