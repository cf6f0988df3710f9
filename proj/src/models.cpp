#include "bsam/models.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "bsam/error.hpp"
#include "bsam/rng.hpp"

namespace bsam {

namespace {

constexpr std::size_t kMaxQuadraticDim = 50;

std::size_t mlp_param_count(const MlpSpec& mlp) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < mlp.layer_sizes.size(); ++l) {
    n += mlp.layer_sizes[l] * mlp.layer_sizes[l + 1] + mlp.layer_sizes[l + 1];
  }
  return n;
}

}  // namespace

double DoubleWellSpec::distance() const { return std::abs(flat_min - sharp_min); }

double DoubleWellSpec::crest() const {
  const double c = distance() / (1.0 + std::sqrt(kappa_sharp / kappa_flat));
  return flat_min > sharp_min ? sharp_min + c : sharp_min - c;
}

double DoubleWellSpec::barrier_height() const {
  const double c = distance() / (1.0 + std::sqrt(kappa_sharp / kappa_flat));
  return kappa_sharp * c * c / 6.0;
}

double double_well_value(const DoubleWellSpec& well, double w) {
  const double dir = well.flat_min > well.sharp_min ? 1.0 : -1.0;
  const double u = dir * (w - well.sharp_min);
  const double d = well.distance();
  const double c = std::abs(well.crest() - well.sharp_min);
  if (u <= 0.0) return 0.5 * well.kappa_sharp * u * u;
  if (u <= c) return 0.5 * well.kappa_sharp * u * u - well.kappa_sharp * u * u * u / (3.0 * c);
  const double v = d - u;
  if (v >= 0.0) return 0.5 * well.kappa_flat * v * v - well.kappa_flat * v * v * v / (3.0 * (d - c));
  return 0.5 * well.kappa_flat * v * v;
}

double double_well_slope(const DoubleWellSpec& well, double w) {
  const double dir = well.flat_min > well.sharp_min ? 1.0 : -1.0;
  const double u = dir * (w - well.sharp_min);
  const double d = well.distance();
  const double c = std::abs(well.crest() - well.sharp_min);
  double du;  // dL/du
  if (u <= 0.0) {
    du = well.kappa_sharp * u;
  } else if (u <= c) {
    du = well.kappa_sharp * u - well.kappa_sharp * u * u / c;
  } else {
    const double v = d - u;
    if (v >= 0.0) {
      du = -(well.kappa_flat * v - well.kappa_flat * v * v / (d - c));
    } else {
      du = -well.kappa_flat * v;
    }
  }
  return dir * du;
}

std::size_t ModelSpec::param_count() const {
  return std::visit(
      [](const auto& k) -> std::size_t {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, MlpSpec>) return mlp_param_count(k);
        else if constexpr (std::is_same_v<T, QuadraticSpec>) return k.dim;
        else return 1;
      },
      kind_);
}

std::size_t ModelSpec::input_dim() const {
  if (is_mlp()) return mlp().layer_sizes.front();
  return param_count();
}

std::size_t ModelSpec::classes() const { return is_mlp() ? mlp().classes : 1; }

std::vector<Segment> ModelSpec::layout() const {
  if (!is_mlp()) return {Segment{"w", 0, {param_count()}}};
  const auto& sizes = mlp().layer_sizes;
  std::vector<Segment> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    layout.push_back({"layer" + std::to_string(l) + ".weight", offset, {sizes[l], sizes[l + 1]}});
    offset += sizes[l] * sizes[l + 1];
    layout.push_back({"layer" + std::to_string(l) + ".bias", offset, {sizes[l + 1]}});
    offset += sizes[l + 1];
  }
  return layout;
}

void ModelSpec::check(const ParamVector& params) const {
  if (params.size() != param_count()) {
    throw DimensionError("parameter count " + std::to_string(params.size()) + " does not match model (" +
                         std::to_string(param_count()) + ")");
  }
  if (is_mlp() && params.layout() != layout()) {
    throw DimensionError("parameter layout does not match the MLP architecture");
  }
}

void ModelSpec::check(const ParamVector& params, const Batch& batch) const {
  check(params);
  if (batch.size() == 0) throw DimensionError("empty batch");
  const auto& f = batch.features;
  if (f.rank() != 2 || f.dim(0) != batch.size() || f.dim(1) != input_dim()) {
    throw DimensionError("batch features " + shape_str(f.shape()) + " do not match (" +
                         std::to_string(batch.size()) + "," + std::to_string(input_dim()) + ")");
  }
  const int c = static_cast<int>(classes());
  for (int y : batch.labels) {
    if (y < 0 || y >= c) {
      throw DimensionError("label " + std::to_string(y) + " outside [0," + std::to_string(c) + ")");
    }
  }
}

std::pair<ParamVector, ModelSpec> build_mlp(const std::vector<std::size_t>& layer_sizes, std::size_t classes,
                                            std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw ConfigError("an MLP needs at least 2 layer sizes (input and output)");
  if (classes < 2) throw ConfigError("an MLP needs at least 2 classes");
  if (layer_sizes.back() != classes) {
    throw ConfigError("last layer size " + std::to_string(layer_sizes.back()) + " must equal class count " +
                      std::to_string(classes));
  }
  for (auto s : layer_sizes) {
    if (s == 0) throw ConfigError("layer sizes must be positive");
  }
  ModelSpec spec(MlpSpec{layer_sizes, classes});
  auto layout = spec.layout();
  std::vector<double> values(spec.param_count(), 0.0);
  auto rng = make_rng(seed, "mlp-init");
  for (const auto& seg : layout) {
    if (seg.shape.size() != 2) continue;  // biases stay zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(seg.shape[0]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < seg.size(); ++i) values[seg.offset + i] = dist(rng);
  }
  return {ParamVector(std::move(values), std::move(layout)), std::move(spec)};
}

ModelSpec make_quadratic(std::vector<double> hessian, std::vector<double> center) {
  const std::size_t n = center.size();
  if (n == 0 || n > kMaxQuadraticDim) {
    throw ConfigError("quadratic dimension must be in [1," + std::to_string(kMaxQuadraticDim) + "]");
  }
  if (hessian.size() != n * n) throw DimensionError("quadratic Hessian must be dim x dim");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> h(hessian.data(), n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(h(i, j) - h(j, i)) > 1e-12) throw ConfigError("quadratic Hessian is not symmetric");
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h.transpose());
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
    throw ConfigError("quadratic Hessian is not positive semi-definite");
  }
  return ModelSpec(QuadraticSpec{n, std::move(hessian), std::move(center)});
}

ModelSpec make_quadratic_diag(const std::vector<double>& diagonal) {
  const std::size_t n = diagonal.size();
  std::vector<double> h(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] = diagonal[i];
  return make_quadratic(std::move(h), std::vector<double>(n, 0.0));
}

ModelSpec make_double_well(double sharp_min, double flat_min, double kappa_sharp, double kappa_flat) {
  if (!(kappa_flat > 0.0) || !(kappa_sharp >= 10.0 * kappa_flat)) {
    throw ConfigError("double well needs kappa_sharp >= 10 * kappa_flat > 0");
  }
  if (sharp_min == flat_min) throw ConfigError("double well minima must be distinct");
  return ModelSpec(DoubleWellSpec{sharp_min, flat_min, kappa_sharp, kappa_flat});
}

double quadratic_loss(const ParamVector& w, const ModelSpec& spec) {
  const auto& q = spec.quadratic();
  if (w.size() != q.dim) throw DimensionError("quadratic_loss: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < q.dim; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < q.dim; ++j) row += q.hessian[i * q.dim + j] * (w[j] - q.center[j]);
    s += (w[i] - q.center[i]) * row;
  }
  return 0.5 * s;
}

ParamVector quadratic_gradient(const ParamVector& w, const ModelSpec& spec) {
  const auto& q = spec.quadratic();
  if (w.size() != q.dim) throw DimensionError("quadratic_gradient: dimension mismatch");
  std::vector<double> g(q.dim, 0.0);
  for (std::size_t i = 0; i < q.dim; ++i) {
    for (std::size_t j = 0; j < q.dim; ++j) g[i] += q.hessian[i * q.dim + j] * (w[j] - q.center[j]);
  }
  return w.with_values(std::move(g));
}

double double_well_loss(const ParamVector& w, const ModelSpec& spec) {
  if (w.size() != 1) throw DimensionError("double_well_loss: parameter dimension must be 1");
  return double_well_value(spec.double_well(), w[0]);
}

}  // namespace bsam
