#pragma once

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "bsam/tensor.hpp"

namespace bsam {

// Feed-forward ReLU network with a mean softmax cross-entropy head.
// layer_sizes includes the input width and the class count as its last entry.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  std::size_t classes = 0;
};

// L(w) = 1/2 (w - center)^T H (w - center), H dense row-major dim x dim.
struct QuadraticSpec {
  std::size_t dim = 0;
  std::vector<double> hessian;
  std::vector<double> center;
};

// One-dimensional landscape with a sharp minimum at `sharp_min` (curvature
// kappa_sharp) and a flat minimum at `flat_min` (curvature kappa_flat), both at
// loss 0.
//
// With u the signed distance from the sharp minimum towards the flat one and
// D = |flat_min - sharp_min|:
//   u <= 0          : 1/2 ks u^2
//   0 <= u <= c     : 1/2 ks u^2 - ks u^3 / (3c)                 (rises to the crest)
//   c <= u <= D     : 1/2 kf (D-u)^2 - kf (D-u)^3 / (3(D-c))     (falls to the flat bowl)
//   u >= D          : 1/2 kf (D-u)^2
// Each cubic keeps the bowl's value, slope and curvature at its minimum and has
// zero slope at the crest c. Equal crest heights (ks c^2 / 6 = kf (D-c)^2 / 6)
// fix c = D / (1 + sqrt(ks/kf)). The function is C1 everywhere and C2 except
// at u = c, where the curvature jumps from -ks to -kf.
struct DoubleWellSpec {
  double sharp_min = 0.0;
  double flat_min = 1.0;
  double kappa_sharp = 100.0;
  double kappa_flat = 1.0;

  double distance() const;
  // Crest location in w coordinates.
  double crest() const;
  double barrier_height() const;
};

class ModelSpec {
 public:
  using Kind = std::variant<MlpSpec, QuadraticSpec, DoubleWellSpec>;

  ModelSpec() = default;
  explicit ModelSpec(Kind kind) : kind_(std::move(kind)) {}

  const Kind& kind() const { return kind_; }
  bool is_mlp() const { return std::holds_alternative<MlpSpec>(kind_); }
  bool is_quadratic() const { return std::holds_alternative<QuadraticSpec>(kind_); }
  bool is_double_well() const { return std::holds_alternative<DoubleWellSpec>(kind_); }
  const MlpSpec& mlp() const { return std::get<MlpSpec>(kind_); }
  const QuadraticSpec& quadratic() const { return std::get<QuadraticSpec>(kind_); }
  const DoubleWellSpec& double_well() const { return std::get<DoubleWellSpec>(kind_); }

  std::size_t param_count() const;
  // Width of a batch feature row. For analytic landscapes this is the
  // parameter dimension: each row is a gradient-noise sample.
  std::size_t input_dim() const;
  // 1 for analytic landscapes (labels are all 0).
  std::size_t classes() const;
  // Layout a ParamVector for this spec must carry.
  std::vector<Segment> layout() const;

  // Throws DimensionError when params or batch do not fit this spec.
  void check(const ParamVector& params) const;
  void check(const ParamVector& params, const Batch& batch) const;

 private:
  Kind kind_;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Weight tensors
// are stored (fan_in, fan_out) so a layer computes x W + b.
std::pair<ParamVector, ModelSpec> build_mlp(const std::vector<std::size_t>& layer_sizes, std::size_t classes,
                                            std::uint64_t seed);

// Validates symmetry (1e-12) and positive semi-definiteness.
ModelSpec make_quadratic(std::vector<double> hessian, std::vector<double> center);
ModelSpec make_quadratic_diag(const std::vector<double>& diagonal);
// Requires kappa_sharp / kappa_flat >= 10 and distinct minima.
ModelSpec make_double_well(double sharp_min, double flat_min, double kappa_sharp, double kappa_flat);

double quadratic_loss(const ParamVector& w, const ModelSpec& spec);
ParamVector quadratic_gradient(const ParamVector& w, const ModelSpec& spec);

double double_well_loss(const ParamVector& w, const ModelSpec& spec);
double double_well_value(const DoubleWellSpec& well, double w);
double double_well_slope(const DoubleWellSpec& well, double w);

}  // namespace bsam
