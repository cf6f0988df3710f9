#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bsam {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  // 2-D access, rank must be 2.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  Shape shape;

  std::size_t size() const { return shape_numel(shape); }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Flat parameter (or gradient, or direction) vector with a layout that maps
// contiguous ranges back to named layer tensors.
class ParamVector {
 public:
  ParamVector() = default;
  // Throws DimensionError unless the segments tile [0, values.size()).
  ParamVector(std::vector<double> values, std::vector<Segment> layout);

  // Single-segment vector named "w".
  static ParamVector plain(std::vector<double> values);
  // Same layout as `like`, all zeros.
  static ParamVector zeros_like(const ParamVector& like);

  std::size_t size() const { return values_.size(); }
  const std::vector<Segment>& layout() const { return layout_; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<const double> segment(std::size_t i) const;
  std::span<double> segment(std::size_t i);

  // A vector with this layout and new values; sizes must agree.
  ParamVector with_values(std::vector<double> values) const;
  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
  std::vector<Segment> layout_;
};

ParamVector flatten(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> unflatten(const ParamVector& params);

struct Batch {
  Tensor features;               // (b, d)
  std::vector<int> labels;       // length b
  std::size_t size() const { return labels.size(); }
};

// Vector arithmetic over ParamVectors sharing one layout. Sizes are checked.
double dot(const ParamVector& u, const ParamVector& v);
double l2_norm(const ParamVector& v);
double lp_norm(const ParamVector& v, double p);
// Throws DegenerateError when either vector is zero.
double cosine_similarity(const ParamVector& u, const ParamVector& v);
// y + alpha * x
ParamVector axpy(double alpha, const ParamVector& x, const ParamVector& y);
ParamVector scaled(double alpha, const ParamVector& x);

}  // namespace bsam
