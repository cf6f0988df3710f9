#include "bsam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bsam/error.hpp"

namespace bsam {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

ParamVector::ParamVector(std::vector<double> values, std::vector<Segment> layout)
    : values_(std::move(values)), layout_(std::move(layout)) {
  std::size_t cursor = 0;
  for (const auto& seg : layout_) {
    if (seg.offset != cursor) {
      throw DimensionError("segment '" + seg.name + "' starts at " + std::to_string(seg.offset) + ", expected " +
                           std::to_string(cursor));
    }
    cursor += seg.size();
  }
  if (cursor != values_.size()) {
    throw DimensionError("layout covers " + std::to_string(cursor) + " values but vector holds " +
                         std::to_string(values_.size()));
  }
}

ParamVector ParamVector::plain(std::vector<double> values) {
  const std::size_t n = values.size();
  return ParamVector(std::move(values), {Segment{"w", 0, {n}}});
}

ParamVector ParamVector::zeros_like(const ParamVector& like) {
  return ParamVector(std::vector<double>(like.size(), 0.0), like.layout_);
}

std::span<const double> ParamVector::segment(std::size_t i) const {
  const auto& seg = layout_.at(i);
  return std::span<const double>(values_).subspan(seg.offset, seg.size());
}

std::span<double> ParamVector::segment(std::size_t i) {
  const auto& seg = layout_.at(i);
  return std::span<double>(values_).subspan(seg.offset, seg.size());
}

ParamVector ParamVector::with_values(std::vector<double> values) const {
  if (values.size() != values_.size()) {
    throw DimensionError("with_values: size " + std::to_string(values.size()) + " != " +
                         std::to_string(values_.size()));
  }
  ParamVector out;
  out.values_ = std::move(values);
  out.layout_ = layout_;
  return out;
}

ParamVector flatten(std::span<const NamedTensor> tensors) {
  std::vector<double> values;
  std::vector<Segment> layout;
  for (const auto& t : tensors) {
    layout.push_back(Segment{t.name, values.size(), t.tensor.shape()});
    values.insert(values.end(), t.tensor.data().begin(), t.tensor.data().end());
  }
  return ParamVector(std::move(values), std::move(layout));
}

std::vector<NamedTensor> unflatten(const ParamVector& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.layout().size());
  for (std::size_t i = 0; i < params.layout().size(); ++i) {
    auto s = params.segment(i);
    out.push_back({params.layout()[i].name, Tensor(params.layout()[i].shape, std::vector<double>(s.begin(), s.end()))});
  }
  return out;
}

namespace {

void require_same_size(const ParamVector& u, const ParamVector& v, const char* what) {
  if (u.size() != v.size()) {
    throw DimensionError(std::string(what) + ": size mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  }
}

}  // namespace

double dot(const ParamVector& u, const ParamVector& v) {
  require_same_size(u, v, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double l2_norm(const ParamVector& v) {
  double s = 0.0;
  for (double x : v.values()) s += x * x;
  return std::sqrt(s);
}

double lp_norm(const ParamVector& v, double p) {
  if (p == 2.0) return l2_norm(v);
  double s = 0.0;
  for (double x : v.values()) s += std::pow(std::abs(x), p);
  return std::pow(s, 1.0 / p);
}

double cosine_similarity(const ParamVector& u, const ParamVector& v) {
  require_same_size(u, v, "cosine_similarity");
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (nu == 0.0 || nv == 0.0) throw DegenerateError("cosine_similarity of a zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

ParamVector axpy(double alpha, const ParamVector& x, const ParamVector& y) {
  require_same_size(x, y, "axpy");
  std::vector<double> out(y.values().begin(), y.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * x[i];
  return y.with_values(std::move(out));
}

ParamVector scaled(double alpha, const ParamVector& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& e : out) e *= alpha;
  return x.with_values(std::move(out));
}

}  // namespace bsam
