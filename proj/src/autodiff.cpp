#include "bsam/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "bsam/error.hpp"

namespace bsam {

Tape::NodeId Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> backprop) {
  Node node;
  if (requires_grad) node.grad = Tensor(value.shape(), 0.0);
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Tape::NodeId Tape::leaf(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad, nullptr); }

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      for (std::size_t j = 0; j < n; ++j) C.at(i, j) += aip * B.at(p, j);
    }
  }
  const bool rg = needs(a) || needs(b);
  const NodeId out = nodes_.size();
  return push(std::move(C), rg, [a, b, out, m, k, n](Tape& t) {
    const Tensor& dC = t.grad(out);
    if (t.needs(a)) {
      Tensor& dA = t.grad_ref(a);
      const Tensor& B = t.value(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dC.at(i, j) * B.at(p, j);
          dA.at(i, p) += s;
        }
    }
    if (t.needs(b)) {
      Tensor& dB = t.grad_ref(b);
      const Tensor& A = t.value(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.at(i, p);
          for (std::size_t j = 0; j < n; ++j) dB.at(p, j) += aip * dC.at(i, j);
        }
    }
  });
}

Tape::NodeId Tape::add_bias(NodeId x, NodeId bias) {
  const Tensor& X = value(x);
  const Tensor& b = value(bias);
  if (X.rank() != 2 || b.rank() != 1 || X.dim(1) != b.dim(0)) {
    throw DimensionError("add_bias: incompatible shapes " + shape_str(X.shape()) + " + " + shape_str(b.shape()));
  }
  const std::size_t m = X.dim(0), n = X.dim(1);
  Tensor Y = X;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) Y.at(i, j) += b[j];
  const NodeId out = nodes_.size();
  return push(std::move(Y), needs(x) || needs(bias), [x, bias, out, m, n](Tape& t) {
    const Tensor& dY = t.grad(out);
    if (t.needs(x)) {
      Tensor& dX = t.grad_ref(x);
      for (std::size_t i = 0; i < m * n; ++i) dX[i] += dY[i];
    }
    if (t.needs(bias)) {
      Tensor& db = t.grad_ref(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += dY.at(i, j);
    }
  });
}

Tape::NodeId Tape::relu(NodeId x) {
  Tensor Y = value(x);
  for (double& v : Y.data()) v = v > 0.0 ? v : 0.0;
  const NodeId out = nodes_.size();
  return push(std::move(Y), needs(x), [x, out](Tape& t) {
    const Tensor& X = t.value(x);
    const Tensor& dY = t.grad(out);
    Tensor& dX = t.grad_ref(x);
    for (std::size_t i = 0; i < X.numel(); ++i) {
      if (X[i] > 0.0) dX[i] += dY[i];
    }
  });
}

Tape::NodeId Tape::masked(NodeId x, std::vector<unsigned char> mask) {
  Tensor Y = value(x);
  if (mask.size() != Y.numel()) throw DimensionError("masked: mask size does not match " + shape_str(Y.shape()));
  for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] = mask[i] ? Y[i] : 0.0;
  const NodeId out = nodes_.size();
  return push(std::move(Y), needs(x), [x, out, mask = std::move(mask)](Tape& t) {
    const Tensor& dY = t.grad(out);
    Tensor& dX = t.grad_ref(x);
    for (std::size_t i = 0; i < dY.numel(); ++i) {
      if (mask[i]) dX[i] += dY[i];
    }
  });
}

Tape::NodeId Tape::softmax_cross_entropy(NodeId logits, std::span<const int> labels) {
  const Tensor& Z = value(logits);
  if (Z.rank() != 2 || Z.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(Z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t m = Z.dim(0), c = Z.dim(1);
  Tensor probs({m, c}, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double zmax = Z.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, Z.at(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs.at(i, j) = std::exp(Z.at(i, j) - zmax);
      sum += probs.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs.at(i, j) /= sum;
    total += std::log(sum) + zmax - Z.at(i, static_cast<std::size_t>(labels[i]));
  }
  std::vector<int> ys(labels.begin(), labels.end());
  const NodeId out = nodes_.size();
  return push(Tensor({1}, std::vector<double>{total / static_cast<double>(m)}), needs(logits),
              [logits, out, m, c, probs = std::move(probs), ys = std::move(ys)](Tape& t) {
                const double scale = t.grad(out)[0] / static_cast<double>(m);
                Tensor& dZ = t.grad_ref(logits);
                for (std::size_t i = 0; i < m; ++i) {
                  for (std::size_t j = 0; j < c; ++j) {
                    const double onehot = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
                    dZ.at(i, j) += scale * (probs.at(i, j) - onehot);
                  }
                }
              });
}

void Tape::backward(NodeId root) {
  if (value(root).numel() != 1) throw DimensionError("backward: root must be a scalar");
  if (!needs(root)) return;
  grad_ref(root)[0] = 1.0;
  for (NodeId id = root + 1; id-- > 0;) {
    if (nodes_[id].requires_grad && nodes_[id].backprop) nodes_[id].backprop(*this);
  }
}

namespace {

struct MlpGraph {
  Tape tape;
  std::vector<Tape::NodeId> param_nodes;  // one per layout segment
  Tape::NodeId logits = 0;
};

// With `masks` set the ReLUs use those patterns; with `record` set the
// patterns of the ordinary ReLUs are written there.
MlpGraph build_graph(const ParamVector& params, const Tensor& features, bool requires_grad,
                     const ReluMasks* masks = nullptr, ReluMasks* record = nullptr) {
  MlpGraph g;
  const auto& layout = params.layout();
  Tape::NodeId h = g.tape.leaf(features);
  for (std::size_t s = 0; s < layout.size(); s += 2) {
    auto w = params.segment(s);
    auto b = params.segment(s + 1);
    const auto W = g.tape.leaf(Tensor(layout[s].shape, std::vector<double>(w.begin(), w.end())), requires_grad);
    const auto B = g.tape.leaf(Tensor(layout[s + 1].shape, std::vector<double>(b.begin(), b.end())), requires_grad);
    g.param_nodes.push_back(W);
    g.param_nodes.push_back(B);
    h = g.tape.add_bias(g.tape.matmul(h, W), B);
    if (s + 2 < layout.size()) {
      const std::size_t layer = s / 2;
      if (masks) {
        if (layer >= masks->size()) throw DimensionError("relu masks: too few layers");
        h = g.tape.masked(h, (*masks)[layer]);
      } else {
        if (record) {
          const auto& pre = g.tape.value(h).data();
          std::vector<unsigned char> m(pre.size());
          for (std::size_t i = 0; i < pre.size(); ++i) m[i] = pre[i] > 0.0;
          record->push_back(std::move(m));
        }
        h = g.tape.relu(h);
      }
    }
  }
  g.logits = h;
  return g;
}

std::vector<double> noise_mean(const Batch& batch) {
  const std::size_t b = batch.features.dim(0), d = batch.features.dim(1);
  std::vector<double> xi(d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) xi[j] += batch.features.at(i, j);
  for (double& x : xi) x /= static_cast<double>(b);
  return xi;
}

double analytic_value(const ParamVector& params, const ModelSpec& spec) {
  return spec.is_quadratic() ? quadratic_loss(params, spec) : double_well_loss(params, spec);
}

}  // namespace

Tensor mlp_logits(const ParamVector& params, const Tensor& features, const ModelSpec& spec) {
  if (!spec.is_mlp()) throw ConfigError("mlp_logits requires an MLP model");
  spec.check(params);
  if (features.rank() != 2 || features.dim(1) != spec.input_dim()) {
    throw DimensionError("features " + shape_str(features.shape()) + " do not match input width " +
                         std::to_string(spec.input_dim()));
  }
  auto g = build_graph(params, features, false);
  return g.tape.value(g.logits);
}

double forward_loss(const ParamVector& params, const Batch& batch, const ModelSpec& spec, PassCounts* counts) {
  spec.check(params, batch);
  if (counts) ++counts->forward;
  if (spec.is_mlp()) {
    auto g = build_graph(params, batch.features, false);
    const auto loss = g.tape.softmax_cross_entropy(g.logits, batch.labels);
    return g.tape.value(loss)[0];
  }
  const auto xi = noise_mean(batch);
  double loss = analytic_value(params, spec);
  for (std::size_t i = 0; i < xi.size(); ++i) loss += xi[i] * params[i];
  return loss;
}

namespace {

LossAndGrad mlp_grad(const ParamVector& params, const Batch& batch, const ReluMasks* masks) {
  auto g = build_graph(params, batch.features, true, masks);
  const auto loss = g.tape.softmax_cross_entropy(g.logits, batch.labels);
  g.tape.backward(loss);
  std::vector<double> out(params.size());
  for (std::size_t s = 0; s < g.param_nodes.size(); ++s) {
    const auto& d = g.tape.grad(g.param_nodes[s]);
    std::copy(d.data().begin(), d.data().end(), out.begin() + static_cast<std::ptrdiff_t>(params.layout()[s].offset));
  }
  return {g.tape.value(loss)[0], params.with_values(std::move(out))};
}

}  // namespace

ReluMasks relu_masks(const ParamVector& params, const Batch& batch, const ModelSpec& spec) {
  if (!spec.is_mlp()) throw ConfigError("relu_masks requires an MLP model");
  spec.check(params, batch);
  ReluMasks out;
  build_graph(params, batch.features, false, nullptr, &out);
  return out;
}

LossAndGrad grad_with_masks(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                            const ReluMasks& masks, PassCounts* counts) {
  if (!spec.is_mlp()) throw ConfigError("grad_with_masks requires an MLP model");
  spec.check(params, batch);
  if (counts) {
    ++counts->forward;
    ++counts->backward;
  }
  return mlp_grad(params, batch, &masks);
}

LossAndGrad grad(const ParamVector& params, const Batch& batch, const ModelSpec& spec, PassCounts* counts) {
  spec.check(params, batch);
  if (counts) {
    ++counts->forward;
    ++counts->backward;
  }
  if (spec.is_mlp()) return mlp_grad(params, batch, nullptr);
  const auto xi = noise_mean(batch);
  double loss = analytic_value(params, spec);
  std::vector<double> out(params.size());
  if (spec.is_quadratic()) {
    auto q = quadratic_gradient(params, spec);
    std::copy(q.values().begin(), q.values().end(), out.begin());
  } else {
    out[0] = double_well_slope(spec.double_well(), params[0]);
  }
  for (std::size_t i = 0; i < xi.size(); ++i) {
    loss += xi[i] * params[i];
    out[i] += xi[i];
  }
  return {loss, params.with_values(std::move(out))};
}

ParamVector finite_difference_gradient(const ParamVector& params, const Batch& batch, const ModelSpec& spec,
                                       double h) {
  if (!(h > 0.0)) throw RangeError("finite_difference_gradient: step h must be > 0");
  spec.check(params, batch);
  std::vector<double> out(params.size());
  ParamVector probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double w = params[i];
    probe[i] = w + h;
    const double up = forward_loss(probe, batch, spec);
    probe[i] = w - h;
    const double down = forward_loss(probe, batch, spec);
    probe[i] = w;
    out[i] = (up - down) / (2.0 * h);
  }
  return params.with_values(std::move(out));
}

Batch clean_batch(const ModelSpec& spec) {
  return Batch{Tensor({1, spec.input_dim()}, 0.0), {0}};
}

}  // namespace bsam
