#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sthoi/kernels.hpp"
#include "sthoi/tensor.hpp"

// Reverse-mode differentiation over a dynamically recorded graph.
namespace sthoi::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g) {
    if (grad.empty()) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that never receives a gradient.
inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

/// Leaf that accumulates a gradient.
inline Var leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  value.require_finite("forward pass");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& v : inputs) {
    if (v.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    for (auto& v : inputs) n->parents.push_back(v.shared());
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

inline bool needs(const std::shared_ptr<Node>& p) { return p && p->requires_grad; }

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar `root`.
inline void backward(const Var& root) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    n->grad.require_finite("backward pass");
    n->backward_fn(*n);
  }
}

inline Var conv3d(const Var& input, const Var& kernel, const Var& bias, const kernels::Triple& stride,
                  const kernels::Triple& pad) {
  Tensor out = kernels::conv3d_forward(input.value(), kernel.value(), bias.value(), stride, pad);
  return detail::make_result(std::move(out), {input, kernel, bias}, [stride, pad](Node& self) {
    auto& in = self.parents[0];
    auto& k = self.parents[1];
    auto& b = self.parents[2];
    auto g = kernels::conv3d_backward(in->value, k->value, self.grad, stride, pad,
                                      detail::needs(in));
    if (detail::needs(in)) in->accumulate(g.input);
    if (detail::needs(k)) k->accumulate(g.kernel);
    if (detail::needs(b)) b->accumulate(g.bias);
  });
}

/// Affine map on rows: [n x fin] -> [n x fout] with weight [fout x fin].
inline Var linear(const Var& input, const Var& weight, const Var& bias) {
  Tensor out = kernels::linear_forward(input.value(), weight.value(), bias.value());
  return detail::make_result(std::move(out), {input, weight, bias}, [](Node& self) {
    auto& in = self.parents[0];
    auto& w = self.parents[1];
    auto& b = self.parents[2];
    const std::size_t n = in->value.dim(0), fin = in->value.dim(1), fout = w->value.dim(0);
    if (detail::needs(in)) {
      Tensor gi(in->value.shape());
      kernels::gemm_nn(n, fin, fout, self.grad.ptr(), w->value.ptr(), gi.ptr());
      in->accumulate(gi);
    }
    if (detail::needs(w)) {
      Tensor gw(w->value.shape());
      kernels::gemm_tn(fout, fin, n, self.grad.ptr(), in->value.ptr(), gw.ptr());
      w->accumulate(gw);
    }
    if (detail::needs(b)) {
      Tensor gb(b->value.shape());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < fout; ++j) gb[j] += self.grad.at(i, j);
      }
      b->accumulate(gb);
    }
  });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return detail::make_result(std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(p->value[i] > 0.0)) g[i] = 0.0;
    }
    p->accumulate(g);
  });
}

/// Logistic function, clamped so outputs stay strictly inside (0,1).
inline double sigmoid_scalar(double z) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(s, lo, hi);
}

inline Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = sigmoid_scalar(v);
  return detail::make_result(std::move(out), {x}, [](Node& self) {
    Tensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] *= s * (1.0 - s);
    }
    self.parents[0]->accumulate(g);
  });
}

namespace detail {

/// For each flat index of `in`, the flat index of its slot after removing `axes`.
inline std::vector<std::size_t> reduction_map(const Shape& in, const std::vector<std::size_t>& axes,
                                              Shape& out_shape) {
  std::vector<bool> reduce(in.size(), false);
  for (auto a : axes) {
    if (a >= in.size()) {
      throw ShapeError(sthoi::detail::concat("mean_pool: axis ", a, " out of range for rank ",
                                             in.size()));
    }
    reduce[a] = true;
  }
  out_shape.clear();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!reduce[i]) out_shape.push_back(in[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<std::size_t> map(shape_numel(in));
  std::vector<std::size_t> idx(in.size(), 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < in.size(); ++d) {
      if (!reduce[d]) o = o * in[d] + idx[d];
    }
    map[flat] = o;
    for (std::size_t d = in.size(); d-- > 0;) {
      if (++idx[d] < in[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// Arithmetic mean over `axes`; the reduced axes are removed from the shape.
inline Var mean_pool(const Var& x, const std::vector<std::size_t>& axes) {
  Shape out_shape;
  auto map = detail::reduction_map(x.shape(), axes, out_shape);
  const double inv = static_cast<double>(shape_numel(out_shape)) / static_cast<double>(x.size());
  Tensor out(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) out[map[i]] += x.value()[i];
  out *= inv;
  return detail::make_result(std::move(out), {x}, [map = std::move(map), inv](Node& self) {
    auto& p = self.parents[0];
    Tensor g(p->value.shape());
    for (std::size_t i = 0; i < map.size(); ++i) g[i] = self.grad[map[i]] * inv;
    p->accumulate(g);
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return detail::make_result(std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    p->accumulate(self.grad.reshaped(p->value.shape()));
  });
}

inline Var flatten(const Var& x) { return reshape(x, Shape{x.size()}); }

inline Var add(const Var& a, const Var& b) {
  Tensor out = a.value() + b.value();
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (detail::needs(p)) p->accumulate(self.grad);
    }
  });
}

inline Var scale(const Var& x, double s) {
  Tensor out = x.value() * s;
  return detail::make_result(std::move(out), {x}, [s](Node& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

/// Concatenates the flattened inputs into one vector.
inline Var concat(const std::vector<Var>& parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  if (total == 0) throw ShapeError("concat: no elements");
  Tensor out(Shape{total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + off);
    off += p.size();
  }
  return detail::make_result(std::move(out), parts, [](Node& self) {
    std::size_t o = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (detail::needs(p)) {
        Tensor g(p->value.shape());
        std::copy_n(self.grad.ptr() + o, n, g.ptr());
        p->accumulate(g);
      }
      o += n;
    }
  });
}

/// Stacks equal-length vectors into a [rows x features] matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t f = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != f) {
      throw ShapeError(sthoi::detail::concat("stack_rows: row of length ", r.size(), " vs ", f));
    }
  }
  Var flat = concat(rows);
  return reshape(flat, Shape{rows.size(), f});
}

/// Selects time step `t` of a [C x T x H x W] map, giving [C x H x W].
inline Var time_slice(const Var& x, std::size_t t) {
  const auto& s = x.shape();
  if (s.size() != 4 || t >= s[1]) {
    throw ShapeError(sthoi::detail::concat("time_slice: index ", t, " on shape ", shape_str(s)));
  }
  const std::size_t C = s[0], T = s[1], HW = s[2] * s[3];
  Tensor out(Shape{C, s[2], s[3]});
  for (std::size_t c = 0; c < C; ++c) {
    std::copy_n(x.value().ptr() + (c * T + t) * HW, HW, out.ptr() + c * HW);
  }
  return detail::make_result(std::move(out), {x}, [t](Node& self) {
    auto& p = self.parents[0];
    const auto& ps = p->value.shape();
    const std::size_t C = ps[0], T = ps[1], HW = ps[2] * ps[3];
    Tensor g(ps);
    for (std::size_t c = 0; c < C; ++c) {
      std::copy_n(self.grad.ptr() + c * HW, HW, g.ptr() + (c * T + t) * HW);
    }
    p->accumulate(g);
  });
}

/// Scalar sum(weights * x) with fixed weights.
inline Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.size() != x.size()) {
    throw ShapeError(sthoi::detail::concat("weighted_sum: ", weights.size(), " weights for ",
                                           x.size(), " values"));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.value()[i];
  return detail::make_result(Tensor::scalar(s), {x}, [weights](Node& self) {
    auto& p = self.parents[0];
    Tensor g = weights.reshaped(p->value.shape());
    g *= self.grad[0];
    p->accumulate(g);
  });
}

/// Numerically stable softplus, log(1 + e^z).
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

/// Mean per-class binary cross entropy over all n*C entries, in log-sum-exp form.
inline Var bce_multilabel(const Var& logits, const Tensor& targets) {
  logits.value().require_same_shape(targets, "bce_multilabel");
  for (double y : targets.data()) {
    if (y != 0.0 && y != 1.0) throw InputError("bce_multilabel: targets must be 0 or 1");
  }
  const std::size_t n = targets.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.value()[i];
    loss += softplus(z) - targets[i] * z;
  }
  loss /= static_cast<double>(n);
  return detail::make_result(Tensor::scalar(loss), {logits}, [targets](Node& self) {
    auto& p = self.parents[0];
    const double g0 = self.grad[0] / static_cast<double>(targets.size());
    Tensor g(p->value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = g0 * (sigmoid_scalar(p->value[i]) - targets[i]);
    }
    p->accumulate(g);
  });
}

}  // namespace sthoi::ag
