#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dcvit/ops.hpp"
#include "dcvit/tensor.hpp"

namespace dcvit {

template <class S>
struct VarNode {
  Tensor<S> value;
  Tensor<S> grad;  // empty until first accumulation
  bool requires_grad = false;

  bool has_grad() const { return grad.numel() == value.numel() && grad.numel() > 0; }
  void ensure_grad() {
    if (!has_grad()) grad = Tensor<S>::zeros(value.shape());
  }
};

// Handle to a node in the recorded computation graph.
template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false)
      : node_(std::make_shared<VarNode<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<S>& value() const { return node_->value; }
  const Tensor<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_) node_->grad = Tensor<S>();
  }
  void set_value(Tensor<S> v) { node_->value = std::move(v); }
  std::shared_ptr<VarNode<S>>& node() { return node_; }
  const std::shared_ptr<VarNode<S>>& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<VarNode<S>> node_;
};

// Ordered record of primitive applications; replaying it backward pushes
// vector-Jacobian products from the seeded output to every recorded input.
template <class S>
class GradTape {
 public:
  explicit GradTape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return steps_.size(); }

  void record(std::function<void()> step) {
    if (recording_) steps_.push_back(std::move(step));
  }

  void replay_reverse() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  bool recording_;
  std::vector<std::function<void()>> steps_;
};

template <class S>
void backward(GradTape<S>& tape, Var<S>& out, const Tensor<S>& seed) {
  if (!out.value().same_shape(seed))
    throw std::invalid_argument("backward: seed " + shape_str(seed.shape()) + " vs output " +
                                shape_str(out.value().shape()));
  out.node()->ensure_grad();
  out.node()->grad = seed;
  tape.replay_reverse();
}

template <class S>
void backward(GradTape<S>& tape, Var<S>& out) {
  backward(tape, out, Tensor<S>::ones(out.value().shape()));
}

namespace detail {

template <class S>
bool result_needs_grad(const GradTape<S>& tape, std::initializer_list<const Var<S>*> parents) {
  if (!tape.recording()) return false;
  for (const Var<S>* p : parents)
    if (p->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---- differentiable primitives ------------------------------------------

template <class S>
Var<S> add(GradTape<S>& tape, const Var<S>& a, const Var<S>& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("add: " + shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
  Tensor<S> v = a.value();
  v.mat() += b.value().mat();
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape.record([an, bn, on] {
      if (!on->has_grad()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad.mat() += on->grad.mat();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad.mat() += on->grad.mat();
      }
    });
  }
  return out;
}

template <class S>
Var<S> sub(GradTape<S>& tape, const Var<S>& a, const Var<S>& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("sub: " + shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
  Tensor<S> v = a.value();
  v.mat() -= b.value().mat();
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape.record([an, bn, on] {
      if (!on->has_grad()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad.mat() += on->grad.mat();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad.mat() -= on->grad.mat();
      }
    });
  }
  return out;
}

template <class S>
Var<S> mul(GradTape<S>& tape, const Var<S>& a, const Var<S>& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("mul: " + shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
  Tensor<S> v = a.value();
  v.mat().array() *= b.value().mat().array();
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape.record([an, bn, on] {
      if (!on->has_grad()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad.mat().array() += on->grad.mat().array() * bn->value.mat().array();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad.mat().array() += on->grad.mat().array() * an->value.mat().array();
      }
    });
  }
  return out;
}

// k*x + m, elementwise with scalar constants
template <class S>
Var<S> affine(GradTape<S>& tape, const Var<S>& x, S k, S m) {
  Tensor<S> v = x.value();
  v.mat().array() = v.mat().array() * k + m;
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on, k] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      xn->grad.mat() += on->grad.mat() * k;
    });
  }
  return out;
}

template <class S>
Var<S> matmul(GradTape<S>& tape, const Var<S>& a, const Var<S>& b) {
  Tensor<S> v = matmul(a.value(), b.value());
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&a, &b}));
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node(), on = out.node();
    tape.record([an, bn, on] {
      if (!on->has_grad()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad.mat().noalias() += on->grad.mat() * bn->value.mat().transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad.mat().noalias() += an->value.mat().transpose() * on->grad.mat();
      }
    });
  }
  return out;
}

template <class S>
Var<S> transpose(GradTape<S>& tape, const Var<S>& a) {
  Tensor<S> v = transpose(a.value());
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&a}));
  if (out.requires_grad()) {
    auto an = a.node(), on = out.node();
    tape.record([an, on] {
      if (!on->has_grad()) return;
      an->ensure_grad();
      an->grad.mat() += on->grad.mat().transpose();
    });
  }
  return out;
}

// out[i,:] = x[i,:] + b  (b is a length-D row)
template <class S>
Var<S> broadcast_add_row(GradTape<S>& tape, const Var<S>& x, const Var<S>& b) {
  if (b.value().numel() != x.value().cols())
    throw std::invalid_argument("broadcast_add_row: row " + shape_str(b.value().shape()) + " vs " +
                                shape_str(x.value().shape()));
  Tensor<S> v = x.value();
  v.mat().rowwise() += b.value().mat().row(0);
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x, &b}));
  if (out.requires_grad()) {
    auto xn = x.node(), bn = b.node(), on = out.node();
    tape.record([xn, bn, on] {
      if (!on->has_grad()) return;
      if (xn->requires_grad) {
        xn->ensure_grad();
        xn->grad.mat() += on->grad.mat();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad.mat().row(0) += on->grad.mat().colwise().sum();
      }
    });
  }
  return out;
}

template <class S>
Var<S> linear(GradTape<S>& tape, const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  return broadcast_add_row(tape, matmul(tape, x, w), b);
}

template <class S>
Var<S> softmax_rows(GradTape<S>& tape, const Var<S>& x) {
  Tensor<S> v = softmax_rows(x.value());
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      auto y = on->value.mat();
      auto g = on->grad.mat();
      auto gx = xn->grad.mat();
      for (long i = 0; i < y.rows(); ++i) {
        S dot = (g.row(i).array() * y.row(i).array()).sum();
        gx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
      }
    });
  }
  return out;
}

template <class S>
Var<S> layer_norm(GradTape<S>& tape, const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  Tensor<S> v = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x, &gamma, &beta}));
  if (out.requires_grad()) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    tape.record([xn, gn, bn, on, eps] {
      if (!on->has_grad()) return;
      auto xm = xn->value.mat();
      auto g = on->grad.mat();
      long d = xm.cols();
      for (long i = 0; i < xm.rows(); ++i) {
        S mean = xm.row(i).mean();
        S var = (xm.row(i).array() - mean).square().sum() / static_cast<S>(d);
        S inv = S(1) / std::sqrt(var + eps);
        Eigen::Array<S, 1, Eigen::Dynamic> xhat = (xm.row(i).array() - mean) * inv;
        if (bn->requires_grad) {
          bn->ensure_grad();
          bn->grad.mat().row(0) += g.row(i);
        }
        if (gn->requires_grad) {
          gn->ensure_grad();
          gn->grad.mat().row(0).array() += g.row(i).array() * xhat;
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          Eigen::Array<S, 1, Eigen::Dynamic> dy = g.row(i).array() * gn->value.mat().row(0).array();
          S mdy = dy.mean();
          S mdyx = (dy * xhat).mean();
          xn->grad.mat().row(i).array() += inv * (dy - mdy - xhat * mdyx);
        }
      }
    });
  }
  return out;
}

template <class S>
Var<S> gelu(GradTape<S>& tape, const Var<S>& x) {
  Tensor<S> v = gelu(x.value());
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      for (long i = 0; i < xn->value.numel(); ++i) {
        S d = gelu_grad_scalar(xn->value[i]);
#ifdef DCVIT_CORRUPT_BACKWARD
        d *= S(1.01);  // negative-control build: gradcheck must fail
#endif
        xn->grad[i] += on->grad[i] * d;
      }
    });
  }
  return out;
}

template <class S>
Var<S> tanh_op(GradTape<S>& tape, const Var<S>& x) {
  Tensor<S> v = x.value();
  v.mat().array() = v.mat().array().tanh();
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      xn->grad.mat().array() += on->grad.mat().array() * (S(1) - on->value.mat().array().square());
    });
  }
  return out;
}

// out row r = x row idx[r]; duplicate indices accumulate on backward.
template <class S>
Var<S> gather_rows(GradTape<S>& tape, const Var<S>& x, std::vector<long> idx) {
  const long n = static_cast<long>(idx.size());
  const long d = x.value().cols();
  for (long r : idx)
    if (r < 0 || r >= x.value().rows())
      throw std::invalid_argument("gather_rows: index " + std::to_string(r) + " out of " +
                                  std::to_string(x.value().rows()));
  Tensor<S> v({n, d});
  for (long r = 0; r < n; ++r) v.mat().row(r) = x.value().mat().row(idx[static_cast<size_t>(r)]);
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on, idx = std::move(idx)] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      for (size_t r = 0; r < idx.size(); ++r)
        xn->grad.mat().row(idx[r]) += on->grad.mat().row(static_cast<long>(r));
    });
  }
  return out;
}

template <class S>
Var<S> slice_rows(GradTape<S>& tape, const Var<S>& x, long r0, long n) {
  std::vector<long> idx(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = r0 + i;
  return gather_rows(tape, x, std::move(idx));
}

template <class S>
Var<S> concat_rows(GradTape<S>& tape, const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const long d = parts[0].value().cols();
  long n = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != d) throw std::invalid_argument("concat_rows: column mismatch");
    n += p.value().rows();
  }
  Tensor<S> v({n, d});
  long at = 0;
  bool rg = false;
  for (const auto& p : parts) {
    v.mat().middleRows(at, p.value().rows()) = p.value().mat();
    at += p.value().rows();
    rg = rg || p.requires_grad();
  }
  Var<S> out(std::move(v), tape.recording() && rg);
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<VarNode<S>>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    tape.record([nodes = std::move(nodes), on] {
      if (!on->has_grad()) return;
      long at2 = 0;
      for (auto& pn : nodes) {
        long r = pn->value.rows();
        if (pn->requires_grad) {
          pn->ensure_grad();
          pn->grad.mat() += on->grad.mat().middleRows(at2, r);
        }
        at2 += r;
      }
    });
  }
  return out;
}

template <class S>
Var<S> slice_cols(GradTape<S>& tape, const Var<S>& x, long c0, long w) {
  if (c0 < 0 || c0 + w > x.value().cols()) throw std::invalid_argument("slice_cols: out of range");
  Tensor<S> v({x.value().rows(), w});
  v.mat() = x.value().mat().middleCols(c0, w);
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on, c0, w] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      xn->grad.mat().middleCols(c0, w) += on->grad.mat();
    });
  }
  return out;
}

template <class S>
Var<S> concat_cols(GradTape<S>& tape, const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const long n = parts[0].value().rows();
  long d = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.value().rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
    d += p.value().cols();
    rg = rg || p.requires_grad();
  }
  Tensor<S> v({n, d});
  long at = 0;
  for (const auto& p : parts) {
    v.mat().middleCols(at, p.value().cols()) = p.value().mat();
    at += p.value().cols();
  }
  Var<S> out(std::move(v), tape.recording() && rg);
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<VarNode<S>>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    tape.record([nodes = std::move(nodes), on] {
      if (!on->has_grad()) return;
      long at2 = 0;
      for (auto& pn : nodes) {
        long w = pn->value.cols();
        if (pn->requires_grad) {
          pn->ensure_grad();
          pn->grad.mat() += on->grad.mat().middleCols(at2, w);
        }
        at2 += w;
      }
    });
  }
  return out;
}

template <class S>
Var<S> reduce_mean_rows(GradTape<S>& tape, const Var<S>& x) {
  const long n = x.value().rows();
  Tensor<S> v({1, x.value().cols()});
  v.mat().row(0) = x.value().mat().colwise().mean();
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on, n] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      xn->grad.mat().rowwise() += (on->grad.mat().row(0) / static_cast<S>(n));
    });
  }
  return out;
}

// Per-dimension max over rows; gradient routes to the first row attaining it.
template <class S>
Var<S> reduce_max_rows(GradTape<S>& tape, const Var<S>& x) {
  const long n = x.value().rows(), d = x.value().cols();
  Tensor<S> v({1, d});
  std::vector<long> arg(static_cast<size_t>(d), 0);
  for (long j = 0; j < d; ++j) {
    S best = x.value().at2(0, j);
    for (long i = 1; i < n; ++i)
      if (x.value().at2(i, j) > best) {
        best = x.value().at2(i, j);
        arg[static_cast<size_t>(j)] = i;
      }
    v.at2(0, j) = best;
  }
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on, arg = std::move(arg)] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      for (long j = 0; j < static_cast<long>(arg.size()); ++j)
        xn->grad.at2(arg[static_cast<size_t>(j)], j) += on->grad.at2(0, j);
    });
  }
  return out;
}

template <class S>
Var<S> sum_all(GradTape<S>& tape, const Var<S>& x) {
  Tensor<S> v = Tensor<S>::scalar(x.value().mat().sum());
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&x}));
  if (out.requires_grad()) {
    auto xn = x.node(), on = out.node();
    tape.record([xn, on] {
      if (!on->has_grad()) return;
      xn->ensure_grad();
      xn->grad.mat().array() += on->grad[0];
    });
  }
  return out;
}

// s is a single-element tensor; out = s * x.
template <class S>
Var<S> mul_scalar(GradTape<S>& tape, const Var<S>& s, const Var<S>& x) {
  if (s.value().numel() != 1) throw std::invalid_argument("mul_scalar: scalar operand must have one element");
  Tensor<S> v = x.value();
  v.mat() *= s.value()[0];
  Var<S> out(std::move(v), detail::result_needs_grad(tape, {&s, &x}));
  if (out.requires_grad()) {
    auto sn = s.node(), xn = x.node(), on = out.node();
    tape.record([sn, xn, on] {
      if (!on->has_grad()) return;
      if (sn->requires_grad) {
        sn->ensure_grad();
        sn->grad[0] += (on->grad.mat().array() * xn->value.mat().array()).sum();
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        xn->grad.mat() += on->grad.mat() * sn->value[0];
      }
    });
  }
  return out;
}

}  // namespace dcvit
