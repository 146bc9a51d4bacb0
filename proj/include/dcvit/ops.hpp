#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "dcvit/tensor.hpp"

namespace dcvit {

template <class S>
void ensure_finite(const Tensor<S>& t, const char* who) {
  if (!t.all_finite()) throw std::runtime_error(std::string(who) + ": non-finite element");
}

// C[i,j] = sum_t A[i,t] * B[t,j]
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  Tensor<S> out({a.extent(0), b.extent(1)});
  out.mat().noalias() = a.mat() * b.mat();
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(a.shape()));
  Tensor<S> out({a.extent(1), a.extent(0)});
  out.mat() = a.mat().transpose();
  return out;
}

// Row-wise softmax with per-row max subtraction.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  ensure_finite(x, "softmax_rows");
  Tensor<S> out(x.shape());
  auto xm = x.mat();
  auto om = out.mat();
  for (long i = 0; i < xm.rows(); ++i) {
    S mx = xm.row(i).maxCoeff();
    om.row(i) = (xm.row(i).array() - mx).exp();
    om.row(i) /= om.row(i).sum();
  }
  return out;
}

// Normalizes each trailing-axis vector to zero mean / unit variance, then
// applies the gamma/beta affine. Variance is the biased (1/D) estimate.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  long d = x.cols();
  if (gamma.numel() != d || beta.numel() != d)
    throw std::invalid_argument("layer_norm: feature width " + std::to_string(d) + " vs gamma " +
                                shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  Tensor<S> out(x.shape());
  auto xm = x.mat();
  auto om = out.mat();
  auto g = gamma.mat();
  auto b = beta.mat();
  for (long i = 0; i < xm.rows(); ++i) {
    S mean = xm.row(i).mean();
    S var = (xm.row(i).array() - mean).square().sum() / static_cast<S>(d);
    S inv = S(1) / std::sqrt(var + eps);
    om.row(i) = ((xm.row(i).array() - mean) * inv) * g.row(0).array() + b.row(0).array();
  }
  return out;
}

template <class S>
S gelu_scalar(S x) {
  // exact erf form: x * Phi(x)
  return x * S(0.5) * (S(1) + std::erf(x / S(std::sqrt(2.0))));
}

template <class S>
S gelu_grad_scalar(S x) {
  S phi = std::exp(-x * x / S(2)) / S(std::sqrt(2.0 * M_PI));
  S cdf = S(0.5) * (S(1) + std::erf(x / S(std::sqrt(2.0))));
  return cdf + x * phi;
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  for (long i = 0; i < x.numel(); ++i) out[i] = gelu_scalar(x[i]);
  return out;
}

// Affine map along the last axis: out = x * W + b.
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (w.ndim() != 2 || x.cols() != w.extent(0) || b.numel() != w.extent(1))
    throw std::invalid_argument("linear: x " + shape_str(x.shape()) + ", W " + shape_str(w.shape()) +
                                ", b " + shape_str(b.shape()));
  std::vector<long> out_shape = x.shape();
  out_shape.back() = w.extent(1);
  Tensor<S> out(out_shape);
  out.mat().noalias() = x.mat() * w.mat();
  out.mat().rowwise() += b.mat().row(0);
  return out;
}

}  // namespace dcvit
