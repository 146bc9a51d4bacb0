#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "dcvit/tensor.hpp"

namespace dcvit {

// Central-difference gradient of a scalar function: (f(x+h e_i) - f(x-h e_i)) / 2h.
template <class S, class F>
Tensor<S> finite_diff_grad(F&& f, const Tensor<S>& x, S h) {
  if (!(h > S(0))) throw std::invalid_argument("finite_diff_grad: h must be positive");
  Tensor<S> g(x.shape());
  Tensor<S> probe = x;
  for (long i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    S up = f(probe);
    probe[i] = x[i] - h;
    S dn = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(dn)))
      throw std::runtime_error("finite_diff_grad: non-finite function value");
    g[i] = (up - dn) / (S(2) * h);
  }
  return g;
}

// |a-f| / max(|a|, |f|, floor); the floor keeps near-zero entries from
// registering as large relative errors.
template <class S>
S relative_error(S analytic, S numeric, S floor = S(1e-6)) {
  S denom = std::max(std::max(std::abs(analytic), std::abs(numeric)), floor);
  return std::abs(analytic - numeric) / denom;
}

template <class S>
S max_relative_error(const Tensor<S>& analytic, const Tensor<S>& numeric, S floor = S(1e-6)) {
  if (!analytic.same_shape(numeric))
    throw std::invalid_argument("max_relative_error: " + shape_str(analytic.shape()) + " vs " +
                                shape_str(numeric.shape()));
  S worst = 0;
  for (long i = 0; i < analytic.numel(); ++i)
    worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
  return worst;
}

}  // namespace dcvit
