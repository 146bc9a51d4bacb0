#pragma once

#include <string>
#include <vector>

#include "dcvit/autodiff.hpp"
#include "dcvit/rng.hpp"

namespace dcvit {

enum class PoolMode { Mean, Max, Cls, Abmil };

inline PoolMode pool_mode_from_string(const std::string& s) {
  if (s == "mean") return PoolMode::Mean;
  if (s == "max") return PoolMode::Max;
  if (s == "cls") return PoolMode::Cls;
  if (s == "abmil") return PoolMode::Abmil;
  throw std::invalid_argument("unknown pooling mode '" + s + "' (expected mean|max|cls|abmil)");
}

inline std::string to_string(PoolMode m) {
  switch (m) {
    case PoolMode::Mean: return "mean";
    case PoolMode::Max: return "max";
    case PoolMode::Cls: return "cls";
    case PoolMode::Abmil: return "abmil";
  }
  return "?";
}

// Pooling function g: R^{n x D} -> R^{D}. The abmil variant carries a gating
// matrix V (D x Da) and attention vector u (Da); weights are
// softmax_i(u^T tanh(V x_i^T)).
template <class S>
struct PoolParams {
  PoolMode mode = PoolMode::Mean;
  Var<S> abmil_v;
  Var<S> abmil_u;

  static PoolParams init(PoolMode mode, long dim, RandomStream& rng, bool trainable = true) {
    PoolParams p;
    p.mode = mode;
    if (mode == PoolMode::Abmil) {
      long da = std::max<long>(1, dim / 2);
      p.abmil_v = Var<S>(rng.trunc_normal_tensor<S>({dim, da}, 0.02), trainable);
      p.abmil_u = Var<S>(rng.trunc_normal_tensor<S>({da, 1}, 0.02), trainable);
    }
    return p;
  }

  template <class Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    if (mode == PoolMode::Abmil) {
      fn(prefix + ".V", abmil_v);
      fn(prefix + ".u", abmil_u);
    }
  }
};

template <class S>
Var<S> abmil_weights(GradTape<S>& tape, const Var<S>& x, const PoolParams<S>& p) {
  Var<S> gate = tanh_op(tape, matmul(tape, x, p.abmil_v));
  Var<S> logits = matmul(tape, gate, p.abmil_u);  // n x 1
  return transpose(tape, softmax_rows(tape, transpose(tape, logits)));
}

template <class S>
Var<S> pool(GradTape<S>& tape, const Var<S>& x, const PoolParams<S>& p) {
  if (x.value().rows() < 1) throw std::invalid_argument("pool: empty token set");
  switch (p.mode) {
    case PoolMode::Mean: return reduce_mean_rows(tape, x);
    case PoolMode::Max: return reduce_max_rows(tape, x);
    case PoolMode::Cls: return slice_rows(tape, x, 0, 1);
    case PoolMode::Abmil: {
      Var<S> w = abmil_weights(tape, x, p);
      return matmul(tape, transpose(tape, w), x);
    }
  }
  throw std::logic_error("pool: unreachable");
}

template <class S>
struct AggregationConfig {
  PoolParams<S> g_sp;
  PoolParams<S> g_ch;
  bool joint = false;
};

namespace detail {
inline std::vector<long> present_indices(const std::vector<bool>& present) {
  std::vector<long> live;
  for (size_t c = 0; c < present.size(); ++c)
    if (present[c]) live.push_back(static_cast<long>(c));
  if (live.empty()) throw std::invalid_argument("aggregation: empty channel mask");
  return live;
}
}  // namespace detail

// Decoupled Aggregation: pool spatially within each present channel, then
// pool the stacked channel embeddings. x is (C*N') x D channel-major.
template <class S>
Var<S> dag(GradTape<S>& tape, const Var<S>& x, long channels, long tokens,
           const AggregationConfig<S>& cfg, const std::vector<bool>& present) {
  std::vector<long> live = detail::present_indices(present);
  std::vector<Var<S>> ys;
  ys.reserve(live.size());
  for (long c : live) ys.push_back(pool(tape, slice_rows(tape, x, c * tokens, tokens), cfg.g_sp));
  Var<S> stacked = concat_rows(tape, ys);
  return pool(tape, stacked, cfg.g_ch);
}

// Ablation: pool once over the flattened present tokens.
template <class S>
Var<S> pool_joint(GradTape<S>& tape, const Var<S>& x, long channels, long tokens,
                  const PoolParams<S>& p, const std::vector<bool>& present) {
  std::vector<long> live = detail::present_indices(present);
  std::vector<long> idx;
  idx.reserve(live.size() * static_cast<size_t>(tokens));
  for (long c : live)
    for (long n = 0; n < tokens; ++n) idx.push_back(c * tokens + n);
  return pool(tape, gather_rows(tape, x, std::move(idx)), p);
}

// ---- plain-tensor entry points --------------------------------------------

template <class S>
Tensor<S> pool(const Tensor<S>& x, const PoolParams<S>& p) {
  GradTape<S> tape(false);
  return pool(tape, Var<S>(x), p).value().reshaped({x.cols()});
}

template <class S>
Tensor<S> dag(const Tensor<S>& x, const AggregationConfig<S>& cfg, const std::vector<bool>& present) {
  if (x.ndim() != 3) throw std::invalid_argument("dag: expected [C,N,D], got " + shape_str(x.shape()));
  GradTape<S> tape(false);
  Var<S> v(x.reshaped({x.extent(0) * x.extent(1), x.extent(2)}));
  return dag(tape, v, x.extent(0), x.extent(1), cfg, present).value().reshaped({x.extent(2)});
}

template <class S>
Tensor<S> pool_joint(const Tensor<S>& x, const PoolParams<S>& p, const std::vector<bool>& present) {
  if (x.ndim() != 3) throw std::invalid_argument("pool_joint: expected [C,N,D], got " + shape_str(x.shape()));
  GradTape<S> tape(false);
  Var<S> v(x.reshaped({x.extent(0) * x.extent(1), x.extent(2)}));
  return pool_joint(tape, v, x.extent(0), x.extent(1), p, present).value().reshaped({x.extent(2)});
}

}  // namespace dcvit
