#pragma once

#include <string>
#include <vector>

#include "dcvit/autodiff.hpp"
#include "dcvit/rng.hpp"

namespace dcvit {

// Shared q/k/v/o projections of one attention layer. All four are D x D with
// bias; H heads of width D/H.
template <class S>
struct AttentionParams {
  long dim = 0;
  long heads = 1;
  Var<S> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;

  long head_dim() const { return dim / heads; }

  static AttentionParams init(long dim, long heads, RandomStream& rng, bool trainable = true,
                              double std_dev = 0.02) {
    if (heads <= 0 || dim % heads != 0)
      throw std::invalid_argument("attention: D=" + std::to_string(dim) + " not divisible by H=" +
                                  std::to_string(heads));
    AttentionParams p;
    p.dim = dim;
    p.heads = heads;
    auto w = [&] { return Var<S>(rng.trunc_normal_tensor<S>({dim, dim}, std_dev), trainable); };
    auto b = [&] { return Var<S>(Tensor<S>::zeros({dim}), trainable); };
    p.w_q = w(); p.b_q = b();
    p.w_k = w(); p.b_k = b();
    p.w_v = w(); p.b_v = b();
    p.w_o = w(); p.b_o = b();
    return p;
  }

  template <class Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".W_Q", w_q); fn(prefix + ".b_Q", b_q);
    fn(prefix + ".W_K", w_k); fn(prefix + ".b_K", b_k);
    fn(prefix + ".W_V", w_v); fn(prefix + ".b_V", b_v);
    fn(prefix + ".W_O", w_o); fn(prefix + ".b_O", b_o);
  }
};

template <class S>
struct DsaLayerParams {
  AttentionParams<S> attn;
  Var<S> alpha;  // defined iff layer_in_m
  bool layer_in_m = false;

  static DsaLayerParams init(long dim, long heads, bool in_m, double alpha_init, RandomStream& rng,
                             bool trainable = true) {
    DsaLayerParams p;
    p.attn = AttentionParams<S>::init(dim, heads, rng, trainable);
    p.layer_in_m = in_m;
    if (in_m) p.alpha = Var<S>(Tensor<S>::scalar(static_cast<S>(alpha_init)), trainable);
    return p;
  }
};

// softmax(q k^T / scale) v
template <class S>
Var<S> scaled_dot_attention(GradTape<S>& tape, const Var<S>& q, const Var<S>& k, const Var<S>& v,
                            S scale) {
  if (!(scale > S(0))) throw std::invalid_argument("scaled_dot_attention: scale must be positive");
  if (!q.value().same_shape(k.value()) || !q.value().same_shape(v.value()))
    throw std::invalid_argument("scaled_dot_attention: q " + shape_str(q.value().shape()) + ", k " +
                                shape_str(k.value().shape()) + ", v " + shape_str(v.value().shape()));
  Var<S> scores = affine(tape, matmul(tape, q, transpose(tape, k)), S(1) / scale, S(0));
  return matmul(tape, softmax_rows(tape, scores), v);
}

// Attn(x) with heads, before the output projection. Splits q/k/v into H
// slices of width D/H, attends each with scale sqrt(D/H), re-concatenates.
template <class S>
Var<S> multi_head_attend(GradTape<S>& tape, const Var<S>& x, const AttentionParams<S>& p) {
  if (x.value().cols() != p.dim)
    throw std::invalid_argument("multi_head_attend: x " + shape_str(x.value().shape()) + " vs D=" +
                                std::to_string(p.dim));
  if (p.dim % p.heads != 0)
    throw std::invalid_argument("multi_head_attend: D=" + std::to_string(p.dim) +
                                " not divisible by H=" + std::to_string(p.heads));
  Var<S> q = linear(tape, x, p.w_q, p.b_q);
  Var<S> k = linear(tape, x, p.w_k, p.b_k);
  Var<S> v = linear(tape, x, p.w_v, p.b_v);
  const long dh = p.head_dim();
  const S scale = static_cast<S>(std::sqrt(static_cast<double>(dh)));
  if (p.heads == 1) return scaled_dot_attention(tape, q, k, v, scale);
  std::vector<Var<S>> heads;
  heads.reserve(static_cast<size_t>(p.heads));
  for (long h = 0; h < p.heads; ++h) {
    Var<S> qh = slice_cols(tape, q, h * dh, dh);
    Var<S> kh = slice_cols(tape, k, h * dh, dh);
    Var<S> vh = slice_cols(tape, v, h * dh, dh);
    heads.push_back(scaled_dot_attention(tape, qh, kh, vh, scale));
  }
  return concat_cols(tape, heads);
}

// Baseline MC-ViT attention over the flattened CN sequence.
template <class S>
Var<S> msa_joint(GradTape<S>& tape, const Var<S>& x, const AttentionParams<S>& p) {
  return linear(tape, multi_head_attend(tape, x, p), p.w_o, p.b_o);
}

// Per-channel attention over the N tokens of each channel. x is (C*N) x D in
// channel-major token order.
template <class S>
Var<S> spatial_attention(GradTape<S>& tape, const Var<S>& x, long channels, long tokens,
                         const AttentionParams<S>& p) {
  if (x.value().rows() != channels * tokens)
    throw std::invalid_argument("spatial_attention: " + shape_str(x.value().shape()) + " vs C*N=" +
                                std::to_string(channels * tokens));
  std::vector<Var<S>> out;
  out.reserve(static_cast<size_t>(channels));
  for (long c = 0; c < channels; ++c)
    out.push_back(multi_head_attend(tape, slice_rows(tape, x, c * tokens, tokens), p));
  return concat_rows(tape, out);
}

// Attention across channels at each spatial location. Channels where
// present[c] is false are removed from the softmax and their output rows are
// zero.
template <class S>
Var<S> channel_attention(GradTape<S>& tape, const Var<S>& x, long channels, long tokens,
                         const AttentionParams<S>& p, const std::vector<bool>& present) {
  if (static_cast<long>(present.size()) != channels)
    throw std::invalid_argument("channel_attention: mask length " + std::to_string(present.size()) +
                                " vs C=" + std::to_string(channels));
  std::vector<long> live;
  for (long c = 0; c < channels; ++c)
    if (present[static_cast<size_t>(c)]) live.push_back(c);
  if (live.empty()) throw std::invalid_argument("channel_attention: empty channel mask");
  const long cp = static_cast<long>(live.size());

  std::vector<Var<S>> per_location;
  per_location.reserve(static_cast<size_t>(tokens));
  for (long n = 0; n < tokens; ++n) {
    std::vector<long> idx(live.size());
    for (size_t i = 0; i < live.size(); ++i) idx[i] = live[i] * tokens + n;
    per_location.push_back(multi_head_attend(tape, gather_rows(tape, x, idx), p));
  }
  Var<S> packed = concat_rows(tape, per_location);  // (N*cp) x D, location-major

  // scatter back to channel-major order, absent channels -> the zero row
  Var<S> zero_row(Tensor<S>::zeros({1, x.value().cols()}));
  Var<S> with_zero = concat_rows<S>(tape, {packed, zero_row});
  std::vector<long> order(static_cast<size_t>(channels * tokens));
  std::vector<long> pos(static_cast<size_t>(channels), -1);
  for (long i = 0; i < cp; ++i) pos[static_cast<size_t>(live[static_cast<size_t>(i)])] = i;
  for (long c = 0; c < channels; ++c)
    for (long n = 0; n < tokens; ++n)
      order[static_cast<size_t>(c * tokens + n)] =
          pos[static_cast<size_t>(c)] >= 0 ? n * cp + pos[static_cast<size_t>(c)] : tokens * cp;
  return gather_rows(tape, with_zero, std::move(order));
}

// alpha * ch + (1 - alpha) * sp, the pre-W_O mix of the two branches.
template <class S>
Var<S> mix_branches(GradTape<S>& tape, const Var<S>& alpha, const Var<S>& ch, const Var<S>& sp) {
  Var<S> one_minus = affine(tape, alpha, S(-1), S(1));
  return add(tape, mul_scalar(tape, alpha, ch), mul_scalar(tape, one_minus, sp));
}

// Decoupled Self-Attention: spatial branch always, channel branch mixed in by
// alpha on layers in M, then the shared output projection. Residual-free; the
// encoder block owns the residual.
template <class S>
Var<S> dsa(GradTape<S>& tape, const Var<S>& x, long channels, long tokens,
           const DsaLayerParams<S>& p, const std::vector<bool>& present) {
  Var<S> sp = spatial_attention(tape, x, channels, tokens, p.attn);
  Var<S> pre = sp;
  if (p.layer_in_m) {
    Var<S> ch = channel_attention(tape, x, channels, tokens, p.attn, present);
    pre = mix_branches(tape, p.alpha, ch, sp);
  }
  return linear(tape, pre, p.attn.w_o, p.attn.b_o);
}

// ---- plain-tensor entry points (forward only) ----------------------------

template <class S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, S scale) {
  GradTape<S> tape(false);
  return scaled_dot_attention(tape, Var<S>(q), Var<S>(k), Var<S>(v), scale).value();
}

template <class S>
Tensor<S> multi_head_attend(const Tensor<S>& x, const AttentionParams<S>& p) {
  GradTape<S> tape(false);
  return multi_head_attend(tape, Var<S>(x), p).value();
}

template <class S>
Tensor<S> msa_joint(const Tensor<S>& x, const AttentionParams<S>& p) {
  GradTape<S> tape(false);
  return msa_joint(tape, Var<S>(x), p).value();
}

namespace detail {
template <class S>
std::pair<Var<S>, std::pair<long, long>> as_sequence(const Tensor<S>& x) {
  if (x.ndim() != 3) throw std::invalid_argument("expected [C,N,D] tensor, got " + shape_str(x.shape()));
  long c = x.extent(0), n = x.extent(1), d = x.extent(2);
  return {Var<S>(x.reshaped({c * n, d})), {c, n}};
}
}  // namespace detail

template <class S>
Tensor<S> spatial_attention(const Tensor<S>& x, const AttentionParams<S>& p) {
  GradTape<S> tape(false);
  auto [v, cn] = detail::as_sequence(x);
  return spatial_attention(tape, v, cn.first, cn.second, p).value().reshaped(x.shape());
}

template <class S>
Tensor<S> channel_attention(const Tensor<S>& x, const AttentionParams<S>& p,
                            const std::vector<bool>& present) {
  GradTape<S> tape(false);
  auto [v, cn] = detail::as_sequence(x);
  return channel_attention(tape, v, cn.first, cn.second, p, present).value().reshaped(x.shape());
}

template <class S>
Tensor<S> dsa(const Tensor<S>& x, const DsaLayerParams<S>& p, const std::vector<bool>& present) {
  GradTape<S> tape(false);
  auto [v, cn] = detail::as_sequence(x);
  return dsa(tape, v, cn.first, cn.second, p, present).value().reshaped(x.shape());
}

}  // namespace dcvit
