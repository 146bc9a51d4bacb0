#pragma once

#include <string>
#include <vector>

#include "dcvit/aggregation.hpp"
#include "dcvit/attention.hpp"
#include "dcvit/autodiff.hpp"
#include "dcvit/rng.hpp"

namespace dcvit {

// Architectural hyperparameters. M holds 1-based layer indices at which
// channel attention is active; alpha_init seeds the
// per-layer mixing scalar.
struct ModelConfig {
  long C_max = 3;
  long H_img = 16;
  long P = 4;
  long D = 384;
  long L = 12;
  long H = 6;
  std::vector<long> M = {4, 6, 8};
  double alpha_init = 0.1;
  double mlp_ratio = 4.0;
  bool use_channel_embed = true;
  bool use_cls_per_channel = false;
  std::string g_sp = "abmil";
  std::string g_ch = "max";
  long num_classes = 2;
  std::string block_kind = "dcvit";  // dcvit | mcvit
  // use_norms=false drops every layer norm so the blocks match the bare
  // update equations; canonical_residual switches to the two-residual ViT
  // block instead of the literal x + MLP(x + DSA(x)) form.
  bool use_norms = true;
  bool canonical_residual = false;

  long grid() const { return H_img / P; }
  long tokens_per_channel() const { return grid() * grid(); }
  long seq_tokens() const { return tokens_per_channel() + (use_cls_per_channel ? 1 : 0); }
  bool layer_in_m(long l1based) const {
    for (long m : M)
      if (m == l1based) return true;
    return false;
  }

  void validate() const {
    if (C_max < 1 || H_img < 1 || P < 1 || D < 1 || L < 0 || H < 1 || num_classes < 1)
      throw std::invalid_argument("config: nonpositive dimension");
    if (H_img % P != 0)
      throw std::invalid_argument("config: H_img=" + std::to_string(H_img) + " not divisible by P=" +
                                  std::to_string(P));
    if (D % H != 0)
      throw std::invalid_argument("config: D=" + std::to_string(D) + " not divisible by H=" + std::to_string(H));
    for (long m : M)
      if (m < 1 || m > L)
        throw std::invalid_argument("config: M entry " + std::to_string(m) + " outside 1.." + std::to_string(L));
    if (block_kind != "dcvit" && block_kind != "mcvit")
      throw std::invalid_argument("config: block_kind '" + block_kind + "' (expected dcvit|mcvit)");
    pool_mode_from_string(g_sp);
    pool_mode_from_string(g_ch);
    if (g_sp == "cls" && !use_cls_per_channel)
      throw std::invalid_argument("config: g_sp=cls requires use_cls_per_channel");
    if (mlp_ratio <= 0) throw std::invalid_argument("config: mlp_ratio must be positive");
  }

  long mlp_hidden() const { return static_cast<long>(mlp_ratio * static_cast<double>(D)); }
};

template <class S>
struct LayerParams {
  DsaLayerParams<S> attn;  // layer_in_m=false for mcvit blocks
  Var<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Var<S> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  template <class Fn>
  void for_each_param(const std::string& prefix, bool norms, Fn&& fn) {
    attn.attn.for_each_param(prefix + ".attn", fn);
    if (attn.layer_in_m) fn(prefix + ".alpha", attn.alpha);
    fn(prefix + ".mlp.W1", mlp_w1);
    fn(prefix + ".mlp.b1", mlp_b1);
    fn(prefix + ".mlp.W2", mlp_w2);
    fn(prefix + ".mlp.b2", mlp_b2);
    if (norms) {
      fn(prefix + ".norm1.gamma", ln1_gamma);
      fn(prefix + ".norm1.beta", ln1_beta);
      fn(prefix + ".norm2.gamma", ln2_gamma);
      fn(prefix + ".norm2.beta", ln2_beta);
    }
  }
};

// Batch of multi-channel images with a per-sample channel-presence mask.
template <class S>
struct ChannelBatch {
  Tensor<S> images;                        // B x C x H x W
  std::vector<std::vector<bool>> present;  // B x C
  std::vector<long> labels;                // empty when unlabeled

  long batch_size() const { return images.extent(0); }
  long channels() const { return images.extent(1); }

  Tensor<S> image(long b) const {
    long c = images.extent(1), h = images.extent(2), w = images.extent(3);
    Tensor<S> out({c, h, w});
    const S* src = images.data() + b * c * h * w;
    std::copy(src, src + c * h * w, out.data());
    return out;
  }

  void validate() const {
    if (images.ndim() != 4) throw std::invalid_argument("batch: images must be [B,C,H,W]");
    if (static_cast<long>(present.size()) != batch_size())
      throw std::invalid_argument("batch: mask rows " + std::to_string(present.size()) + " vs B=" +
                                  std::to_string(batch_size()));
    for (const auto& row : present) {
      if (static_cast<long>(row.size()) != channels())
        throw std::invalid_argument("batch: mask width mismatch");
      bool any = false;
      for (bool b : row) any = any || b;
      if (!any) throw std::invalid_argument("batch: sample with no present channel");
    }
  }
};

// Complete DC-ViT / MC-ViT parameter set.
template <class S>
struct DcVitModel {
  ModelConfig config;
  Var<S> patch_w, patch_b;
  Var<S> pos_embed;            // N' x D (includes the cls position when enabled)
  Var<S> channel_embed;        // C_max x D, defined iff use_channel_embed
  Var<S> cls_embed;            // 1 x D, defined iff use_cls_per_channel
  std::vector<LayerParams<S>> layers;
  AggregationConfig<S> agg;
  Var<S> final_gamma, final_beta;  // defined iff use_norms
  Var<S> head_w, head_b;

  static DcVitModel init(const ModelConfig& cfg, uint64_t seed, bool trainable = true) {
    cfg.validate();
    DcVitModel m;
    m.config = cfg;
    RandomStream rng(seed);
    const long n = cfg.seq_tokens();
    const long d = cfg.D;
    auto tn = [&](std::vector<long> shape) { return Var<S>(rng.trunc_normal_tensor<S>(shape, 0.02), trainable); };
    auto zeros = [&](std::vector<long> shape) { return Var<S>(Tensor<S>::zeros(shape), trainable); };
    auto ones = [&](std::vector<long> shape) { return Var<S>(Tensor<S>::ones(shape), trainable); };

    m.patch_w = tn({cfg.P * cfg.P, d});
    m.patch_b = zeros({d});
    m.pos_embed = tn({n, d});
    if (cfg.use_channel_embed) m.channel_embed = tn({cfg.C_max, d});
    if (cfg.use_cls_per_channel) m.cls_embed = tn({1, d});

    m.layers.resize(static_cast<size_t>(cfg.L));
    for (long l = 0; l < cfg.L; ++l) {
      LayerParams<S>& lp = m.layers[static_cast<size_t>(l)];
      bool in_m = cfg.block_kind == "dcvit" && cfg.layer_in_m(l + 1);
      lp.attn = DsaLayerParams<S>::init(d, cfg.H, in_m, cfg.alpha_init, rng, trainable);
      lp.mlp_w1 = tn({d, cfg.mlp_hidden()});
      lp.mlp_b1 = zeros({cfg.mlp_hidden()});
      lp.mlp_w2 = tn({cfg.mlp_hidden(), d});
      lp.mlp_b2 = zeros({d});
      if (cfg.use_norms) {
        lp.ln1_gamma = ones({d});
        lp.ln1_beta = zeros({d});
        lp.ln2_gamma = ones({d});
        lp.ln2_beta = zeros({d});
      }
    }

    m.agg.g_sp = PoolParams<S>::init(pool_mode_from_string(cfg.g_sp), d, rng, trainable);
    m.agg.g_ch = PoolParams<S>::init(pool_mode_from_string(cfg.g_ch), d, rng, trainable);
    if (cfg.use_norms) {
      m.final_gamma = ones({d});
      m.final_beta = zeros({d});
    }
    m.head_w = tn({d, cfg.num_classes});
    m.head_b = zeros({cfg.num_classes});
    return m;
  }

  template <class Fn>
  void for_each_param(Fn&& fn) {
    fn("patch_W", patch_w);
    fn("patch_b", patch_b);
    fn("pos_embed", pos_embed);
    if (config.use_channel_embed) fn("channel_embed", channel_embed);
    if (config.use_cls_per_channel) fn("cls_embed", cls_embed);
    for (size_t l = 0; l < layers.size(); ++l)
      layers[l].for_each_param("layers." + std::to_string(l), config.use_norms, fn);
    agg.g_sp.for_each_param("pool_sp", fn);
    agg.g_ch.for_each_param("pool_ch", fn);
    if (config.use_norms) {
      fn("final_norm.gamma", final_gamma);
      fn("final_norm.beta", final_beta);
    }
    fn("head.W", head_w);
    fn("head.b", head_b);
  }

  long param_count() {
    long n = 0;
    for_each_param([&](const std::string&, Var<S>& v) { n += v.value().numel(); });
    return n;
  }

  void zero_grad() {
    for_each_param([](const std::string&, Var<S>& v) { v.zero_grad(); });
  }
};

// Cuts one channel into N non-overlapping P x P patches in row-major order,
// each flattened row-major. image is [C,H,W]; returns the N x P^2 matrix for
// channel c.
template <class S>
Tensor<S> patchify_channel(const Tensor<S>& image, long c, long patch) {
  long h = image.extent(1), w = image.extent(2);
  if (h % patch != 0 || w % patch != 0)
    throw std::invalid_argument("patchify: side " + std::to_string(h) + "x" + std::to_string(w) +
                                " not divisible by P=" + std::to_string(patch));
  long gh = h / patch, gw = w / patch;
  Tensor<S> out({gh * gw, patch * patch});
  const S* base = image.data() + c * h * w;
  for (long pr = 0; pr < gh; ++pr)
    for (long pc = 0; pc < gw; ++pc)
      for (long i = 0; i < patch; ++i)
        for (long j = 0; j < patch; ++j)
          out.at2(pr * gw + pc, i * patch + j) = base[(pr * patch + i) * w + pc * patch + j];
  return out;
}

// Shared patch embedding applied independently to each channel.
template <class S>
Var<S> patch_embed_channel(GradTape<S>& tape, DcVitModel<S>& model, const Tensor<S>& image, long c) {
  Tensor<S> patches = patchify_channel(image, c, model.config.P);
  return linear(tape, Var<S>(patches), model.patch_w, model.patch_b);
}

template <class S>
Tensor<S> patch_embed(const Tensor<S>& image, DcVitModel<S>& model) {
  if (image.ndim() != 3) throw std::invalid_argument("patch_embed: expected [C,H,W]");
  GradTape<S> tape(false);
  long c = image.extent(0);
  std::vector<Var<S>> per_channel;
  for (long i = 0; i < c; ++i) per_channel.push_back(patch_embed_channel(tape, model, image, i));
  return concat_rows(tape, per_channel).value().reshaped({c, model.config.tokens_per_channel(), model.config.D});
}

// Adds positional (and optional channel) embeddings; prepends the shared cls
// token per channel when enabled. tokens is (C*N) x D; returns (C*N') x D.
template <class S>
Var<S> add_embeddings_seq(GradTape<S>& tape, DcVitModel<S>& model, const Var<S>& tokens,
                          const std::vector<long>& channel_ids) {
  const ModelConfig& cfg = model.config;
  const long c = static_cast<long>(channel_ids.size());
  const long n = cfg.tokens_per_channel();
  if (tokens.value().rows() != c * n)
    throw std::invalid_argument("add_embeddings: tokens " + shape_str(tokens.value().shape()) + " vs C*N=" +
                                std::to_string(c * n));
  for (long id : channel_ids)
    if (id < 0 || id >= cfg.C_max)
      throw std::invalid_argument("add_embeddings: channel id " + std::to_string(id) + " out of range C_max=" +
                                  std::to_string(cfg.C_max));

  // data-token positions; with cls enabled pos_embed row 0 is the cls slot
  const long pos_off = cfg.use_cls_per_channel ? 1 : 0;
  std::vector<long> pos_idx(static_cast<size_t>(c * n));
  for (long i = 0; i < c; ++i)
    for (long j = 0; j < n; ++j) pos_idx[static_cast<size_t>(i * n + j)] = pos_off + j;
  Var<S> with_pos = add(tape, tokens, gather_rows(tape, model.pos_embed, std::move(pos_idx)));

  if (cfg.use_channel_embed) {
    std::vector<long> ch_idx(static_cast<size_t>(c * n));
    for (long i = 0; i < c; ++i)
      for (long j = 0; j < n; ++j) ch_idx[static_cast<size_t>(i * n + j)] = channel_ids[static_cast<size_t>(i)];
    with_pos = add(tape, with_pos, gather_rows(tape, model.channel_embed, std::move(ch_idx)));
  }

  if (!cfg.use_cls_per_channel) return with_pos;

  Var<S> cls_row = add(tape, model.cls_embed, slice_rows(tape, model.pos_embed, 0, 1));
  std::vector<Var<S>> parts;
  parts.reserve(static_cast<size_t>(2 * c));
  for (long i = 0; i < c; ++i) {
    parts.push_back(cls_row);
    parts.push_back(slice_rows(tape, with_pos, i * n, n));
  }
  return concat_rows(tape, parts);
}

template <class S>
Tensor<S> add_embeddings(const Tensor<S>& tokens, DcVitModel<S>& model, const std::vector<long>& channel_ids) {
  if (tokens.ndim() != 3) throw std::invalid_argument("add_embeddings: expected [C,N,D]");
  GradTape<S> tape(false);
  Var<S> v(tokens.reshaped({tokens.extent(0) * tokens.extent(1), tokens.extent(2)}));
  Var<S> out = add_embeddings_seq(tape, model, v, channel_ids);
  return out.value().reshaped({tokens.extent(0), model.config.seq_tokens(), model.config.D});
}

template <class S>
Var<S> mlp_forward(GradTape<S>& tape, const LayerParams<S>& lp, const Var<S>& x) {
  return linear(tape, gelu(tape, linear(tape, x, lp.mlp_w1, lp.mlp_b1)), lp.mlp_w2, lp.mlp_b2);
}

// One encoder block. The default follows the literal
// x_{l+1} = x_l + MLP(LN2(x_l + ATTN(LN1(x_l)))) update; canonical_residual
// re-bases the final residual on the attention output.
template <class S>
Var<S> encoder_block(GradTape<S>& tape, const ModelConfig& cfg, LayerParams<S>& lp, const Var<S>& x,
                     long channels, long tokens, const std::vector<bool>& present) {
  Var<S> a = cfg.use_norms ? layer_norm(tape, x, lp.ln1_gamma, lp.ln1_beta, S(1e-6)) : x;
  Var<S> attn_out;
  if (cfg.block_kind == "mcvit")
    attn_out = msa_joint(tape, a, lp.attn.attn);
  else
    attn_out = dsa(tape, a, channels, tokens, lp.attn, present);
  Var<S> s = add(tape, x, attn_out);
  Var<S> m = cfg.use_norms ? layer_norm(tape, s, lp.ln2_gamma, lp.ln2_beta, S(1e-6)) : s;
  Var<S> mlp_out = mlp_forward(tape, lp, m);
  return add(tape, cfg.canonical_residual ? s : x, mlp_out);
}

template <class S>
Tensor<S> dcvit_block(const Tensor<S>& x, const ModelConfig& cfg, LayerParams<S>& lp,
                      const std::vector<bool>& present) {
  if (x.ndim() != 3) throw std::invalid_argument("dcvit_block: expected [C,N,D]");
  GradTape<S> tape(false);
  Var<S> v(x.reshaped({x.extent(0) * x.extent(1), x.extent(2)}));
  return encoder_block(tape, cfg, lp, v, x.extent(0), x.extent(1), present).value().reshaped(x.shape());
}

template <class S>
Tensor<S> mcvit_block(const Tensor<S>& x, const ModelConfig& cfg, LayerParams<S>& lp) {
  if (x.ndim() != 2) throw std::invalid_argument("mcvit_block: expected [CN,D]");
  GradTape<S> tape(false);
  Var<S> v(x);
  return encoder_block(tape, cfg, lp, v, 1, x.extent(0), {true}).value();
}

// Embeds and encodes the present channels of one sample; absent channels are
// skipped entirely (their outputs are zero by construction).
template <class S>
Var<S> encode_sample_live(GradTape<S>& tape, DcVitModel<S>& model, const Tensor<S>& image,
                          const std::vector<long>& live) {
  const ModelConfig& cfg = model.config;
  std::vector<Var<S>> tokens;
  tokens.reserve(live.size());
  for (long c : live) tokens.push_back(patch_embed_channel(tape, model, image, c));
  Var<S> x = add_embeddings_seq(tape, model, concat_rows(tape, tokens), live);

  const long cp = static_cast<long>(live.size());
  const long nseq = cfg.seq_tokens();
  std::vector<bool> all_present(static_cast<size_t>(cp), true);
  for (long l = 0; l < cfg.L; ++l)
    x = encoder_block(tape, cfg, model.layers[static_cast<size_t>(l)], x, cp, nseq, all_present);
  return x;
}

template <class S>
std::vector<long> live_channels(const std::vector<bool>& present) {
  std::vector<long> live;
  for (size_t c = 0; c < present.size(); ++c)
    if (present[c]) live.push_back(static_cast<long>(c));
  if (live.empty()) throw std::invalid_argument("encode: sample with no present channel");
  return live;
}

// Full-batch encoder output, [B, C, N', D]; absent channels carried as zeros.
template <class S>
Tensor<S> encode(const ChannelBatch<S>& batch, DcVitModel<S>& model) {
  batch.validate();
  const ModelConfig& cfg = model.config;
  if (batch.channels() > cfg.C_max)
    throw std::invalid_argument("encode: batch has C=" + std::to_string(batch.channels()) + " > C_max=" +
                                std::to_string(cfg.C_max));
  const long b = batch.batch_size(), c = batch.channels(), nseq = cfg.seq_tokens(), d = cfg.D;
  Tensor<S> out({b, c, nseq, d});
  for (long s = 0; s < b; ++s) {
    GradTape<S> tape(false);
    std::vector<long> live = live_channels<S>(batch.present[static_cast<size_t>(s)]);
    Tensor<S> x = encode_sample_live(tape, model, batch.image(s), live).value();
    for (size_t i = 0; i < live.size(); ++i) {
      const S* src = x.data() + static_cast<long>(i) * nseq * d;
      S* dst = out.data() + ((s * c + live[i]) * nseq) * d;
      std::copy(src, src + nseq * d, dst);
    }
  }
  return out;
}

// encode -> final norm -> DAG -> linear head, one logits row per sample.
template <class S>
Var<S> forward_logits_var(GradTape<S>& tape, DcVitModel<S>& model, const ChannelBatch<S>& batch) {
  batch.validate();
  const ModelConfig& cfg = model.config;
  if (batch.channels() > cfg.C_max)
    throw std::invalid_argument("forward: batch has C=" + std::to_string(batch.channels()) + " > C_max=" +
                                std::to_string(cfg.C_max));
  std::vector<Var<S>> rows;
  rows.reserve(static_cast<size_t>(batch.batch_size()));
  for (long s = 0; s < batch.batch_size(); ++s) {
    std::vector<long> live = live_channels<S>(batch.present[static_cast<size_t>(s)]);
    Var<S> x = encode_sample_live(tape, model, batch.image(s), live);
    if (cfg.use_norms) x = layer_norm(tape, x, model.final_gamma, model.final_beta, S(1e-6));
    std::vector<bool> all_present(live.size(), true);
    Var<S> z;
    if (model.agg.joint)
      z = pool_joint(tape, x, static_cast<long>(live.size()), cfg.seq_tokens(), model.agg.g_sp, all_present);
    else
      z = dag(tape, x, static_cast<long>(live.size()), cfg.seq_tokens(), model.agg, all_present);
    rows.push_back(linear(tape, z, model.head_w, model.head_b));
  }
  return concat_rows(tape, rows);
}

template <class S>
Tensor<S> forward_logits(const ChannelBatch<S>& batch, DcVitModel<S>& model) {
  GradTape<S> tape(false);
  return forward_logits_var(tape, model, batch).value();
}

}  // namespace dcvit
