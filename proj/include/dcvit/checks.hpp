#pragma once

#include <map>
#include <string>
#include <vector>

#include "dcvit/complexity.hpp"
#include "dcvit/encoder.hpp"
#include "dcvit/training.hpp"

namespace dcvit {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace checks {

inline ModelConfig check_config(double alpha_init) {
  ModelConfig cfg;
  cfg.C_max = 3;
  cfg.H_img = 4;
  cfg.P = 2;  // N = 4
  cfg.D = 8;
  cfg.L = 2;
  cfg.H = 2;
  cfg.M = {2};
  cfg.alpha_init = alpha_init;
  cfg.mlp_ratio = 2.0;
  cfg.g_sp = "mean";
  cfg.g_ch = "max";
  cfg.num_classes = 2;
  return cfg;
}

inline ChannelBatch<double> check_batch(const ModelConfig& cfg, long b, long c, uint64_t seed) {
  RandomStream rng(seed);
  ChannelBatch<double> batch;
  batch.images = rng.normal_tensor<double>({b, c, cfg.H_img, cfg.H_img});
  batch.present.assign(static_cast<size_t>(b), std::vector<bool>(static_cast<size_t>(c), true));
  return batch;
}

// dcvit and mcvit logits coincide at C=1 when alpha is zero.
inline CheckResult c1_equivalence(uint64_t seed) {
  ModelConfig cfg = check_config(0.0);
  cfg.C_max = 1;
  DcVitModel<double> md = DcVitModel<double>::init(cfg, seed);
  ModelConfig mc = cfg;
  mc.block_kind = "mcvit";
  DcVitModel<double> mm = DcVitModel<double>::init(mc, seed + 1);
  std::map<std::string, Tensor<double>> bank;
  md.for_each_param([&](const std::string& n, Var<double>& v) { bank.emplace(n, v.value()); });
  mm.for_each_param([&](const std::string& n, Var<double>& v) {
    auto it = bank.find(n);
    if (it != bank.end()) v.set_value(it->second);
  });
  ChannelBatch<double> batch = check_batch(cfg, 2, 1, seed + 2);
  double diff = max_abs_diff(forward_logits(batch, md), forward_logits(batch, mm));
  return {"C=1 equivalence: dcvit logits == mcvit logits (alpha=0)", diff <= 1e-8,
          "max diff " + std::to_string(diff)};
}

// With alpha = 0, DSA equals the spatial-only branch bit for bit.
inline CheckResult alpha_zero_collapse(uint64_t seed) {
  RandomStream rng(seed);
  DsaLayerParams<double> on = DsaLayerParams<double>::init(8, 2, true, 0.0, rng, false);
  DsaLayerParams<double> off;
  off.attn = on.attn;
  off.layer_in_m = false;
  Tensor<double> x = rng.normal_tensor<double>({3, 4, 8});
  std::vector<bool> present(3, true);
  double diff = max_abs_diff(dsa(x, on, present), dsa(x, off, present));
  return {"alpha=0 collapse: DSA == spatial-only branch", diff <= 1e-12, "max diff " + std::to_string(diff)};
}

// Channel permutation commutes with DSA and leaves pooled logits unchanged.
inline CheckResult permutation_equivariance(uint64_t seed) {
  RandomStream rng(seed);
  DsaLayerParams<double> p = DsaLayerParams<double>::init(8, 2, true, 0.3, rng, false);
  Tensor<double> x = rng.normal_tensor<double>({3, 4, 8});
  std::vector<long> perm{2, 0, 1};
  Tensor<double> xp({3, 4, 8});
  for (long c = 0; c < 3; ++c)
    for (long i = 0; i < 32; ++i) xp[c * 32 + i] = x[perm[static_cast<size_t>(c)] * 32 + i];
  std::vector<bool> present(3, true);
  Tensor<double> y = dsa(x, p, present);
  Tensor<double> yp = dsa(xp, p, present);
  double worst = 0;
  for (long c = 0; c < 3; ++c)
    for (long i = 0; i < 32; ++i)
      worst = std::max(worst, std::abs(yp[c * 32 + i] - y[perm[static_cast<size_t>(c)] * 32 + i]));

  ModelConfig cfg = check_config(0.3);
  cfg.use_channel_embed = false;
  DcVitModel<double> model = DcVitModel<double>::init(cfg, seed + 1);
  ChannelBatch<double> batch = check_batch(cfg, 1, 3, seed + 2);
  ChannelBatch<double> permuted = batch;
  for (long c = 0; c < 3; ++c)
    for (long i = 0; i < 16; ++i)
      permuted.images[c * 16 + i] = batch.images[perm[static_cast<size_t>(c)] * 16 + i];
  double logit_diff = max_abs_diff(forward_logits(batch, model), forward_logits(permuted, model));

  bool pass = worst <= 1e-10 && logit_diff <= 1e-8;
  return {"channel-permutation equivariance: dsa and logits", pass,
          "dsa diff " + std::to_string(worst) + ", logits diff " + std::to_string(logit_diff)};
}

// dag(mean,mean) == pool_joint(mean) and dag(max,max) == pool_joint(max).
inline CheckResult dag_identities(uint64_t seed) {
  RandomStream rng(seed);
  Tensor<double> x = rng.normal_tensor<double>({3, 4, 8});
  std::vector<bool> present(3, true);
  AggregationConfig<double> mean_cfg, max_cfg;
  mean_cfg.g_sp.mode = PoolMode::Mean;
  mean_cfg.g_ch.mode = PoolMode::Mean;
  max_cfg.g_sp.mode = PoolMode::Max;
  max_cfg.g_ch.mode = PoolMode::Max;
  PoolParams<double> mean_pool, max_pool;
  mean_pool.mode = PoolMode::Mean;
  max_pool.mode = PoolMode::Max;
  double d1 = max_abs_diff(dag(x, mean_cfg, present), pool_joint(x, mean_pool, present));
  double d2 = max_abs_diff(dag(x, max_cfg, present), pool_joint(x, max_pool, present));
  bool pass = d1 <= 1e-12 && d2 <= 1e-12;
  return {"DAG identities: dag(mean,mean)==pool_joint(mean), dag(max,max)==pool_joint(max)", pass,
          "mean diff " + std::to_string(d1) + ", max diff " + std::to_string(d2)};
}

// Closed-form FLOPs match the instrumented scalar-operation counter.
inline CheckResult flops_counter_agreement(uint64_t) {
  for (long c = 1; c <= 3; ++c)
    for (long n = 1; n <= 4; ++n)
      for (long d : {2L, 4L}) {
        if (counted_msa_layer(c, n, d) != flops_msa(c, n, d, 1))
          return {"FLOPs counter agreement over (C,N,D) in {1..3}x{1..4}x{2,4}", false,
                  "msa mismatch at C=" + std::to_string(c) + ",N=" + std::to_string(n) + ",D=" + std::to_string(d)};
        if (counted_dsa_layer(c, n, d, true) != flops_dsa(c, n, d, 1, 1))
          return {"FLOPs counter agreement over (C,N,D) in {1..3}x{1..4}x{2,4}", false,
                  "dsa mismatch at C=" + std::to_string(c) + ",N=" + std::to_string(n) + ",D=" + std::to_string(d)};
      }
  return {"FLOPs counter agreement over (C,N,D) in {1..3}x{1..4}x{2,4}", true, "exact"};
}

}  // namespace checks

inline std::vector<CheckResult> run_invariant_checks(uint64_t seed) {
  return {checks::c1_equivalence(seed), checks::alpha_zero_collapse(seed + 100),
          checks::permutation_equivariance(seed + 200), checks::dag_identities(seed + 300),
          checks::flops_counter_agreement(seed + 400)};
}

}  // namespace dcvit
