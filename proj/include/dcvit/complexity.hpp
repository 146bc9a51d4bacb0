#pragma once

#include <chrono>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "dcvit/encoder.hpp"

namespace dcvit {

// FLOPs convention: a multiply counts 1 and an add counts 1 (matmul m,k,n =
// 2mkn); softmax costs 5 per matrix element (max-compare, subtract, exp,
// sum-add, divide). Only the attention core is counted: q k^T, softmax, and
// the attention-value product. Projections and MLPs are identical between the
// two modes and excluded.

inline long long attention_core_flops(long long seq, long long dim) {
  return 4 * seq * seq * dim + 5 * seq * seq;
}

inline long long flops_msa(long c, long n, long d, long l) {
  if (c < 1 || n < 1 || d < 1 || l < 1) throw std::invalid_argument("flops_msa: nonpositive argument");
  return static_cast<long long>(l) * attention_core_flops(static_cast<long long>(c) * n, d);
}

inline long long flops_dsa(long c, long n, long d, long l, long m) {
  if (c < 1 || n < 1 || d < 1 || l < 1 || m < 0)
    throw std::invalid_argument("flops_dsa: nonpositive argument");
  if (m > l)
    throw std::invalid_argument("flops_dsa: m=" + std::to_string(m) + " exceeds L=" + std::to_string(l));
  long long spatial = static_cast<long long>(l) * c * attention_core_flops(n, d);
  long long channel = static_cast<long long>(m) * n * attention_core_flops(c, d);
  return spatial + channel;
}

struct OpCounter {
  long long flops = 0;
};

// Reference single-head attention computed with scalar loops, each counted
// operation bumping the counter. Used as the oracle the closed-form formulas
// must reproduce.
template <class S>
Tensor<S> counted_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, S scale,
                            OpCounter& counter) {
  const long seq = q.extent(0), dim = q.extent(1);
  Tensor<S> scores({seq, seq});
  for (long i = 0; i < seq; ++i)
    for (long j = 0; j < seq; ++j) {
      S acc = 0;
      for (long t = 0; t < dim; ++t) {
        acc += q.at2(i, t) * k.at2(j, t);
        counter.flops += 2;
      }
      scores.at2(i, j) = acc / scale;  // scale division is outside the counted scope
    }

  for (long i = 0; i < seq; ++i) {
    S mx = scores.at2(i, 0);
    for (long j = 0; j < seq; ++j) mx = std::max(mx, scores.at2(i, j));
    S denom = 0;
    for (long j = 0; j < seq; ++j) {
      scores.at2(i, j) = std::exp(scores.at2(i, j) - mx);
      denom += scores.at2(i, j);
    }
    for (long j = 0; j < seq; ++j) {
      scores.at2(i, j) /= denom;
      counter.flops += 5;
    }
  }

  Tensor<S> out({seq, dim});
  for (long i = 0; i < seq; ++i)
    for (long t = 0; t < dim; ++t) {
      S acc = 0;
      for (long j = 0; j < seq; ++j) {
        acc += scores.at2(i, j) * v.at2(j, t);
        counter.flops += 2;
      }
      out.at2(i, t) = acc;
    }
  return out;
}

// Counted FLOPs of one MSA layer over the joint CN sequence.
inline long long counted_msa_layer(long c, long n, long d, uint64_t seed = 1) {
  RandomStream rng(seed);
  Tensor<double> q = rng.normal_tensor<double>({c * n, d});
  Tensor<double> k = rng.normal_tensor<double>({c * n, d});
  Tensor<double> v = rng.normal_tensor<double>({c * n, d});
  OpCounter counter;
  counted_attention(q, k, v, std::sqrt(static_cast<double>(d)), counter);
  return counter.flops;
}

// Counted FLOPs of one DSA layer: C spatial problems plus, when the layer is
// in M, N channel problems.
inline long long counted_dsa_layer(long c, long n, long d, bool in_m, uint64_t seed = 1) {
  RandomStream rng(seed);
  OpCounter counter;
  for (long i = 0; i < c; ++i) {
    Tensor<double> q = rng.normal_tensor<double>({n, d});
    Tensor<double> k = rng.normal_tensor<double>({n, d});
    Tensor<double> v = rng.normal_tensor<double>({n, d});
    counted_attention(q, k, v, std::sqrt(static_cast<double>(d)), counter);
  }
  if (in_m)
    for (long i = 0; i < n; ++i) {
      Tensor<double> q = rng.normal_tensor<double>({c, d});
      Tensor<double> k = rng.normal_tensor<double>({c, d});
      Tensor<double> v = rng.normal_tensor<double>({c, d});
      counted_attention(q, k, v, std::sqrt(static_cast<double>(d)), counter);
    }
  return counter.flops;
}

// Least-squares slope of ln(value) against ln(C).
inline double loglog_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw std::invalid_argument("loglog_slope: need at least two points");
  double sx = 0, sy = 0;
  for (const auto& [c, v] : points) {
    if (c <= 0 || v <= 0) throw std::invalid_argument("loglog_slope: nonpositive point");
    sx += std::log(c);
    sy += std::log(v);
  }
  const double mx = sx / static_cast<double>(points.size());
  const double my = sy / static_cast<double>(points.size());
  double num = 0, den = 0;
  for (const auto& [c, v] : points) {
    double dx = std::log(c) - mx;
    num += dx * (std::log(v) - my);
    den += dx * dx;
  }
  if (den == 0) throw std::invalid_argument("loglog_slope: all C values equal");
  return num / den;
}

// One benchmark row of the channel-count sweep.
struct BenchRecord {
  std::string mode;  // dsa | msa
  long C = 0, N = 0, D = 0, L = 0, m = 0;
  long long analytic_flops = 0;
  double wall_time_s = 0;
  long repeats = 0;
};

// Model configuration for one benchmark point; P=1 so N is the token count
// directly (N must be a perfect square).
inline ModelConfig bench_config(long c, long n, long d, long l, const std::vector<long>& m_set,
                                bool msa_mode, long heads = 0) {
  long side = static_cast<long>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n)
    throw std::invalid_argument("bench: N=" + std::to_string(n) + " is not a perfect square");
  ModelConfig cfg;
  cfg.C_max = c;
  cfg.H_img = side;
  cfg.P = 1;
  cfg.D = d;
  cfg.L = l;
  if (heads > 0)
    cfg.H = heads;
  else
    cfg.H = (d % 6 == 0) ? 6 : (d % 4 == 0) ? 4 : (d % 2 == 0) ? 2 : 1;
  cfg.M = m_set;
  cfg.block_kind = msa_mode ? "mcvit" : "dcvit";
  cfg.use_channel_embed = true;
  cfg.use_cls_per_channel = false;
  cfg.g_sp = "mean";
  cfg.g_ch = "mean";
  cfg.num_classes = 2;
  cfg.validate();
  return cfg;
}

// Median forward wall time over `repeats` runs on one random B=1 batch; an
// initial warm-up run is excluded.
template <class S>
BenchRecord bench_forward(const ModelConfig& cfg, long repeats, uint64_t seed) {
  if (repeats < 3) throw std::invalid_argument("bench: repeats must be >= 3");
  cfg.validate();
  DcVitModel<S> model = DcVitModel<S>::init(cfg, seed, false);

  RandomStream rng(seed + 1);
  ChannelBatch<S> batch;
  batch.images = rng.normal_tensor<S>({1, cfg.C_max, cfg.H_img, cfg.H_img});
  batch.present = {std::vector<bool>(static_cast<size_t>(cfg.C_max), true)};

  forward_logits(batch, model);  // warm-up
  std::vector<double> times;
  times.reserve(static_cast<size_t>(repeats));
  for (long r = 0; r < repeats; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    forward_logits(batch, model);
    auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  double median = times[times.size() / 2];
  if (times.size() % 2 == 0) median = 0.5 * (median + times[times.size() / 2 - 1]);

  BenchRecord rec;
  const bool msa = cfg.block_kind == "mcvit";
  rec.mode = msa ? "msa" : "dsa";
  rec.C = cfg.C_max;
  rec.N = cfg.tokens_per_channel();
  rec.D = cfg.D;
  rec.L = cfg.L;
  rec.m = msa ? 0 : static_cast<long>(cfg.M.size());
  rec.analytic_flops = msa ? flops_msa(rec.C, rec.N, rec.D, rec.L)
                           : flops_dsa(rec.C, rec.N, rec.D, rec.L, rec.m);
  rec.wall_time_s = median;
  rec.repeats = repeats;
  return rec;
}

// RFC 4180: quote fields containing commas, quotes or newlines.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records) {
  os << "mode,C,N,D,L,m,analytic_flops,wall_time_s,repeats\n";
  for (const BenchRecord& r : records) {
    std::ostringstream time;
    time.precision(9);
    time << r.wall_time_s;
    os << csv_field(r.mode) << ',' << r.C << ',' << r.N << ',' << r.D << ',' << r.L << ',' << r.m << ','
       << r.analytic_flops << ',' << time.str() << ',' << r.repeats << '\n';
  }
}

}  // namespace dcvit
