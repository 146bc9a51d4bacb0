#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcvit/encoder.hpp"
#include "dcvit/rng.hpp"

namespace dcvit {

// Synthetic multi-channel task. Motifs are 2-pixel-wide bars of amplitude 1.0
// at seeded offsets: motif id encodes orientation (id % 2, horizontal or
// vertical) and, for more than two classes, the offset bucket (id / 2).
struct SynthTask {
  std::string kind = "single_channel";  // single_channel | xor_channels
  long C = 3;
  long H_img = 16;
  long num_classes = 2;
  std::vector<long> informative_channels = {0};
  double noise_std = 0.25;
  uint64_t seed = 0;

  long buckets() const { return (num_classes + 1) / 2; }

  void validate() const {
    if (kind != "single_channel" && kind != "xor_channels")
      throw std::invalid_argument("task: kind '" + kind + "' (expected single_channel|xor_channels)");
    if (C < 1 || H_img < 3) throw std::invalid_argument("task: need C >= 1 and H_img >= 3");
    if (noise_std < 0) throw std::invalid_argument("task: negative noise_std");
    const size_t want = kind == "single_channel" ? 1 : 2;
    if (informative_channels.size() != want)
      throw std::invalid_argument("task: " + kind + " needs " + std::to_string(want) +
                                  " informative channel(s), got " + std::to_string(informative_channels.size()));
    for (long c : informative_channels)
      if (c < 0 || c >= C)
        throw std::invalid_argument("task: informative channel " + std::to_string(c) + " outside 0.." +
                                    std::to_string(C - 1));
    if (kind == "xor_channels" && num_classes != 2)
      throw std::invalid_argument("task: xor_channels requires num_classes=2, got " +
                                  std::to_string(num_classes));
    if (num_classes < 2) throw std::invalid_argument("task: need at least two classes");
    if (buckets() > H_img - 1)
      throw std::invalid_argument("task: num_classes=" + std::to_string(num_classes) +
                                  " needs more offset buckets than H_img=" + std::to_string(H_img) + " allows");
  }
};

namespace detail {

// Bar offset range is [0, H-2]; bucket b covers an equal share of it.
inline std::pair<long, long> bucket_range(long bucket, long n_buckets, long h) {
  long span = h - 1;
  long lo = bucket * span / n_buckets;
  long hi = (bucket + 1) * span / n_buckets;
  return {lo, std::max(lo + 1, hi)};  // at least one offset per bucket
}

template <class S>
void stamp_bar(S* channel, long h, long motif, long offset) {
  const bool vertical = (motif % 2) != 0;
  for (long t = 0; t < 2; ++t)
    for (long i = 0; i < h; ++i) {
      if (vertical)
        channel[i * h + offset + t] += S(1);
      else
        channel[(offset + t) * h + i] += S(1);
    }
}

}  // namespace detail

// Renders the noiseless template of a motif at a given offset; used by tests
// as the nearest-motif decoder.
template <class S>
Tensor<S> motif_template(const SynthTask& task, long motif, long offset) {
  Tensor<S> img({task.H_img, task.H_img});
  detail::stamp_bar(img.data(), task.H_img, motif, offset);
  return img;
}

// Deterministic dataset draw. Every non-informative channel is pure noise;
// informative channels hold one seeded motif each plus noise. Labels:
// single_channel -> the motif id, xor_channels -> XOR of the two motif bits.
// motifs_out (when given) receives each sample's motif id per informative
// channel, in informative_channels order.
template <class S>
ChannelBatch<S> gen_dataset(const SynthTask& task, long n_samples,
                            std::vector<std::vector<long>>* motifs_out = nullptr) {
  task.validate();
  if (n_samples < 1) throw std::invalid_argument("gen_dataset: n_samples must be >= 1");
  RandomStream rng(task.seed);
  const long h = task.H_img;

  ChannelBatch<S> batch;
  batch.images = Tensor<S>({n_samples, task.C, h, h});
  batch.present.assign(static_cast<size_t>(n_samples),
                       std::vector<bool>(static_cast<size_t>(task.C), true));
  batch.labels.resize(static_cast<size_t>(n_samples));
  if (motifs_out) motifs_out->assign(static_cast<size_t>(n_samples), {});

  const long k = task.kind == "single_channel" ? task.num_classes : 2;
  for (long s = 0; s < n_samples; ++s) {
    S* img = batch.images.data() + s * task.C * h * h;
    for (long i = 0; i < task.C * h * h; ++i) img[i] = static_cast<S>(rng.normal() * task.noise_std);

    // xor_channels shares one bar offset across the informative channels so
    // tokens correspond 1-1 spatially; single_channel draws per-motif offsets
    std::vector<long> motifs;
    long shared_offset = -1;
    if (task.kind == "xor_channels") {
      auto [lo, hi] = detail::bucket_range(0, task.buckets(), h);
      shared_offset = lo + rng.index(hi - lo);
    }
    for (long ic : task.informative_channels) {
      long motif = rng.index(k);
      long offset = shared_offset;
      if (offset < 0) {
        auto [lo, hi] = detail::bucket_range(motif / 2, task.buckets(), h);
        offset = lo + rng.index(hi - lo);
      }
      detail::stamp_bar(img + ic * h * h, h, motif, offset);
      motifs.push_back(motif);
    }
    long label = task.kind == "single_channel" ? motifs[0] : (motifs[0] ^ motifs[1]);
    batch.labels[static_cast<size_t>(s)] = label;
    if (motifs_out) (*motifs_out)[static_cast<size_t>(s)] = std::move(motifs);
  }
  return batch;
}

template <class S>
ChannelBatch<S> subset(const ChannelBatch<S>& batch, const std::vector<long>& idx) {
  const long c = batch.images.extent(1), h = batch.images.extent(2), w = batch.images.extent(3);
  ChannelBatch<S> out;
  out.images = Tensor<S>({static_cast<long>(idx.size()), c, h, w});
  out.present.reserve(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const S* src = batch.images.data() + idx[i] * c * h * w;
    std::copy(src, src + c * h * w, out.images.data() + static_cast<long>(i) * c * h * w);
    out.present.push_back(batch.present[static_cast<size_t>(idx[i])]);
    if (!batch.labels.empty()) out.labels.push_back(batch.labels[static_cast<size_t>(idx[i])]);
  }
  return out;
}

template <class S>
struct SplitBatches {
  ChannelBatch<S> train, val, test;
};

// Seeded shuffle then contiguous split; floor sizes for val/test, remainder
// to train.
template <class S>
SplitBatches<S> split(const ChannelBatch<S>& batch, double f_train, double f_val, double f_test,
                      uint64_t seed) {
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");
  if (f_train < 0 || f_val < 0 || f_test < 0) throw std::invalid_argument("split: negative fraction");
  const long n = batch.batch_size();
  if (n < 1) throw std::invalid_argument("split: empty batch");

  std::vector<long> order(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  RandomStream rng(seed);
  rng.shuffle(order);

  const long n_val = static_cast<long>(f_val * static_cast<double>(n));
  const long n_test = static_cast<long>(f_test * static_cast<double>(n));
  const long n_train = n - n_val - n_test;
  if (n_train < 1) throw std::invalid_argument("split: empty train split");

  auto take = [&](long from, long count) {
    std::vector<long> idx(order.begin() + from, order.begin() + from + count);
    return subset(batch, idx);
  };
  SplitBatches<S> out;
  out.train = take(0, n_train);
  if (n_val > 0) out.val = take(n_train, n_val);
  if (n_test > 0) out.test = take(n_train + n_val, n_test);
  return out;
}

}  // namespace dcvit
