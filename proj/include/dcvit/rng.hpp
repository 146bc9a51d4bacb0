#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dcvit/tensor.hpp"

namespace dcvit {

// Seeded random stream. Gaussian draws use Box-Muller on mt19937_64 output so
// results are bit-identical across standard libraries (std::normal_distribution
// is implementation-defined).
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Normal(0, std) resampled until within 2 std, the usual ViT init.
  double trunc_normal(double std_dev) {
    double v = normal();
    while (std::abs(v) > 2.0) v = normal();
    return v * std_dev;
  }

  long index(long n) { return static_cast<long>(gen_() % static_cast<uint64_t>(n)); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (long i = static_cast<long>(v.size()) - 1; i > 0; --i)
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(index(i + 1))]);
  }

  template <class S>
  Tensor<S> normal_tensor(std::vector<long> shape, double std_dev = 1.0) {
    Tensor<S> t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(normal() * std_dev);
    return t;
  }

  template <class S>
  Tensor<S> trunc_normal_tensor(std::vector<long> shape, double std_dev) {
    Tensor<S> t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(trunc_normal(std_dev));
    return t;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dcvit
