#include <doctest.h>

#include <cmath>

#include "dcvit/ops.hpp"
#include "dcvit/rng.hpp"
#include "test_util.hpp"

using dcvit::Tensor;

TEST_CASE("matmul identity and hand cases") {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> r = dcvit::matmul(Tensor<double>::identity(2), a);
  CHECK(dcvit::max_abs_diff(r, a) == 0.0);

  Tensor<double> row({1, 2}, {1, 2});
  Tensor<double> col({2, 1}, {3, 4});
  Tensor<double> p = dcvit::matmul(row, col);
  CHECK(p.numel() == 1);
  CHECK(p[0] == 11.0);
}

TEST_CASE("matmul matches triple-loop reference") {
  dcvit::RandomStream rng(11);
  Tensor<double> a = rng.normal_tensor<double>({5, 7});
  Tensor<double> b = rng.normal_tensor<double>({7, 3});
  CHECK(dcvit::max_abs_diff(dcvit::matmul(a, b), testutil::matmul_naive(a, b)) < 1e-12);
}

TEST_CASE("matmul shape errors name both shapes") {
  Tensor<double> a({2, 3}), b({4, 2});
  CHECK_THROWS_WITH_AS(dcvit::matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
  try {
    dcvit::matmul(a, b);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random triples") {
  dcvit::RandomStream rng(13);
  for (int round = 0; round < 5; ++round) {
    Tensor<double> a = rng.normal_tensor<double>({4, 6});
    Tensor<double> b = rng.normal_tensor<double>({6, 5});
    Tensor<double> c = rng.normal_tensor<double>({5, 3});
    Tensor<double> lhs = dcvit::matmul(dcvit::matmul(a, b), c);
    Tensor<double> rhs = dcvit::matmul(a, dcvit::matmul(b, c));
    CHECK(dcvit::max_abs_diff(lhs, rhs) < 1e-9);
  }
}

TEST_CASE("softmax_rows handles uniform, closed-form and huge logits") {
  Tensor<double> u({1, 3}, {0, 0, 0});
  Tensor<double> su = dcvit::softmax_rows(u);
  for (long i = 0; i < 3; ++i) CHECK(su[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor<double> x({1, 2}, {std::log(2.0), 0.0});
  Tensor<double> sx = dcvit::softmax_rows(x);
  CHECK(sx[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(sx[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor<double> big({1, 2}, {1000.0, 1000.0});
  Tensor<double> sb = dcvit::softmax_rows(big);
  CHECK(sb.all_finite());
  CHECK(sb[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax_rows rows sum to one up to 1e4 magnitudes") {
  dcvit::RandomStream rng(5);
  for (double mag : {1.0, 100.0, 1e4}) {
    Tensor<double> x = rng.normal_tensor<double>({6, 9}, mag);
    Tensor<double> s = dcvit::softmax_rows(x);
    for (long i = 0; i < s.rows(); ++i) {
      double sum = 0;
      double mn = 1;
      for (long j = 0; j < s.cols(); ++j) {
        sum += s.at2(i, j);
        mn = std::min(mn, s.at2(i, j));
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
      CHECK(mn >= 0.0);
    }
  }
  Tensor<double> bad({1, 2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(dcvit::softmax_rows(bad), std::runtime_error);
}

TEST_CASE("layer_norm edge and statistic cases") {
  Tensor<double> gamma = Tensor<double>::ones({4});
  Tensor<double> beta = Tensor<double>::zeros({4});

  Tensor<double> constant = Tensor<double>::full({1, 4}, 3.25);
  Tensor<double> z = dcvit::layer_norm(constant, gamma, beta, 1e-6);
  for (long i = 0; i < 4; ++i) CHECK(std::abs(z[i]) < 1e-9);

  Tensor<double> beta_b = Tensor<double>::full({4}, -1.5);
  Tensor<double> zb = dcvit::layer_norm(constant, Tensor<double>::zeros({4}), beta_b, 1e-6);
  for (long i = 0; i < 4; ++i) CHECK(zb[i] == -1.5);

  dcvit::RandomStream rng(3);
  Tensor<double> x = rng.normal_tensor<double>({1, 64}, 2.0);
  Tensor<double> y = dcvit::layer_norm(x, Tensor<double>::ones({64}), Tensor<double>::zeros({64}), 1e-6);
  double mean = y.mat().mean();
  double var = (y.mat().array() - mean).square().sum() / 64.0;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-4);

  CHECK_THROWS_AS(dcvit::layer_norm(x, gamma, beta, 1e-6), std::invalid_argument);
}

TEST_CASE("gelu exact-erf values") {
  Tensor<double> x({3}, {0.0, 20.0, -20.0});
  Tensor<double> y = dcvit::gelu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(std::abs(y[2]) < 1e-12);

  CHECK(dcvit::gelu_scalar(1.0) == doctest::Approx(0.8413447).epsilon(1e-6));
}

TEST_CASE("linear matches matmul-plus-bias oracle") {
  dcvit::RandomStream rng(17);
  Tensor<double> x = rng.normal_tensor<double>({5, 4});
  Tensor<double> w = rng.normal_tensor<double>({4, 6});
  Tensor<double> b = rng.normal_tensor<double>({6});

  Tensor<double> got = dcvit::linear(x, w, b);
  Tensor<double> want = testutil::matmul_naive(x, w);
  for (long i = 0; i < want.rows(); ++i)
    for (long j = 0; j < want.cols(); ++j) want.at2(i, j) += b[j];
  CHECK(dcvit::max_abs_diff(got, want) < 1e-12);

  Tensor<double> id = dcvit::linear(x, Tensor<double>::identity(4), Tensor<double>::zeros({4}));
  CHECK(dcvit::max_abs_diff(id, x) == 0.0);

  Tensor<double> zeros = Tensor<double>::zeros({3, 4});
  Tensor<double> bb = dcvit::linear(zeros, w, b);
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 6; ++j) CHECK(bb.at2(i, j) == b[j]);
}

TEST_CASE("primitives are pure: repeated calls bit-identical") {
  dcvit::RandomStream rng(23);
  Tensor<double> x = rng.normal_tensor<double>({4, 8});
  Tensor<double> a = dcvit::softmax_rows(x);
  Tensor<double> b = dcvit::softmax_rows(x);
  CHECK(dcvit::max_abs_diff(a, b) == 0.0);
  Tensor<double> g1 = dcvit::gelu(x), g2 = dcvit::gelu(x);
  CHECK(dcvit::max_abs_diff(g1, g2) == 0.0);
}
