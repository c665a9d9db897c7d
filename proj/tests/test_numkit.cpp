// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "trex/numkit.hpp"

using trex::Tensor;

namespace {
struct F64Mode {
  F64Mode() { trex::set_numeric_mode(trex::NumericMode::f64); }
};
F64Mode f64_mode;
}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {3, 1, 4, 1});
  Tensor prod = trex::matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(prod[i] == a[i]);

  Tensor b({2, 2}, {1, 2, 3, 4});
  Tensor ones({2, 1}, {1, 1});
  Tensor r = trex::matmul(b, ones);
  CHECK(r.at(0, 0) == doctest::Approx(3));
  CHECK(r.at(1, 0) == doctest::Approx(7));
}

TEST_CASE("matmul matches the triple-loop oracle on shapes up to 32x32") {
  trex::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.uniform_int(32);
    const std::size_t k = 1 + rng.uniform_int(32);
    const std::size_t n = 1 + rng.uniform_int(32);
    Tensor a = oracles::random_tensor({m, k}, rng);
    Tensor b = oracles::random_tensor({k, n}, rng);
    Tensor got = trex::matmul(a, b);
    Tensor want = oracles::naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::abs(got[i] - want[i]) <= 1e-6 * std::max(1.0, std::abs(want[i])));
  }
}

TEST_CASE("matmul rejects shape mismatch") {
  Tensor a({2, 3});
  Tensor b({2, 2});
  CHECK_THROWS_AS(trex::matmul(a, b), std::invalid_argument);
}

TEST_CASE("l2_normalize basics") {
  Tensor v({2}, {3, 4});
  Tensor n = trex::l2_normalize(v);
  CHECK(n[0] == doctest::Approx(0.6));
  CHECK(n[1] == doctest::Approx(0.8));

  Tensor unit({3}, {0, 1, 0});
  Tensor same = trex::l2_normalize(unit);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same[i] == doctest::Approx(unit[i]));

  Tensor zero({2}, {0, 0});
  Tensor z = trex::l2_normalize(zero, 1e-12);
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 0.0);
}

TEST_CASE("l2_normalize is idempotent and unit for inputs above eps") {
  trex::Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    Tensor v = oracles::random_tensor({1 + rng.uniform_int(16)}, rng, -5, 5);
    Tensor n1 = trex::l2_normalize(v);
    if (trex::l2_norm(v.data()) > 1e-12)
      CHECK(trex::l2_norm(n1.data()) == doctest::Approx(1.0).epsilon(1e-6));
    Tensor n2 = trex::l2_normalize(n1);
    for (std::size_t i = 0; i < n1.size(); ++i)
      CHECK(n2[i] == doctest::Approx(n1[i]).epsilon(1e-9));
  }
}

TEST_CASE("sym_eigh diagonal and identity") {
  Tensor d({2, 2}, {3, 0, 0, 1});
  auto e = trex::sym_eigh(d);
  CHECK(e.eigenvalues[0] == doctest::Approx(3));
  CHECK(e.eigenvalues[1] == doctest::Approx(1));

  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  auto ei = trex::sym_eigh(eye);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ei.eigenvalues[i] == doctest::Approx(1.0));
}

TEST_CASE("sym_eigh reconstructs random symmetric input") {
  trex::Rng rng(13);
  for (int t = 0; t < 10; ++t) {
    const std::size_t d = 6;
    Tensor s = oracles::random_symmetric(d, rng);
    auto e = trex::sym_eigh(s);

    Tensor recon({d, d});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          acc += e.eigenvectors.at(i, k) * e.eigenvalues[k] * e.eigenvectors.at(j, k);
        recon.at(i, j) = acc;
      }
    double err = 0.0, nrm = 0.0;
    for (std::size_t i = 0; i < d * d; ++i) {
      err += (recon[i] - s[i]) * (recon[i] - s[i]);
      nrm += s[i] * s[i];
    }
    CHECK(std::sqrt(err) <= 1e-4 * std::sqrt(nrm));

    double tr = 0.0, lsum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      tr += s.at(i, i);
      lsum += e.eigenvalues[i];
      if (i > 0) CHECK(e.eigenvalues[i] <= e.eigenvalues[i - 1] + 1e-12);
    }
    CHECK(std::abs(lsum - tr) <= 1e-5 * std::max(1.0, std::abs(tr)));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k)
          acc += e.eigenvectors.at(k, i) * e.eigenvectors.at(k, j);
        CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) <= 1e-4);
      }
  }
}

TEST_CASE("sym_eigh rejects non-symmetric input") {
  Tensor s({2, 2}, {1, 2, 0, 1});
  CHECK_THROWS_AS(trex::sym_eigh(s), std::invalid_argument);
}

TEST_CASE("logdet_psd closed forms") {
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  CHECK(trex::logdet_psd(eye) == doctest::Approx(0.0).epsilon(1e-12));

  Tensor d({2, 2}, {5, 0, 0, 1});
  CHECK(trex::logdet_psd(d) == doctest::Approx(std::log(5.0)));

  // matrix determinant lemma: det(I + x x^T) = 1 + |x|^2
  trex::Rng rng(17);
  Tensor x = oracles::random_tensor({5}, rng);
  Tensor s({5, 5});
  double nrm2 = 0.0;
  for (std::size_t i = 0; i < 5; ++i) nrm2 += x[i] * x[i];
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) s.at(i, j) = x[i] * x[j] + (i == j ? 1.0 : 0.0);
  CHECK(trex::logdet_psd(s) == doctest::Approx(std::log1p(nrm2)).epsilon(1e-8));
}

TEST_CASE("logdet_psd rejects eigenvalues below one") {
  Tensor d({2, 2}, {0.5, 0, 0, 2.0});
  CHECK_THROWS_AS(trex::logdet_psd(d), std::domain_error);
}

TEST_CASE("logdet_psd is rotation invariant") {
  trex::Rng rng(19);
  const std::size_t d = 5;
  Tensor base = oracles::random_tensor({d, d}, rng);
  Tensor a({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += base.at(k, i) * base.at(k, j);
      a.at(i, j) = acc + (i == j ? 1.0 : 0.0);  // I + PSD
    }
  Tensor q = oracles::random_orthogonal(d, rng);
  Tensor qa = oracles::naive_matmul(q, a);
  Tensor qt({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) qt.at(i, j) = q.at(j, i);
  Tensor rot = oracles::naive_matmul(qa, qt);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {  // symmetrize away roundoff
      const double v = 0.5 * (rot.at(i, j) + rot.at(j, i));
      rot.at(i, j) = v;
      rot.at(j, i) = v;
    }
  CHECK(trex::logdet_psd(rot) == doctest::Approx(trex::logdet_psd(a)).epsilon(1e-5));
}

TEST_CASE("pearson conventions") {
  std::vector<double> a{1, 2, 3, 4};
  std::vector<double> b{-1, -2, -3, -4};
  std::vector<double> flat{2, 2, 2, 2};
  CHECK(trex::pearson(a, a) == doctest::Approx(1.0));
  CHECK(trex::pearson(a, b) == doctest::Approx(-1.0));
  CHECK(trex::pearson(flat, a) == 0.0);
}

TEST_CASE("pearson is invariant to positive affine maps") {
  trex::Rng rng(23);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 2 + rng.uniform_int(20);
    Tensor a = oracles::random_tensor({n}, rng);
    Tensor b = oracles::random_tensor({n}, rng);
    const double alpha = rng.uniform(0.1, 3.0), beta = rng.uniform(-2.0, 2.0);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) scaled[i] = alpha * a[i] + beta;
    CHECK(std::abs(trex::pearson(a.data(), b.data()) - trex::pearson(scaled, b.data())) <= 1e-6);
  }
}
