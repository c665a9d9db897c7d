// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "trex/analysis.hpp"

using trex::Tensor;

namespace {
struct F64Mode {
  F64Mode() { trex::set_numeric_mode(trex::NumericMode::f64); }
};
F64Mode f64_mode;
}  // namespace

TEST_CASE("pairwise distance closed forms") {
  Tensor dup({2, 3}, {1, 0, 0, 1, 0, 0});
  std::vector<std::uint32_t> same{0, 0};
  CHECK(trex::pairwise_distance(dup, same, trex::DistanceMode::IntraClass) ==
        doctest::Approx(0.0));

  Tensor ortho({2, 2}, {1, 0, 0, 1});
  CHECK(trex::pairwise_distance(ortho, same, trex::DistanceMode::AllSample) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));

  Tensor anti({2, 2}, {1, 0, -1, 0});
  CHECK(trex::pairwise_distance(anti, same, trex::DistanceMode::AllSample) ==
        doctest::Approx(2.0).epsilon(1e-9));

  std::vector<std::uint32_t> singles{0, 1};
  CHECK_THROWS_AS(trex::pairwise_distance(ortho, singles, trex::DistanceMode::IntraClass),
                  std::invalid_argument);
}

TEST_CASE("metrics are invariant to sample order") {
  trex::Rng rng(7);
  const std::size_t n = 20, d = 6;
  Tensor x = oracles::random_tensor({n, d}, rng);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % 4);

  Tensor shuffled({n, d});
  std::vector<std::uint32_t> shuffled_labels(n);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 7 + 3) % n;  // fixed permutation
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) shuffled.at(i, k) = x.at(perm[i], k);
    shuffled_labels[i] = labels[perm[i]];
  }

  CHECK(trex::pairwise_distance(x, labels, trex::DistanceMode::IntraClass) ==
        doctest::Approx(
            trex::pairwise_distance(shuffled, shuffled_labels, trex::DistanceMode::IntraClass))
            .epsilon(1e-9));
  CHECK(trex::sparsity_ratio(x) == doctest::Approx(trex::sparsity_ratio(shuffled)));
  CHECK(trex::coding_length(x) == doctest::Approx(trex::coding_length(shuffled)).epsilon(1e-9));
  CHECK(trex::redundancy(x).value ==
        doctest::Approx(trex::redundancy(shuffled).value).epsilon(1e-9));
}

TEST_CASE("sparsity ratio conventions") {
  Tensor row({1, 4}, {0, 0, 0, 1});
  CHECK(trex::sparsity_ratio(row, 1e-5) == doctest::Approx(0.75));

  const std::size_t d = 16;
  Tensor dense({1, d});
  for (std::size_t k = 0; k < d; ++k) dense.at(0, k) = 1.0;  // normalizes to 1/sqrt(d)
  CHECK(trex::sparsity_ratio(dense, 1e-5) == doctest::Approx(0.0));

  // monotone in eps
  trex::Rng rng(11);
  Tensor x = oracles::random_tensor({8, 10}, rng);
  double prev = 0.0;
  for (double eps : {1e-8, 1e-4, 1e-2, 1e-1, 0.5}) {
    const double s = trex::sparsity_ratio(x, eps);
    CHECK(s >= prev - 1e-12);
    prev = s;
  }
}

TEST_CASE("coding length closed forms") {
  Tensor zeros({3, 4});
  CHECK(trex::coding_length(zeros, 0.5) == doctest::Approx(0.0).epsilon(1e-12));

  Tensor one({1, 2}, {1, 0});
  CHECK(trex::coding_length(one, 0.5) == doctest::Approx(0.5 * std::log(5.0)).epsilon(1e-9));

  // rotation invariance and non-negativity
  trex::Rng rng(13);
  Tensor x = oracles::random_tensor({12, 5}, rng);
  Tensor q = oracles::random_orthogonal(5, rng);
  Tensor xq = oracles::naive_matmul(x, q);
  CHECK(trex::coding_length(xq) == doctest::Approx(trex::coding_length(x)).epsilon(1e-5));
  CHECK(trex::coding_length(x) >= 0.0);
}

TEST_CASE("redundancy closed forms") {
  // identical (non-constant) columns: every |rho| is 1
  Tensor same({4, 3});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) same.at(r, c) = static_cast<double>(r);
  CHECK(trex::redundancy(same).value == doctest::Approx(1.0));

  // d = 2 with exactly uncorrelated columns: (1 + 1 + 0 + 0) / 4
  Tensor uncorr({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  CHECK(trex::redundancy(uncorr).value == doctest::Approx(0.5).epsilon(1e-12));

  // mutually uncorrelated non-constant d columns: exactly 1/d
  Tensor had({4, 3},
             {1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1});  // orthogonal sign patterns
  CHECK(trex::redundancy(had).value == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // always within [0, 1]; zero-variance columns are counted
  trex::Rng rng(17);
  Tensor x = oracles::random_tensor({10, 6}, rng);
  for (std::size_t r = 0; r < 10; ++r) x.at(r, 2) = 3.0;
  auto res = trex::redundancy(x);
  CHECK(res.value >= 0.0);
  CHECK(res.value <= 1.0);
  CHECK(res.zero_variance_columns == 1);
}

TEST_CASE("singular spectrum") {
  // orthogonal rows of equal norm: uniform spectrum
  Tensor ortho({2, 2}, {2, 0, 0, 2});
  Tensor s = trex::singular_spectrum(ortho);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));

  // rank-1 input
  Tensor rank1({3, 3});
  for (std::size_t r = 0; r < 3; ++r) {
    rank1.at(r, 0) = 1.0;
    rank1.at(r, 1) = 2.0;
    rank1.at(r, 2) = -1.0;
  }
  Tensor s1 = trex::singular_spectrum(rank1);
  CHECK(s1[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(s1[1]) <= 1e-6);

  trex::Rng rng(19);
  Tensor x = oracles::random_tensor({7, 5}, rng);
  Tensor sx = trex::singular_spectrum(x);
  double total = 0.0;
  for (std::size_t i = 0; i < sx.size(); ++i) {
    total += sx[i];
    if (i > 0) CHECK(sx[i] <= sx[i - 1] + 1e-12);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

  Tensor zeros({3, 3});
  CHECK_THROWS_AS(trex::singular_spectrum(zeros), std::invalid_argument);
}

TEST_CASE("gradient statistics") {
  Tensor same({3, 4});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) same.at(r, c) = 1.0 + static_cast<double>(c);
  CHECK(trex::gradient_stats(same).mean_abs_cos == doctest::Approx(1.0));

  Tensor ortho({3, 3}, {1, 0, 0, 0, 2, 0, 0, 0, 3});
  CHECK(trex::gradient_stats(ortho).mean_abs_cos == doctest::Approx(0.0));

  Tensor zeros({3, 3});
  CHECK_THROWS_AS(trex::gradient_stats(zeros), std::invalid_argument);

  // sampled estimate equals the exhaustive double loop when the budget covers
  trex::Rng rng(23);
  Tensor g = oracles::random_tensor({16, 8}, rng);
  auto stats = trex::gradient_stats(g, 1000000);
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = i + 1; j < 16; ++j) {
      sum += std::abs(trex::dot(g.row(i), g.row(j)) /
                      (trex::l2_norm(g.row(i)) * trex::l2_norm(g.row(j))));
      pairs++;
    }
  CHECK(stats.mean_abs_cos == doctest::Approx(sum / static_cast<double>(pairs)).epsilon(1e-9));

  // zero rows are skipped and counted
  Tensor with_zero({3, 2}, {1, 0, 0, 0, 0, 1});
  auto wz = trex::gradient_stats(with_zero);
  CHECK(wz.zero_rows_skipped == 1);
  CHECK(wz.mean_abs_cos == doctest::Approx(0.0));
}

TEST_CASE("drift closed forms and invariances") {
  Tensor a({3, 2}, {1, 0, 0, 1, 1, 1});
  CHECK(trex::drift(a, a) == doctest::Approx(0.0));

  Tensor unit({4, 2}, {1, 0, 0, 1, -1, 0, 0, -1});
  Tensor neg = unit;
  for (double& v : neg.data()) v = -v;
  CHECK(trex::drift(unit, neg) == doctest::Approx(2.0 * std::sqrt(4.0)).epsilon(1e-12));

  Tensor scaled = a;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) scaled.at(r, c) *= (r + 1) * 0.7;
  Tensor b({3, 2}, {0.5, 0.5, 1, 0, 0, 2});
  CHECK(trex::drift(a, b) == doctest::Approx(trex::drift(scaled, b)).epsilon(1e-12));

  Tensor zero_row({2, 2}, {0, 0, 1, 0});
  CHECK_THROWS_AS(trex::drift(zero_row, a), std::invalid_argument);
}

TEST_CASE("nearest prototypes ranking and tie-breaks") {
  Tensor protos({3, 2}, {1, 0, 1, 0, 0, 1});  // classes 0 and 1 identical
  auto top = trex::nearest_prototypes(protos, 0, 1);
  CHECK(top == std::vector<std::size_t>{1});
  auto top1 = trex::nearest_prototypes(protos, 1, 1);
  CHECK(top1 == std::vector<std::size_t>{0});

  Tensor ortho({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto order = trex::nearest_prototypes(ortho, 1, 2);
  CHECK(order == std::vector<std::size_t>{0, 2});  // all ties, index order

  auto full = trex::nearest_prototypes(ortho, 0, 2);
  CHECK(full.size() == 2);
  CHECK_THROWS_AS(trex::nearest_prototypes(ortho, 0, 3), std::invalid_argument);
}
