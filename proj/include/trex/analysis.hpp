// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_ANALYSIS_HPP
#define TREX_ANALYSIS_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "trex/numkit.hpp"

namespace trex {

struct AnalysisConfig {
  std::size_t pair_budget = 100000;
  double sparsity_eps = 1e-5;
  double coding_precision_sq = 0.5;  // epsilon^2 of the rate formula
  std::size_t hook_every = 10;       // training-dynamics cadence in steps, 0 = off
};

enum class DistanceMode { IntraClass, AllSample };

/// Mean l2 distance over same-class pairs (intra) or all pairs. Rows are
/// defensively re-normalized. When the pair count exceeds the budget, pairs
/// are sampled uniformly without replacement with the given seed.
double pairwise_distance(const Tensor& features, std::span<const std::uint32_t> labels,
                         DistanceMode mode, std::size_t pair_budget = 100000,
                         std::uint64_t seed = 0x5EED);

/// Fraction of entries of the row-normalized feature matrix with |value| < eps.
double sparsity_ratio(const Tensor& features, double eps = 1e-5);

/// (1/2) * log det(I_d + d / (N * eps_sq) * X^T X), natural log.
double coding_length(const Tensor& features, double eps_sq = 0.5);

struct RedundancyResult {
  double value = 0.0;                      // mean |pearson| over all column pairs
  std::size_t zero_variance_columns = 0;   // columns that used the rho := 0 convention
};

RedundancyResult redundancy(const Tensor& features);

/// Singular values of X (sqrt of eigenvalues of X^T X), normalized to sum 1,
/// descending. All-zero input is an error.
Tensor singular_spectrum(const Tensor& features);

struct GradientStats {
  double mean_abs_cos = 0.0;  // over sampled distinct class pairs
  double elementwise_std = 0.0;
  double frobenius = 0.0;
  std::size_t zero_rows_skipped = 0;
};

GradientStats gradient_stats(const Tensor& grad_w, std::size_t pair_budget = 100000,
                             std::uint64_t seed = 0x5EED);

/// Frobenius norm of the difference of the two per-row-normalized matrices.
/// Used for both class-weight and prototype drift.
double drift(const Tensor& prev, const Tensor& curr);

/// Top-k classes by cosine similarity to row `query`, excluding the query,
/// descending, ties broken by class index.
std::vector<std::size_t> nearest_prototypes(const Tensor& prototypes, std::size_t query,
                                            std::size_t k);

}  // namespace trex

#endif  // TREX_ANALYSIS_HPP
