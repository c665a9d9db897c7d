// SPDX-License-Identifier: Apache-2.0

#include "trex/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace trex {

namespace {

/// Draws `want` distinct values in [0, total) with a fixed seed; exhaustive
/// when the budget covers the space.
std::vector<std::size_t> sample_ids(std::size_t total, std::size_t want, std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (want >= total) {
    out.resize(total);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  std::unordered_set<std::size_t> seen;
  seen.reserve(want * 2);
  Rng rng(seed);
  while (seen.size() < want) seen.insert(rng.uniform_int(total));
  out.assign(seen.begin(), seen.end());
  std::sort(out.begin(), out.end());
  return out;
}

/// Decodes pair rank r into indices (i, j), i < j < n, lexicographic order.
std::pair<std::size_t, std::size_t> decode_pair(std::size_t r, std::size_t n) {
  std::size_t i = 0;
  std::size_t row = n - 1;  // pairs with first index i
  while (r >= row) {
    r -= row;
    ++i;
    --row;
  }
  return {i, i + 1 + r};
}

}  // namespace

double pairwise_distance(const Tensor& features, std::span<const std::uint32_t> labels,
                         DistanceMode mode, std::size_t pair_budget, std::uint64_t seed) {
  const std::size_t n = features.rows();
  if (n < 2) throw std::invalid_argument("pairwise_distance: need at least 2 rows");
  if (labels.size() != n && mode == DistanceMode::IntraClass)
    throw std::invalid_argument("pairwise_distance: label count mismatch");
  const Tensor x = l2_normalize_rows(features);

  auto dist = [&](std::size_t a, std::size_t b) {
    const double c = std::clamp(dot(x.row(a), x.row(b)), -1.0, 1.0);
    return std::sqrt(std::max(0.0, 2.0 - 2.0 * c));
  };

  if (mode == DistanceMode::AllSample) {
    const std::size_t total = n * (n - 1) / 2;
    double sum = 0.0;
    const auto ids = sample_ids(total, pair_budget, seed);
    for (std::size_t r : ids) {
      auto [i, j] = decode_pair(r, n);
      sum += dist(i, j);
    }
    return sum / static_cast<double>(ids.size());
  }

  // Intra-class: index the union of per-class pair spaces.
  std::uint32_t classes = 0;
  for (std::uint32_t l : labels) classes = std::max(classes, l + 1);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

  std::vector<std::size_t> offsets;  // cumulative pair counts per class
  std::size_t total = 0;
  for (const auto& idx : by_class) {
    offsets.push_back(total);
    if (idx.size() >= 2) total += idx.size() * (idx.size() - 1) / 2;
  }
  if (total == 0)
    throw std::invalid_argument("pairwise_distance: every class is a singleton");

  const auto ids = sample_ids(total, pair_budget, seed);
  double sum = 0.0;
  for (std::size_t r : ids) {
    const std::size_t c = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), r) - offsets.begin() - 1);
    auto [a, b] = decode_pair(r - offsets[c], by_class[c].size());
    sum += dist(by_class[c][a], by_class[c][b]);
  }
  return sum / static_cast<double>(ids.size());
}

double sparsity_ratio(const Tensor& features, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("sparsity_ratio: eps must be positive");
  const Tensor x = l2_normalize_rows(features);
  std::size_t near_zero = 0;
  for (double v : x.data())
    if (std::abs(v) < eps) near_zero++;
  return static_cast<double>(near_zero) / static_cast<double>(x.size());
}

double coding_length(const Tensor& features, double eps_sq) {
  if (eps_sq <= 0.0) throw std::invalid_argument("coding_length: precision must be positive");
  const std::size_t n = features.rows(), d = features.cols();
  const double scale = static_cast<double>(d) / (static_cast<double>(n) * eps_sq);
  Tensor s({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += features.at(r, i) * features.at(r, j);
      const double v = scale * acc + (i == j ? 1.0 : 0.0);
      s.at(i, j) = v;
      s.at(j, i) = v;
    }
  }
  return 0.5 * logdet_psd(s);
}

RedundancyResult redundancy(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  if (n < 2) throw std::invalid_argument("redundancy: need at least 2 rows");

  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < n; ++r) mean[j] += features.at(r, j);
    mean[j] /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double dv = features.at(r, j) - mean[j];
      sd[j] += dv * dv;
    }
    sd[j] = std::sqrt(sd[j]);
  }

  RedundancyResult res;
  for (std::size_t j = 0; j < d; ++j)
    if (sd[j] == 0.0) res.zero_variance_columns++;

  double sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double rho;
      if (sd[i] == 0.0 || sd[j] == 0.0) {
        rho = 0.0;  // includes the diagonal of degenerate columns
      } else if (i == j) {
        rho = 1.0;
      } else {
        double cov = 0.0;
        for (std::size_t r = 0; r < n; ++r)
          cov += (features.at(r, i) - mean[i]) * (features.at(r, j) - mean[j]);
        rho = std::clamp(cov / (sd[i] * sd[j]), -1.0, 1.0);
      }
      sum += (i == j ? 1.0 : 2.0) * std::abs(rho);
    }
  }
  res.value = sum / static_cast<double>(d * d);
  return res;
}

Tensor singular_spectrum(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  Tensor s({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) acc += features.at(r, i) * features.at(r, j);
      s.at(i, j) = acc;
      s.at(j, i) = acc;
    }
  EighResult e = sym_eigh(s);
  const std::size_t k = std::min(n, d);
  Tensor out({k});
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = std::sqrt(std::max(0.0, e.eigenvalues[i]));
    total += out[i];
  }
  if (total == 0.0)
    throw std::invalid_argument("singular_spectrum: all-zero features have no spectrum");
  for (double& v : out.data()) v /= total;
  return out;
}

GradientStats gradient_stats(const Tensor& grad_w, std::size_t pair_budget, std::uint64_t seed) {
  const std::size_t c = grad_w.rows(), d = grad_w.cols();
  if (c < 2) throw std::invalid_argument("gradient_stats: need at least 2 class rows");

  GradientStats out;
  std::vector<std::size_t> nonzero;
  std::vector<double> norms(c);
  for (std::size_t i = 0; i < c; ++i) {
    norms[i] = l2_norm(grad_w.row(i));
    if (norms[i] > 0.0)
      nonzero.push_back(i);
    else
      out.zero_rows_skipped++;
  }
  if (nonzero.empty())
    throw std::invalid_argument("gradient_stats: all gradient rows are zero");

  if (nonzero.size() >= 2) {
    const std::size_t total = nonzero.size() * (nonzero.size() - 1) / 2;
    const auto ids = sample_ids(total, pair_budget, seed);
    double sum = 0.0;
    for (std::size_t r : ids) {
      auto [a, b] = decode_pair(r, nonzero.size());
      const std::size_t i = nonzero[a], j = nonzero[b];
      sum += std::abs(dot(grad_w.row(i), grad_w.row(j)) / (norms[i] * norms[j]));
    }
    out.mean_abs_cos = sum / static_cast<double>(ids.size());
  }

  double mean = 0.0;
  for (double v : grad_w.data()) mean += v;
  mean /= static_cast<double>(grad_w.size());
  double var = 0.0, fro = 0.0;
  for (double v : grad_w.data()) {
    var += (v - mean) * (v - mean);
    fro += v * v;
  }
  out.elementwise_std = std::sqrt(var / static_cast<double>(grad_w.size()));
  out.frobenius = std::sqrt(fro);
  return out;
}

double drift(const Tensor& prev, const Tensor& curr) {
  if (prev.ndim() != 2 || prev.shape() != curr.shape())
    throw std::invalid_argument("drift: shapes must match");
  double acc = 0.0;
  for (std::size_t r = 0; r < prev.rows(); ++r) {
    const double np = l2_norm(prev.row(r)), nc = l2_norm(curr.row(r));
    if (np < 1e-12 || nc < 1e-12)
      throw std::invalid_argument("drift: zero row has no direction");
    for (std::size_t k = 0; k < prev.cols(); ++k) {
      const double d = prev.at(r, k) / np - curr.at(r, k) / nc;
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

std::vector<std::size_t> nearest_prototypes(const Tensor& prototypes, std::size_t query,
                                            std::size_t k) {
  const std::size_t c = prototypes.rows();
  if (query >= c) throw std::invalid_argument("nearest_prototypes: query out of range");
  if (k >= c) throw std::invalid_argument("nearest_prototypes: k must be < C");
  const Tensor u = l2_normalize_rows(prototypes);
  std::vector<std::pair<double, std::size_t>> sims;
  sims.reserve(c - 1);
  for (std::size_t j = 0; j < c; ++j) {
    if (j == query) continue;
    sims.emplace_back(dot(u.row(query), u.row(j)), j);
  }
  std::stable_sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = sims[i].second;
  return out;
}

}  // namespace trex
