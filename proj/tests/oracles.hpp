// SPDX-License-Identifier: Apache-2.0
//
// Independent oracles used by the unit and acceptance suites. These stay
// deliberately naive (triple loops, direct summation, deque-backed queue) and
// never call the implementation paths they check.

#ifndef TREX_TESTS_ORACLES_HPP
#define TREX_TESTS_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "trex/numkit.hpp"

namespace oracles {

/// Plain i-j-k triple loop matrix product.
inline trex::Tensor naive_matmul(const trex::Tensor& a, const trex::Tensor& b) {
  trex::Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

inline trex::Tensor random_tensor(std::vector<std::size_t> shape, trex::Rng& rng,
                                  double lo = -1.0, double hi = 1.0) {
  trex::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline trex::Tensor random_symmetric(std::size_t d, trex::Rng& rng) {
  trex::Tensor s({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      const double v = rng.uniform(-1.0, 1.0);
      s.at(i, j) = v;
      s.at(j, i) = v;
    }
  return s;
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian sample.
inline trex::Tensor random_orthogonal(std::size_t d, trex::Rng& rng) {
  trex::Tensor q({d, d});
  for (double& v : q.data()) v = rng.normal();
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t o = 0; o < r; ++o) {
      const double c = trex::dot(q.row(o), q.row(r));
      for (std::size_t k = 0; k < d; ++k) q.at(r, k) -= c * q.at(o, k);
    }
    const double nrm = trex::l2_norm(q.row(r));
    for (std::size_t k = 0; k < d; ++k) q.at(r, k) /= nrm;
  }
  return q;
}

/// Central finite difference of a scalar function with respect to *x.
inline double central_diff(const std::function<double()>& f, double* x, double h = 1e-5) {
  const double saved = *x;
  *x = saved + h;
  const double up = f();
  *x = saved - h;
  const double down = f();
  *x = saved;
  return (up - down) / (2.0 * h);
}

/// abs/rel comparison used by every gradient check.
inline bool grad_close(double analytic, double numeric, double rel = 1e-4,
                       double abs_floor = 1e-8) {
  return std::abs(analytic - numeric) <=
         rel * std::max(std::abs(analytic), std::abs(numeric)) + abs_floor;
}

/// Reference FIFO queue for the memory-bank contract.
struct RefQueue {
  std::size_t capacity;
  std::deque<std::pair<std::vector<double>, std::uint32_t>> entries;

  explicit RefQueue(std::size_t cap) : capacity(cap) {}

  void push(std::span<const double> z, std::uint32_t label) {
    entries.emplace_back(std::vector<double>(z.begin(), z.end()), label);
    while (entries.size() > capacity) entries.pop_front();
  }
};

/// Brute-force NCM softmax: class means over all embeddings, normalized, then
/// cosine softmax. Mirrors the memory-bank objective evaluated on the full
/// dataset.
inline double ncm_softmax_loss(const trex::Tensor& memory,
                               const std::vector<std::uint32_t>& mem_labels,
                               const trex::Tensor& queries,
                               const std::vector<std::uint32_t>& query_labels,
                               std::size_t num_classes, double tau) {
  const std::size_t d = memory.cols();
  std::vector<std::vector<double>> mean(num_classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(num_classes, 0);
  for (std::size_t i = 0; i < memory.rows(); ++i) {
    for (std::size_t k = 0; k < d; ++k) mean[mem_labels[i]][k] += memory.at(i, k);
    count[mem_labels[i]]++;
  }
  std::vector<bool> present(num_classes, false);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (count[c] == 0) continue;
    present[c] = true;
    double nrm = 0.0;
    for (double& v : mean[c]) v /= static_cast<double>(count[c]);
    for (double v : mean[c]) nrm += v * v;
    nrm = std::sqrt(nrm);
    for (double& v : mean[c]) v /= nrm;
  }

  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    if (!present[query_labels[q]]) continue;
    used++;
    double mx = -1e300;
    std::vector<double> logits;
    std::vector<std::size_t> ids;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (!present[c]) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += queries.at(q, k) * mean[c][k];
      s /= tau;
      logits.push_back(s);
      ids.push_back(c);
      mx = std::max(mx, s);
    }
    double sum = 0.0, target = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double e = std::exp(logits[i] - mx);
      sum += e;
      if (ids[i] == query_labels[q]) target = e;
    }
    total += -std::log(target / sum);
  }
  return total / static_cast<double>(used);
}

/// Direct-summation NCA objective over explicit memory entries.
inline double nca_loss(const trex::Tensor& memory,
                       const std::vector<std::uint32_t>& mem_labels,
                       const trex::Tensor& queries,
                       const std::vector<std::uint32_t>& query_labels, double tau) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    double pos = 0.0, all = 0.0;
    bool has_pos = false;
    for (std::size_t i = 0; i < memory.rows(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < memory.cols(); ++k) s += queries.at(q, k) * memory.at(i, k);
      const double e = std::exp(s / tau);
      all += e;
      if (mem_labels[i] == query_labels[q]) {
        pos += e;
        has_pos = true;
      }
    }
    if (!has_pos) continue;
    used++;
    total += -std::log(pos / all);
  }
  return total / static_cast<double>(used);
}

}  // namespace oracles

#endif  // TREX_TESTS_ORACLES_HPP
