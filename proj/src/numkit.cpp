// SPDX-License-Identifier: Apache-2.0

#include "trex/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace trex {

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent");
    n *= e;
  }
  if (shape_.empty()) n = 0;
  cols_ = shape_.empty() ? 0 : shape_.back();
  data_.assign(n, 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  std::size_t n = shape_.empty() ? 0 : 1;
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent");
    n *= e;
  }
  if (n != data_.size()) throw std::invalid_argument("Tensor: data length does not match shape");
  cols_ = shape_.empty() ? 0 : shape_.back();
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw std::invalid_argument("Tensor: rows() requires a 2-d tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw std::invalid_argument("Tensor: cols() requires a 2-d tensor");
  return shape_[1];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void quantize(Tensor& t) {
  if (numeric_mode() != NumericMode::f32) return;
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: operands must be 2-d");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw std::invalid_argument("matmul: inner dimensions disagree (" + std::to_string(k) +
                                " vs " + std::to_string(b.rows()) + ")");
  Tensor out({m, n});
  // i-k-j order: row of b is contiguous, summation order fixed.
  for (std::size_t i = 0; i < m; ++i) {
    double* out_row = out.row(i).data();
    const double* a_row = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a_row[p];
      const double* b_row = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
    }
  }
  quantize(out);
  return out;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor l2_normalize(const Tensor& v, double eps) {
  Tensor out = v;
  const double denom = std::max(l2_norm(v.data()), eps);
  for (double& x : out.data()) x /= denom;
  quantize(out);
  return out;
}

Tensor l2_normalize_rows(const Tensor& m, double eps) {
  Tensor out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = out.row(r);
    const double denom = std::max(l2_norm(row), eps);
    for (double& x : row) x /= denom;
  }
  quantize(out);
  return out;
}

EighResult sym_eigh(const Tensor& s) {
  if (s.ndim() != 2 || s.rows() != s.cols())
    throw std::invalid_argument("sym_eigh: input must be square");
  const std::size_t d = s.rows();
  double max_abs = 0.0, max_asym = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      max_abs = std::max(max_abs, std::abs(s.at(i, j)));
      max_asym = std::max(max_asym, std::abs(s.at(i, j) - s.at(j, i)));
    }
  if (max_asym > 1e-6 * std::max(1.0, max_abs))
    throw std::invalid_argument("sym_eigh: input is not symmetric");

  // Work on a symmetrized copy in full double precision.
  std::vector<double> a(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a[i * d + j] = 0.5 * (s.at(i, j) + s.at(j, i));
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;

  double fro = 0.0;
  for (double x : a) fro += x * x;
  fro = std::sqrt(fro);
  const double tol = 1e-10 * fro;

  for (int sweep = 0; sweep < 100 && d > 1; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += 2.0 * a[i * d + j] * a[i * d + j];
    if (std::sqrt(off) <= tol) break;

    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (apq == 0.0) continue;
        const double app = a[p * d + p], aqq = a[q * d + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a[k * d + p], akq = a[k * d + q];
          a[k * d + p] = c * akp - sn * akq;
          a[k * d + q] = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a[p * d + k], aqk = a[q * d + k];
          a[p * d + k] = c * apk - sn * aqk;
          a[q * d + k] = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v[k * d + p], vkq = v[k * d + q];
          v[k * d + p] = c * vkp - sn * vkq;
          v[k * d + q] = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a[i * d + i] > a[j * d + j]; });

  EighResult out{Tensor({d}), Tensor({d, d})};
  for (std::size_t j = 0; j < d; ++j) {
    out.eigenvalues[j] = a[order[j] * d + order[j]];
    for (std::size_t i = 0; i < d; ++i) out.eigenvectors.at(i, j) = v[i * d + order[j]];
  }
  return out;
}

double logdet_psd(const Tensor& s) {
  EighResult e = sym_eigh(s);
  double sum = 0.0;
  for (std::size_t i = 0; i < e.eigenvalues.size(); ++i) {
    const double lam = e.eigenvalues[i];
    if (lam < 1.0 - 1e-6)
      throw std::domain_error("logdet_psd: eigenvalue " + std::to_string(lam) +
                              " below 1; caller must pass an identity-plus-PSD matrix");
    sum += std::log(std::max(lam, 1.0));
  }
  return sum;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("pearson: need at least 2 samples");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;  // zero-variance convention
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = out.row(r);
    double mx = row[0];
    for (double x : row) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : row) {
      x = std::exp(x - mx);
      sum += x;
    }
    for (double& x : row) x /= sum;
  }
  return out;
}

}  // namespace trex
