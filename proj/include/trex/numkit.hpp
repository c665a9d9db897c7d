// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_NUMKIT_HPP
#define TREX_NUMKIT_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "trex/common.hpp"

namespace trex {

/// Dense row-major numeric array with an explicit shape. The universal value
/// carrier for images, embeddings, weight matrices and metric vectors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Row/column extents for 2-d tensors (contract-checked).
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::size_t cols_ = 0;  // trailing extent, cached for at()
  std::vector<double> data_;
};

/// Rounds every entry through float when the run is in f32 mode.
void quantize(Tensor& t);

/// Standard matrix product with a fixed summation order, so results are
/// bit-reproducible per build. Throws std::invalid_argument on shape mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// v / max(||v||_2, eps). The eps guard makes zero vectors a no-op.
Tensor l2_normalize(const Tensor& v, double eps = 1e-12);

/// Row-wise l2 normalization of a 2-d tensor.
Tensor l2_normalize_rows(const Tensor& m, double eps = 1e-12);

double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

struct EighResult {
  Tensor eigenvalues;   // [d], descending
  Tensor eigenvectors;  // [d x d], column j pairs with eigenvalue j
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Converges when the
/// off-diagonal Frobenius norm drops below 1e-10 * ||S||_F (at most 100
/// sweeps). Input must be symmetric within 1e-6.
EighResult sym_eigh(const Tensor& s);

/// Sum of log eigenvalues of an identity-plus-PSD matrix. The caller must have
/// applied the identity shift: any eigenvalue below 1 - 1e-6 is a domain error.
double logdet_psd(const Tensor& s);

/// Sample Pearson correlation in [-1, 1]; zero-variance inputs return 0.
double pearson(std::span<const double> a, std::span<const double> b);

/// Row-stable softmax (max-subtracted); rows sum to 1.
Tensor softmax_rows(const Tensor& logits);

}  // namespace trex

#endif  // TREX_NUMKIT_HPP
