// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_OBJECTIVES_HPP
#define TREX_OBJECTIVES_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trex/numkit.hpp"

namespace trex {

enum class LossKind { CosineCe, VanillaCe, Ocm, Oca };

std::string loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::CosineCe;
  double temperature = 0.1;
  std::string classifier = "learned";  // learned | frozen_orthogonal (cosine_ce only)
  std::size_t memory_capacity = 0;     // 0 = auto (8 per class), ocm/oca only
  double ema_momentum = 0.999;         // ocm/oca only
  bool predictor = false;              // ocm/oca only
  bool ema_average_bn_stats = true;

  bool uses_memory() const { return kind == LossKind::Ocm || kind == LossKind::Oca; }
};

/// Fixed-capacity FIFO queue of (unit-norm embedding, label) pairs filled from
/// the momentum branch on global crops.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t fill() const { return fill_; }
  std::size_t cursor() const { return cursor_; }

  std::span<const double> entry(std::size_t i) const { return storage_.row(i); }
  std::uint32_t label(std::size_t i) const { return labels_[i]; }

  const Tensor& storage() const { return storage_; }
  const std::vector<std::uint32_t>& labels() const { return labels_; }

  /// Restores serialized state (checkpoint path).
  void restore(Tensor storage, std::vector<std::uint32_t> labels, std::size_t cursor,
               std::size_t fill);

  friend void bank_push(MemoryBank& bank, const Tensor& z, std::span<const std::uint32_t> labels);

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  Tensor storage_;  // capacity x dim
  std::vector<std::uint32_t> labels_;
  std::size_t cursor_ = 0;
  std::size_t fill_ = 0;
};

/// Appends rows FIFO, overwriting the oldest entries past capacity. Rows must
/// be unit-norm momentum-branch embeddings of global crops.
void bank_push(MemoryBank& bank, const Tensor& z, std::span<const std::uint32_t> labels);

struct Prototypes {
  Tensor means;       // C x d_b, exact class means of stored embeddings
  Tensor normalized;  // unit-norm rows (undefined where absent)
  std::vector<std::size_t> counts;
  std::vector<bool> present;
  std::size_t present_count = 0;
};

/// Per-class arithmetic means of the bank contents. Prototypes are constants
/// with respect to the online parameters (they derive from the EMA branch).
Prototypes compute_prototypes(const MemoryBank& bank, std::size_t num_classes);

struct LossResult {
  double loss = 0.0;
  Tensor grad_z;
  Tensor grad_w;             // cosine/vanilla only
  std::size_t skipped = 0;   // samples whose class was absent from memory
};

/// Eq.-style cosine softmax cross-entropy over unit embeddings and row-
/// normalized class weights, with temperature.
LossResult cosine_ce_loss(const Tensor& z, std::span<const std::uint32_t> labels,
                          const Tensor& class_weights, double temperature);

/// Plain softmax cross-entropy on raw inner products (tau = 1, nothing
/// normalized).
LossResult vanilla_ce_loss(const Tensor& x, std::span<const std::uint32_t> labels,
                           const Tensor& class_weights);

/// Cosine softmax against normalized prototypes, restricted to classes present
/// in memory; samples of absent classes are skipped and counted.
LossResult ocm_loss(const Tensor& z, std::span<const std::uint32_t> labels,
                    const Prototypes& protos, double temperature);

/// Soft k-NN objective over the raw memory entries (log ratio of the positive
/// log-sum-exp to the full one).
LossResult oca_loss(const Tensor& z, std::span<const std::uint32_t> labels,
                    const MemoryBank& bank, double temperature);

}  // namespace trex

#endif  // TREX_OBJECTIVES_HPP
