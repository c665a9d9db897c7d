// SPDX-License-Identifier: Apache-2.0

#include "trex/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trex {

namespace {

constexpr double kEps = 1e-12;

void check_labels(std::span<const std::uint32_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows)
    throw std::invalid_argument("loss: label count does not match embedding rows");
  for (std::uint32_t l : labels)
    if (l >= classes) throw std::invalid_argument("loss: label out of range");
}

double logsumexp(std::span<const double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

std::string loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::CosineCe: return "cosine_ce";
    case LossKind::VanillaCe: return "vanilla_ce";
    case LossKind::Ocm: return "ocm";
    default: return "oca";
  }
}

LossKind loss_kind_from_name(const std::string& s) {
  if (s == "cosine_ce") return LossKind::CosineCe;
  if (s == "vanilla_ce") return LossKind::VanillaCe;
  if (s == "ocm") return LossKind::Ocm;
  if (s == "oca") return LossKind::Oca;
  throw std::invalid_argument("unknown loss kind: " + s);
}

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), storage_({capacity, dim}), labels_(capacity, 0) {
  if (capacity == 0 || dim == 0)
    throw std::invalid_argument("MemoryBank: capacity and dim must be positive");
}

void MemoryBank::restore(Tensor storage, std::vector<std::uint32_t> labels, std::size_t cursor,
                         std::size_t fill) {
  if (storage.rows() != capacity_ || storage.cols() != dim_ || labels.size() != capacity_)
    throw std::invalid_argument("MemoryBank::restore: shape mismatch");
  if (cursor >= capacity_ || fill > capacity_)
    throw std::invalid_argument("MemoryBank::restore: invalid cursor/fill");
  storage_ = std::move(storage);
  labels_ = std::move(labels);
  cursor_ = cursor;
  fill_ = fill;
}

void bank_push(MemoryBank& bank, const Tensor& z, std::span<const std::uint32_t> labels) {
  if (bank.capacity_ == 0) throw std::invalid_argument("bank_push: bank is uninitialized");
  if (z.cols() != bank.dim_) throw std::invalid_argument("bank_push: embedding width mismatch");
  if (labels.size() != z.rows())
    throw std::invalid_argument("bank_push: label count does not match rows");
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double nrm = l2_norm(z.row(r));
    if (std::abs(nrm - 1.0) > 1e-5)
      throw std::invalid_argument("bank_push: row " + std::to_string(r) +
                                  " is not unit-norm (|z| = " + std::to_string(nrm) + ")");
  }
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto dst = bank.storage_.row(bank.cursor_);
    auto src = z.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    bank.labels_[bank.cursor_] = labels[r];
    bank.cursor_ = (bank.cursor_ + 1) % bank.capacity_;
    bank.fill_ = std::min(bank.fill_ + 1, bank.capacity_);
  }
}

Prototypes compute_prototypes(const MemoryBank& bank, std::size_t num_classes) {
  Prototypes p;
  p.means = Tensor({std::max<std::size_t>(num_classes, 1), std::max<std::size_t>(bank.dim(), 1)});
  p.counts.assign(num_classes, 0);
  p.present.assign(num_classes, false);
  for (std::size_t i = 0; i < bank.fill(); ++i) {
    const std::uint32_t c = bank.label(i);
    if (c >= num_classes) throw std::runtime_error("compute_prototypes: stale label in memory");
    auto mean = p.means.row(c);
    auto e = bank.entry(i);
    for (std::size_t k = 0; k < e.size(); ++k) mean[k] += e[k];
    p.counts[c]++;
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (p.counts[c] == 0) continue;
    p.present[c] = true;
    p.present_count++;
    auto mean = p.means.row(c);
    for (double& v : mean) v /= static_cast<double>(p.counts[c]);
  }
  p.normalized = l2_normalize_rows(p.means);
  return p;
}

LossResult cosine_ce_loss(const Tensor& z, std::span<const std::uint32_t> labels,
                          const Tensor& class_weights, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("cosine_ce_loss: temperature must be > 0");
  const std::size_t n = z.rows(), c = class_weights.rows(), d = z.cols();
  if (class_weights.cols() != d)
    throw std::invalid_argument("cosine_ce_loss: weight width does not match embeddings");
  check_labels(labels, n, c);

  const Tensor wbar = l2_normalize_rows(class_weights);
  LossResult res;
  res.grad_z = Tensor({n, d});
  res.grad_w = Tensor({c, d});
  Tensor dlogits({n, c});

  double total = 0.0;
  std::vector<double> row(c);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < c; ++k) row[k] = dot(z.row(j), wbar.row(k)) / temperature;
    const double lse = logsumexp(row);
    total += lse - row[labels[j]];
    for (std::size_t k = 0; k < c; ++k) {
      const double p = std::exp(row[k] - lse);
      dlogits.at(j, k) = (p - (k == labels[j] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  res.loss = total / static_cast<double>(n);

  // grad_z = dlogits * wbar / tau
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < c; ++k) {
      const double g = dlogits.at(j, k) / temperature;
      auto wr = wbar.row(k);
      for (std::size_t t = 0; t < d; ++t) res.grad_z.at(j, t) += g * wr[t];
    }

  // grad through the row normalization of W
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> gbar(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dlogits.at(j, k) / temperature;
      auto zr = z.row(j);
      for (std::size_t t = 0; t < d; ++t) gbar[t] += g * zr[t];
    }
    const double nrm = std::max(l2_norm(class_weights.row(k)), kEps);
    const double wg = dot(wbar.row(k), gbar);
    auto wr = wbar.row(k);
    for (std::size_t t = 0; t < d; ++t) res.grad_w.at(k, t) = (gbar[t] - wr[t] * wg) / nrm;
  }
  quantize(res.grad_z);
  quantize(res.grad_w);
  return res;
}

LossResult vanilla_ce_loss(const Tensor& x, std::span<const std::uint32_t> labels,
                           const Tensor& class_weights) {
  const std::size_t n = x.rows(), c = class_weights.rows(), d = x.cols();
  if (class_weights.cols() != d)
    throw std::invalid_argument("vanilla_ce_loss: weight width does not match inputs");
  check_labels(labels, n, c);

  LossResult res;
  res.grad_z = Tensor({n, d});
  res.grad_w = Tensor({c, d});

  double total = 0.0;
  std::vector<double> row(c);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < c; ++k) row[k] = dot(x.row(j), class_weights.row(k));
    const double lse = logsumexp(row);
    total += lse - row[labels[j]];
    for (std::size_t k = 0; k < c; ++k) {
      const double g = (std::exp(row[k] - lse) - (k == labels[j] ? 1.0 : 0.0)) /
                       static_cast<double>(n);
      auto wr = class_weights.row(k);
      auto xr = x.row(j);
      for (std::size_t t = 0; t < d; ++t) {
        res.grad_z.at(j, t) += g * wr[t];
        res.grad_w.at(k, t) += g * xr[t];
      }
    }
  }
  res.loss = total / static_cast<double>(n);
  quantize(res.grad_z);
  quantize(res.grad_w);
  return res;
}

LossResult ocm_loss(const Tensor& z, std::span<const std::uint32_t> labels,
                    const Prototypes& protos, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("ocm_loss: temperature must be > 0");
  const std::size_t n = z.rows(), d = z.cols();
  const std::size_t classes = protos.present.size();
  check_labels(labels, n, classes);
  if (protos.present_count == 0)
    throw std::runtime_error("ocm_loss: memory bank holds no class prototypes");

  std::vector<std::size_t> present_ids;
  std::vector<std::ptrdiff_t> pos_of_class(classes, -1);
  for (std::size_t c = 0; c < classes; ++c)
    if (protos.present[c]) {
      pos_of_class[c] = static_cast<std::ptrdiff_t>(present_ids.size());
      present_ids.push_back(c);
    }
  const std::size_t pc = present_ids.size();

  LossResult res;
  res.grad_z = Tensor({n, d});
  double total = 0.0;
  std::size_t contributing = 0;
  std::vector<double> row(pc);
  Tensor dlogits({n, pc});

  for (std::size_t j = 0; j < n; ++j) {
    if (pos_of_class[labels[j]] < 0) {
      res.skipped++;
      continue;
    }
    contributing++;
    for (std::size_t k = 0; k < pc; ++k)
      row[k] = dot(z.row(j), protos.normalized.row(present_ids[k])) / temperature;
    const double lse = logsumexp(row);
    total += lse - row[static_cast<std::size_t>(pos_of_class[labels[j]])];
    for (std::size_t k = 0; k < pc; ++k) {
      const double p = std::exp(row[k] - lse);
      dlogits.at(j, k) =
          p - (static_cast<std::ptrdiff_t>(k) == pos_of_class[labels[j]] ? 1.0 : 0.0);
    }
  }
  if (contributing == 0)
    throw std::runtime_error("ocm_loss: every sample's class is absent from memory");
  res.loss = total / static_cast<double>(contributing);

  for (std::size_t j = 0; j < n; ++j) {
    if (pos_of_class[labels[j]] < 0) continue;
    for (std::size_t k = 0; k < pc; ++k) {
      const double g = dlogits.at(j, k) / (temperature * static_cast<double>(contributing));
      auto ur = protos.normalized.row(present_ids[k]);
      for (std::size_t t = 0; t < d; ++t) res.grad_z.at(j, t) += g * ur[t];
    }
  }
  quantize(res.grad_z);
  return res;
}

LossResult oca_loss(const Tensor& z, std::span<const std::uint32_t> labels,
                    const MemoryBank& bank, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("oca_loss: temperature must be > 0");
  if (bank.fill() == 0) throw std::runtime_error("oca_loss: memory bank is empty");
  const std::size_t n = z.rows(), d = z.cols(), q = bank.fill();
  if (bank.dim() != d) throw std::invalid_argument("oca_loss: embedding width mismatch");
  if (labels.size() != n)
    throw std::invalid_argument("oca_loss: label count does not match rows");

  LossResult res;
  res.grad_z = Tensor({n, d});
  double total = 0.0;
  std::size_t contributing = 0;
  std::vector<double> sims(q);

  for (std::size_t j = 0; j < n; ++j) {
    bool has_positive = false;
    for (std::size_t i = 0; i < q; ++i) {
      sims[i] = dot(z.row(j), bank.entry(i)) / temperature;
      if (bank.label(i) == labels[j]) has_positive = true;
    }
    if (!has_positive) {
      res.skipped++;
      continue;
    }
    contributing++;

    double mx_all = sims[0];
    for (double s : sims) mx_all = std::max(mx_all, s);
    double sum_all = 0.0, sum_pos = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
      const double e = std::exp(sims[i] - mx_all);
      sum_all += e;
      if (bank.label(i) == labels[j]) sum_pos += e;
    }
    total += std::log(sum_all) - std::log(sum_pos);

    // grad_j = (sum_i p_i q_i - sum_pos r_i q_i) / tau
    for (std::size_t i = 0; i < q; ++i) {
      const double e = std::exp(sims[i] - mx_all);
      double coef = e / sum_all;
      if (bank.label(i) == labels[j]) coef -= e / sum_pos;
      coef /= temperature;
      auto qi = bank.entry(i);
      for (std::size_t t = 0; t < d; ++t) res.grad_z.at(j, t) += coef * qi[t];
    }
  }
  if (contributing == 0)
    throw std::runtime_error("oca_loss: every sample's class is absent from memory");
  res.loss = total / static_cast<double>(contributing);
  for (double& v : res.grad_z.data()) v /= static_cast<double>(contributing);
  quantize(res.grad_z);
  return res;
}

}  // namespace trex
