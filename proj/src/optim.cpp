// SPDX-License-Identifier: Apache-2.0

#include "trex/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace trex {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kEpochShuffleTag = 0xE70C;
constexpr std::uint64_t kPrimeOrderTag = 0x5E9D;
constexpr std::uint64_t kPrimeEpochBase = 0x40000000ULL;  // never collides with real epochs
constexpr std::uint64_t kHookSeedTag = 0xA11A;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ClassifierMode classifier_mode_for(const LossConfig& loss) {
  switch (loss.kind) {
    case LossKind::CosineCe:
      if (loss.classifier == "learned") return ClassifierMode::Learned;
      if (loss.classifier == "frozen_orthogonal") return ClassifierMode::FrozenOrthogonal;
      throw std::invalid_argument("objective: unknown classifier mode " + loss.classifier);
    case LossKind::VanillaCe:
      if (loss.classifier != "learned")
        throw std::invalid_argument("objective: vanilla softmax requires a learned classifier");
      return ClassifierMode::Learned;
    default:
      return ClassifierMode::Absent;
  }
}

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_idx,
                                     std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order = train_idx;
  Rng rng(Rng::derive(seed, kEpochShuffleTag, epoch));
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(i + 1)]);
  return order;
}

struct CropBatch {
  Tensor rows;  // (crops_per_sample * B) x (res*res*3), crop-major
  std::vector<std::uint32_t> labels;
};

CropBatch pack_crops(const std::vector<CropSet>& crops, const Dataset& ds,
                     const std::vector<std::size_t>& batch, bool globals, std::size_t per_sample,
                     std::size_t resolution) {
  const std::size_t b = crops.size();
  CropBatch out;
  out.rows = Tensor({per_sample * b, resolution * resolution * 3});
  out.labels.resize(per_sample * b);
  for (std::size_t g = 0; g < per_sample; ++g) {
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor& src = globals ? crops[i].globals[g] : crops[i].locals[g];
      auto dst = out.rows.row(g * b + i);
      std::copy(src.data().begin(), src.data().end(), dst.begin());
      out.labels[g * b + i] = ds.labels[batch[i]];
    }
  }
  return out;
}

/// Rows of the prototype matrix restricted to classes present in both maps,
/// for the drift series (absent classes have no direction).
bool common_present_rows(const Prototypes& a, const Prototypes& b, Tensor& ra, Tensor& rb) {
  std::vector<std::size_t> ids;
  for (std::size_t c = 0; c < a.present.size(); ++c)
    if (a.present[c] && b.present[c]) ids.push_back(c);
  if (ids.empty()) return false;
  ra = Tensor({ids.size(), a.means.cols()});
  rb = Tensor({ids.size(), b.means.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto sa = a.means.row(ids[i]);
    auto sb = b.means.row(ids[i]);
    std::copy(sa.begin(), sa.end(), ra.row(i).begin());
    std::copy(sb.begin(), sb.end(), rb.row(i).begin());
  }
  return true;
}

double classify_split_accuracy(ModelParams& params, const MemoryBank* bank,
                               const TrainConfig& cfg, const Dataset& ds,
                               const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  const std::size_t c = ds.num_classes;
  Tensor templates;
  std::vector<bool> usable(c, true);
  if (cfg.loss.uses_memory()) {
    if (bank == nullptr) throw std::invalid_argument("accuracy: memory loss without a bank");
    Prototypes p = compute_prototypes(*bank, c);
    templates = p.normalized;
    usable = p.present;
  } else if (cfg.loss.kind == LossKind::CosineCe) {
    templates = l2_normalize_rows(params.class_weights);
  } else {
    templates = params.class_weights;
  }

  std::size_t correct = 0;
  const std::size_t chunk = 256;
  const std::size_t res = cfg.augment.global_resolution;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t n = std::min(chunk, indices.size() - start);
    Tensor batch({n, res * res * 3});
    parallel_for(n, [&](std::size_t i) {
      Tensor t = eval_transform(to_aug_image(ds, indices[start + i]), res, cfg.augment.norm_mean,
                                cfg.augment.norm_std);
      auto dst = batch.row(i);
      std::copy(t.data().begin(), t.data().end(), dst.begin());
    });
    ForwardResult fwd = forward(params, batch, res, RunMode::Eval, false);
    for (std::size_t i = 0; i < n; ++i) {
      double best = -1e300;
      std::size_t best_c = 0;
      for (std::size_t k = 0; k < c; ++k) {
        if (!usable[k]) continue;
        const double s = dot(fwd.z.row(i), templates.row(k));
        if (s > best) {
          best = s;
          best_c = k;
        }
      }
      if (best_c == ds.labels[indices[start + i]]) correct++;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

void prime_memory(Checkpoint& state, const Dataset& ds, const std::vector<std::size_t>& train_idx,
                  std::size_t batch_size) {
  const TrainConfig& cfg = state.cfg;
  const std::size_t bg = batch_size * cfg.augment.n_global;
  const std::size_t batches = (state.bank.capacity() + bg - 1) / bg;

  std::vector<std::size_t> order = train_idx;
  Rng rng(Rng::derive(cfg.seed, kPrimeOrderTag));
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(i + 1)]);

  AugmentConfig gcfg = cfg.augment;
  gcfg.n_local = 0;  // only global crops feed the momentum branch
  std::size_t pos = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    std::vector<std::size_t> batch(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      batch[i] = order[pos];
      pos = (pos + 1) % order.size();
    }
    std::vector<CropSet> crops(batch_size);
    parallel_for(batch_size, [&](std::size_t i) {
      crops[i] = multi_crop(to_aug_image(ds, batch[i]), gcfg,
                            Rng::derive(cfg.seed, kPrimeEpochBase + b, batch[i]));
    });
    CropBatch packed =
        pack_crops(crops, ds, batch, true, cfg.augment.n_global, cfg.augment.global_resolution);
    Tensor z = forward_ema_embed(state.ema, state.params, packed.rows,
                                 cfg.augment.global_resolution);
    bank_push(state.bank, z, packed.labels);
  }
}

}  // namespace

LrSchedule make_schedule(const TrainConfig& cfg, std::size_t steps_per_epoch) {
  LrSchedule s;
  s.peak_lr = cfg.base_lr * static_cast<double>(cfg.batch_size) / 256.0;
  s.warmup_steps = cfg.warmup_epochs * steps_per_epoch;
  s.total_steps = cfg.epochs * steps_per_epoch;
  return s;
}

double lr_at(std::size_t step, const LrSchedule& sched) {
  if (sched.total_steps == 0 || step >= sched.total_steps) return 0.0;
  if (sched.warmup_steps > 0 && step < sched.warmup_steps && sched.warmup_steps < sched.total_steps)
    return sched.peak_lr * static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
  if (sched.warmup_steps >= sched.total_steps)  // degenerate config: pure ramp
    return sched.peak_lr * static_cast<double>(step) / static_cast<double>(sched.total_steps);
  const double t = static_cast<double>(step - sched.warmup_steps) /
                   static_cast<double>(sched.total_steps - sched.warmup_steps);
  return sched.peak_lr * 0.5 * (1.0 + std::cos(kPi * t));
}

OptState make_opt_state(ModelParams& params) {
  OptState s;
  for (auto& r : trainable_params(params)) s.velocity.emplace_back(r.tensor->shape());
  return s;
}

void sgd_step(ModelParams& params, const ModelGrads& grads, OptState& state, double lr,
              const TrainConfig& cfg) {
  auto refs = trainable_params(params);
  if (refs.size() != grads.tensors.size() || refs.size() != state.velocity.size())
    throw std::invalid_argument("sgd_step: parameter/gradient layouts differ");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    Tensor& p = *refs[i].tensor;
    if (params.classifier_mode == ClassifierMode::FrozenOrthogonal &&
        refs[i].tensor == &params.class_weights)
      continue;  // frozen weights: gradient discarded, never updated
    const Tensor& g = grads.tensors[i];
    Tensor& v = state.velocity[i];
    if (g.size() != p.size() || v.size() != p.size())
      throw std::invalid_argument("sgd_step: shape mismatch at " + refs[i].name);
    const double wd = decays(refs[i].kind) ? cfg.weight_decay : 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = trex::quantize(cfg.momentum * v[k] + (g[k] + wd * p[k]));
      p[k] = trex::quantize(p[k] - lr * v[k]);
    }
  }
}

std::string format_metric_jsonl(const MetricRecord& rec) {
  std::string out = "{\"step\":" + std::to_string(rec.step) +
                    ",\"epoch\":" + std::to_string(rec.epoch) + ",\"name\":\"" + rec.name +
                    "\",\"values\":[";
  for (std::size_t i = 0; i < rec.values.size(); ++i) {
    if (i) out += ',';
    out += fmt_double(rec.values[i]);
  }
  out += "]}";
  return out;
}

struct MetricsWriter::Impl {
  std::ofstream os;
  std::vector<std::string> order;
  std::map<std::string, MetricRecord> last;
};

MetricsWriter::MetricsWriter(const std::string& jsonl_path) : impl_(new Impl) {
  impl_->os.open(jsonl_path, std::ios::binary);
  if (!impl_->os) {
    delete impl_;
    throw std::runtime_error("MetricsWriter: cannot open " + jsonl_path);
  }
}

MetricsWriter::~MetricsWriter() { delete impl_; }

void MetricsWriter::append(const MetricRecord& rec) {
  impl_->os << format_metric_jsonl(rec) << '\n';
  impl_->os.flush();
  if (impl_->last.find(rec.name) == impl_->last.end()) impl_->order.push_back(rec.name);
  impl_->last[rec.name] = rec;
}

void MetricsWriter::write_summary_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("MetricsWriter: cannot open " + path);
  os << "name,step,epoch,values\n";
  for (const auto& name : impl_->order) {
    const MetricRecord& r = impl_->last.at(name);
    os << name << ',' << r.step << ',' << r.epoch << ',';
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      if (i) os << ';';
      os << fmt_double(r.values[i]);
    }
    os << '\n';
  }
}

MetricSink MetricsWriter::sink() {
  return [this](const MetricRecord& rec) { append(rec); };
}

double train_split_accuracy(Checkpoint& ckpt, const Dataset& dataset) {
  return classify_split_accuracy(ckpt.params, ckpt.has_bank ? &ckpt.bank : nullptr, ckpt.cfg,
                                 dataset, dataset.indices_of(Split::Train));
}

Checkpoint train(const TrainConfig& cfg_in, const Dataset& dataset,
                 const std::string& config_json, const MetricSink& sink,
                 const Checkpoint* resume, std::size_t halt_after_steps,
                 const CheckpointSink& checkpoint_sink) {
  TrainConfig cfg = cfg_in;
  if (cfg.loss.kind == LossKind::VanillaCe) {
    // vanilla softmax: tau = 1, nothing normalized
    cfg.loss.temperature = 1.0;
    cfg.projector.input_l2 = false;
    cfg.projector.normalize_output = false;
  }
  if (cfg.predictor.enabled && !cfg.loss.uses_memory())
    throw std::invalid_argument("train: the predictor head requires a prototype objective");
  cfg.augment.validate();
  set_numeric_mode(cfg.precision);
  dataset.validate();

  const std::size_t num_classes = dataset.num_classes;
  const auto train_idx = dataset.indices_of(Split::Train);
  if (train_idx.empty()) throw std::invalid_argument("train: dataset has no train split");
  const std::size_t batch_size = std::min(cfg.batch_size, train_idx.size());
  const std::size_t spe = std::max<std::size_t>(1, train_idx.size() / batch_size);
  const LrSchedule sched = make_schedule(cfg, spe);

  Checkpoint state;
  state.cfg = cfg;
  state.config_json = config_json;
  state.config_hash = fnv1a(config_json);

  const ClassifierMode cmode = classifier_mode_for(cfg.loss);
  if (resume != nullptr) {
    if (resume->config_hash != state.config_hash)
      throw std::runtime_error("train: checkpoint was produced by a different config; refusing to resume");
    state.params = resume->params;
    state.opt = resume->opt;
    state.has_ema = resume->has_ema;
    state.ema = resume->ema;
    state.has_bank = resume->has_bank;
    state.bank = resume->bank;
    state.step = resume->step;
  } else {
    state.params =
        init_params(cfg.encoder, cfg.projector, cfg.predictor, cmode, num_classes, cfg.seed);
    state.opt = make_opt_state(state.params);
    if (cfg.loss.uses_memory()) {
      const std::size_t capacity =
          cfg.loss.memory_capacity ? cfg.loss.memory_capacity : 8 * num_classes;
      state.bank = MemoryBank(capacity, cfg.projector.bottleneck_dim);
      state.has_bank = true;
      state.ema =
          make_ema_shadow(state.params, cfg.loss.ema_momentum, cfg.loss.ema_average_bn_stats);
      state.has_ema = true;
      prime_memory(state, dataset, train_idx, batch_size);
    }
  }

  const std::size_t n_global = cfg.augment.n_global;
  const std::size_t n_local = cfg.augment.n_local;
  const std::size_t res_g = cfg.augment.global_resolution;
  const std::size_t res_l = cfg.augment.local_resolution;
  const bool has_classifier = cmode != ClassifierMode::Absent;

  std::vector<std::size_t> order;
  std::uint64_t order_epoch = ~0ULL;
  std::size_t steps_done = 0;

  for (std::uint64_t step = state.step; step < sched.total_steps; ++step) {
    const std::uint64_t epoch = step / spe;
    const std::size_t pos = step % spe;
    if (epoch != order_epoch) {
      order = epoch_order(train_idx, cfg.seed, epoch);
      order_epoch = epoch;
    }

    std::vector<std::size_t> batch(order.begin() + pos * batch_size,
                                   order.begin() + pos * batch_size + batch_size);
    std::vector<CropSet> crops(batch_size);
    parallel_for(batch_size, [&](std::size_t i) {
      crops[i] = multi_crop(to_aug_image(dataset, batch[i]), cfg.augment,
                            Rng::derive(cfg.seed, epoch, batch[i]));
      crops[i].source_index = batch[i];
    });

    CropBatch gpack = pack_crops(crops, dataset, batch, true, n_global, res_g);
    ForwardResult fwd_g = forward(state.params, gpack.rows, res_g, RunMode::Train, true);
    CropBatch lpack;
    ForwardResult fwd_l;
    if (n_local > 0) {
      lpack = pack_crops(crops, dataset, batch, false, n_local, res_l);
      fwd_l = forward(state.params, lpack.rows, res_l, RunMode::Train, true);
    }

    const std::size_t rows_g = fwd_g.z.rows();
    const std::size_t rows_l = n_local > 0 ? fwd_l.z.rows() : 0;
    const std::size_t dz = fwd_g.z.cols();
    Tensor z({rows_g + rows_l, dz});
    std::vector<std::uint32_t> all_labels(rows_g + rows_l);
    for (std::size_t r = 0; r < rows_g; ++r) {
      std::copy(fwd_g.z.row(r).begin(), fwd_g.z.row(r).end(), z.row(r).begin());
      all_labels[r] = gpack.labels[r];
    }
    for (std::size_t r = 0; r < rows_l; ++r) {
      std::copy(fwd_l.z.row(r).begin(), fwd_l.z.row(r).end(), z.row(rows_g + r).begin());
      all_labels[rows_g + r] = lpack.labels[r];
    }

    Prototypes protos;
    LossResult loss;
    switch (cfg.loss.kind) {
      case LossKind::CosineCe:
        loss = cosine_ce_loss(z, all_labels, state.params.class_weights, cfg.loss.temperature);
        break;
      case LossKind::VanillaCe:
        loss = vanilla_ce_loss(z, all_labels, state.params.class_weights);
        break;
      case LossKind::Ocm:
        protos = compute_prototypes(state.bank, num_classes);
        loss = ocm_loss(z, all_labels, protos, cfg.loss.temperature);
        break;
      case LossKind::Oca:
        loss = oca_loss(z, all_labels, state.bank, cfg.loss.temperature);
        break;
    }
    if (!std::isfinite(loss.loss))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

    Tensor gz_g({rows_g, dz});
    for (std::size_t r = 0; r < rows_g; ++r)
      std::copy(loss.grad_z.row(r).begin(), loss.grad_z.row(r).end(), gz_g.row(r).begin());
    ModelGrads grads = backward(state.params, fwd_g.cache, gz_g);
    if (rows_l > 0) {
      Tensor gz_l({rows_l, dz});
      for (std::size_t r = 0; r < rows_l; ++r)
        std::copy(loss.grad_z.row(rows_g + r).begin(), loss.grad_z.row(rows_g + r).end(),
                  gz_l.row(r).begin());
      accumulate(grads, backward(state.params, fwd_l.cache, gz_l));
    }
    if (cmode == ClassifierMode::Learned) {
      Tensor& slot = grads.tensors.back();
      for (std::size_t k = 0; k < slot.size(); ++k) slot[k] += loss.grad_w[k];
    }

    const bool hooked =
        cfg.analysis.hook_every > 0 && step % cfg.analysis.hook_every == 0;
    Tensor w_before;
    Prototypes protos_before;
    if (hooked) {
      if (has_classifier) w_before = state.params.class_weights;
      if (cfg.loss.uses_memory())
        protos_before =
            cfg.loss.kind == LossKind::Ocm ? protos : compute_prototypes(state.bank, num_classes);
    }

    const double lr = lr_at(step, sched);
    sgd_step(state.params, grads, state.opt, lr, cfg);

    if (cfg.loss.uses_memory()) {
      ema_update(state.ema, state.params);
      Tensor z_ema = forward_ema_embed(state.ema, state.params, gpack.rows, res_g);
      bank_push(state.bank, z_ema, gpack.labels);
    }

    if (hooked && sink) {
      if (has_classifier) {
        try {
          GradientStats gs = gradient_stats(loss.grad_w, cfg.analysis.pair_budget,
                                            Rng::derive(cfg.seed, kHookSeedTag, step));
          sink({step, epoch, "grad_cos_sim", {gs.mean_abs_cos}});
          sink({step, epoch, "grad_std", {gs.elementwise_std}});
          sink({step, epoch, "grad_fro", {gs.frobenius}});
          sink({step, epoch, "delta_W", {drift(w_before, state.params.class_weights)}});
        } catch (const std::invalid_argument&) {
          // degenerate gradients (all-zero rows) produce no sample this step
        }
      }
      if (cfg.loss.uses_memory()) {
        Prototypes protos_after = compute_prototypes(state.bank, num_classes);
        Tensor ra, rb;
        if (common_present_rows(protos_before, protos_after, ra, rb))
          sink({step, epoch, "delta_U", {drift(ra, rb)}});
      }
    }

    if (sink && (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == sched.total_steps))) {
      sink({step, epoch, "loss", {loss.loss}});
      sink({step, epoch, "lr", {lr}});
      if (cfg.loss.uses_memory())
        sink({step, epoch, "skipped", {static_cast<double>(loss.skipped)}});
    }

    state.step = step + 1;

    if (pos + 1 == spe && cfg.train_acc_every > 0 && (epoch + 1) % cfg.train_acc_every == 0 &&
        sink) {
      const double acc = classify_split_accuracy(
          state.params, state.has_bank ? &state.bank : nullptr, cfg, dataset, train_idx);
      sink({step, epoch, "train_acc", {acc}});
    }

    if (checkpoint_sink && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
      checkpoint_sink(state);

    if (halt_after_steps > 0 && ++steps_done >= halt_after_steps) break;
  }
  return state;
}

}  // namespace trex
