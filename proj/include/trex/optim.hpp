// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_OPTIM_HPP
#define TREX_OPTIM_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trex/analysis.hpp"
#include "trex/augment.hpp"
#include "trex/dataio.hpp"
#include "trex/nnmodel.hpp"
#include "trex/objectives.hpp"

namespace trex {

struct TrainConfig {
  double base_lr = 0.1;
  std::size_t batch_size = 256;
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 10;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;

  LossConfig loss;
  AugmentConfig augment;
  EncoderConfig encoder;
  ProjectorConfig projector;
  PredictorConfig predictor;

  std::size_t log_every = 10;       // steps
  std::size_t checkpoint_every = 0; // steps, 0 = final only
  std::size_t train_acc_every = 1;  // epochs, 0 = off
  AnalysisConfig analysis;
  NumericMode precision = NumericMode::f32;
};

struct LrSchedule {
  double peak_lr = 0.0;  // base_lr * batch_size / 256
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;
};

LrSchedule make_schedule(const TrainConfig& cfg, std::size_t steps_per_epoch);

/// Linear ramp from 0 to peak over the warmup, then cosine decay to 0 at
/// total_steps. Continuous at the junction.
double lr_at(std::size_t step, const LrSchedule& sched);

struct OptState {
  std::vector<Tensor> velocity;  // aligned with trainable_params order
};

OptState make_opt_state(ModelParams& params);

/// v <- momentum * v + (grad + wd * param); param <- param - lr * v.
/// Weight decay skips batch-norm gamma/beta; a frozen classifier is skipped
/// entirely (its gradients are discarded).
void sgd_step(ModelParams& params, const ModelGrads& grads, OptState& state, double lr,
              const TrainConfig& cfg);

struct MetricRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::string name;
  std::vector<double> values;
};

using MetricSink = std::function<void(const MetricRecord&)>;

/// JSONL metric stream plus a last-value summary CSV. All formatting is
/// deterministic (%.17g), so identical runs produce identical bytes.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& jsonl_path);
  ~MetricsWriter();

  void append(const MetricRecord& rec);
  void write_summary_csv(const std::string& path) const;
  MetricSink sink();

 private:
  struct Impl;
  Impl* impl_;
};

std::string format_metric_jsonl(const MetricRecord& rec);

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;
  std::string config_json;  // resolved run config, embedded verbatim
  TrainConfig cfg;

  ModelParams params;
  OptState opt;
  bool has_ema = false;
  EmaShadow ema;
  bool has_bank = false;
  MemoryBank bank;
};

/// Binary checkpoint file, magic "TRXC" (implemented in checkpoint.cpp).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

using CheckpointSink = std::function<void(const Checkpoint&)>;

/// Runs the full training loop: multi-crop batching, per-resolution forward
/// groups, loss + backward, SGD, EMA updates and bank pushes for prototype
/// objectives, metric logging and analysis hooks. Deterministic given the
/// config seed. `resume` continues an interrupted run bit-identically;
/// `halt_after_steps` (0 = off) stops early and returns the checkpoint.
Checkpoint train(const TrainConfig& cfg, const Dataset& dataset, const std::string& config_json,
                 const MetricSink& sink = {}, const Checkpoint* resume = nullptr,
                 std::size_t halt_after_steps = 0,
                 const CheckpointSink& checkpoint_sink = {});

/// Classifier accuracy of the current model over the train split, using the
/// deterministic eval transform (diagnostic logged during training).
double train_split_accuracy(Checkpoint& ckpt, const Dataset& dataset);

}  // namespace trex

#endif  // TREX_OPTIM_HPP
