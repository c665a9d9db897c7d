// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_EVALSUITE_HPP
#define TREX_EVALSUITE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "trex/dataio.hpp"
#include "trex/numkit.hpp"
#include "trex/optim.hpp"

namespace trex {

/// Frozen-encoder features for one dataset, extracted in eval mode with the
/// deterministic eval transform (no augmentation). One row per sample.
struct FeatureSet {
  Tensor features;  // N x d
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> splits;
  std::string dataset_name;
  std::size_t num_classes = 0;
  std::uint64_t extraction_hash = 0;
};

struct ProbeConfig {
  std::size_t trials = 30;  // random-search budget over (lr, weight decay)
  double lr_min = 1e-2, lr_max = 1e2;        // log-uniform
  double wd_min = 1e-10, wd_max = 1e-6;      // log-uniform
  std::size_t epochs = 100;
  std::size_t batch_size = 1024;
  bool l2_normalize_features = true;
  std::size_t seeds = 5;      // repeat count, mean reported
  double val_fraction = 0.2;  // of train+val, re-sampled per seed
  std::size_t short_side = 32;
};

/// Projector and classifier are discarded: features are encoder outputs.
FeatureSet extract_features(Checkpoint& ckpt, const Dataset& dataset, std::size_t short_side);

struct ProbeOutcome {
  double test_accuracy = 0.0;  // mean over seeds
  double lr = 0.0;             // chosen pair of the first seed
  double weight_decay = 0.0;
  std::vector<double> per_seed_accuracy;
};

/// Multinomial logistic regression by SGD with momentum: random search over
/// (lr, wd) scored on a re-sampled val split, best pair retrained on
/// train+val, accuracy reported on test. Repeated over cfg.seeds.
ProbeOutcome linear_probe(const FeatureSet& features, const ProbeConfig& cfg,
                          std::uint64_t seed);

/// ln(p / (1 - p)). Throws outside [0, 1].
double log_odds(double p);

struct ReportRow {
  std::string dataset;
  double accuracy = 0.0;
  double log_odds_value = 0.0;
  bool transfer = true;  // the training task is reported separately as top-1
  bool clamped = false;  // endpoint accuracy clamped before the log odds
  double probe_lr = 0.0;
  double probe_wd = 0.0;
};

struct TransferReport {
  std::vector<ReportRow> rows;
  double mean_log_odds = 0.0;  // over transfer rows
  std::size_t clamp_events = 0;
};

/// Probes every dataset. When first_is_train_task is set the first dataset is
/// the training task (excluded from the mean log odds). Endpoint accuracies
/// are clamped to [1/(2 N_test), 1 - 1/(2 N_test)] and flagged.
TransferReport transfer_report(Checkpoint& ckpt, const std::vector<Dataset>& datasets,
                               const ProbeConfig& cfg, std::uint64_t seed,
                               bool first_is_train_task = true);

void write_report_csv(const TransferReport& report, const std::string& path);
void write_report_json(const TransferReport& report, const std::string& path);

}  // namespace trex

#endif  // TREX_EVALSUITE_HPP
