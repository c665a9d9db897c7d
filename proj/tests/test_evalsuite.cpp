// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "trex/config.hpp"
#include "trex/evalsuite.hpp"

using trex::FeatureSet;
using trex::ProbeConfig;
using trex::Tensor;

namespace {

/// Synthetic feature sets: per-class Gaussian blobs with adjustable spread.
FeatureSet blob_features(std::size_t classes, std::size_t per_class, std::size_t dim,
                         double spread, std::uint64_t seed, double test_fraction = 0.25) {
  FeatureSet fs;
  fs.num_classes = classes;
  fs.dataset_name = "blobs";
  const std::size_t n = classes * per_class;
  fs.features = Tensor({n, dim});
  trex::Rng rng(seed);
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (auto& c : centers)
    for (auto& v : c) v = rng.normal() * 2.0;
  std::size_t i = 0;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k, ++i) {
      for (std::size_t d = 0; d < dim; ++d)
        fs.features.at(i, d) = centers[c][d] + spread * rng.normal();
      fs.labels.push_back(static_cast<std::uint32_t>(c));
      const double u = rng.uniform();
      fs.splits.push_back(u < test_fraction ? 2 : (u < test_fraction + 0.15 ? 1 : 0));
    }
  return fs;
}

ProbeConfig quick_probe() {
  ProbeConfig cfg;
  cfg.trials = 6;
  cfg.epochs = 30;
  cfg.seeds = 1;
  cfg.batch_size = 128;
  return cfg;
}

}  // namespace

TEST_CASE("log odds closed forms and antisymmetry") {
  CHECK(trex::log_odds(0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(trex::log_odds(0.9) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
  trex::Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const double p = rng.uniform(0.01, 0.99);
    CHECK(std::abs(trex::log_odds(1.0 - p) + trex::log_odds(p)) <= 1e-12);
  }
  CHECK(trex::log_odds(0.2) < trex::log_odds(0.3));
  CHECK_THROWS_AS(trex::log_odds(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(trex::log_odds(1.1), std::invalid_argument);
}

TEST_CASE("mean log odds reproduces the published transfer row") {
  // 13 per-dataset accuracies of a reference model and its mean-LO column
  const double accs[13] = {71.1, 67.2, 63.2, 62.6, 57.6, 62.5, 67.4,
                           77.7, 97.7, 95.6, 88.9, 78.7, 66.0};
  double sum = 0.0;
  for (double a : accs) sum += trex::log_odds(a / 100.0);
  CHECK(std::abs(sum / 13.0 - 1.256) <= 0.01);
}

TEST_CASE("probe reaches full accuracy on linearly separable features") {
  FeatureSet fs = blob_features(3, 60, 8, 0.05, 11);
  trex::ProbeOutcome out = trex::linear_probe(fs, quick_probe(), 5);
  CHECK(out.test_accuracy == doctest::Approx(1.0));
}

TEST_CASE("probe lands at chance level on shuffled labels") {
  FeatureSet fs = blob_features(4, 400, 6, 0.05, 13);
  // break the feature-label link
  trex::Rng rng(17);
  for (std::size_t i = fs.labels.size() - 1; i > 0; --i)
    std::swap(fs.labels[i], fs.labels[rng.uniform_int(i + 1)]);

  std::size_t n_test = 0;
  for (auto s : fs.splits)
    if (s == 2) n_test++;
  REQUIRE(n_test >= 300);

  trex::ProbeOutcome out = trex::linear_probe(fs, quick_probe(), 19);
  const double p = 1.0 / 4.0;
  const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n_test));
  CHECK(std::abs(out.test_accuracy - p) <= 3.0 * sigma + 0.02);
}

TEST_CASE("l2 flag makes the probe invariant to per-sample positive rescaling") {
  FeatureSet fs = blob_features(3, 40, 6, 0.3, 23);
  ProbeConfig cfg = quick_probe();
  cfg.l2_normalize_features = true;
  trex::ProbeOutcome base = trex::linear_probe(fs, cfg, 31);

  FeatureSet scaled = fs;
  trex::Rng rng(29);
  for (std::size_t r = 0; r < scaled.features.rows(); ++r) {
    const double s = rng.uniform(0.2, 7.0);
    for (std::size_t k = 0; k < scaled.features.cols(); ++k) scaled.features.at(r, k) *= s;
  }
  trex::ProbeOutcome after = trex::linear_probe(scaled, cfg, 31);
  CHECK(after.test_accuracy == doctest::Approx(base.test_accuracy));
}

TEST_CASE("probe results are reproducible for a fixed seed") {
  FeatureSet fs = blob_features(3, 40, 6, 0.5, 37);
  ProbeConfig cfg = quick_probe();
  trex::ProbeOutcome a = trex::linear_probe(fs, cfg, 41);
  trex::ProbeOutcome b = trex::linear_probe(fs, cfg, 41);
  CHECK(a.test_accuracy == b.test_accuracy);
  CHECK(a.lr == b.lr);
  CHECK(a.weight_decay == b.weight_decay);
}

TEST_CASE("probe rejects degenerate splits") {
  FeatureSet fs = blob_features(3, 10, 4, 0.5, 43);
  for (auto& l : fs.labels)
    if (l == 2) l = 1;  // class 2 has no samples at all
  CHECK_THROWS_AS(trex::linear_probe(fs, quick_probe(), 1), std::invalid_argument);
}

namespace {

trex::Checkpoint quick_checkpoint(trex::Dataset& ds_out) {
  trex::RunConfig rc;
  rc.io.seed = 5;
  rc.io.precision = "f64";
  rc.train.encoder.pool_grid = 2;
  rc.train.encoder.hidden_widths = {8};
  rc.train.encoder.output_dim = 8;
  rc.train.projector.hidden_layers = 1;
  rc.train.projector.hidden_dim = 12;
  rc.train.projector.bottleneck_dim = 6;
  rc.train.batch_size = 8;
  rc.train.epochs = 2;
  rc.train.warmup_epochs = 1;
  trex::apply_preset(rc.train.augment);
  rc.train.augment.global_resolution = 8;
  rc.train.augment.local_resolution = 4;
  rc.train.augment.n_local = 2;
  rc.data.synthetic.num_classes = 4;
  rc.data.synthetic.train_per_class = 8;
  rc.data.synthetic.val_per_class = 2;
  rc.data.synthetic.test_per_class = 4;
  rc.data.synthetic.image_size = 8;
  rc.probe.short_side = 8;

  ds_out = trex::materialize_dataset(rc.data);
  const std::string json = trex::to_json(rc).dump(2);
  trex::RunConfig parsed = trex::parse_run_config(nlohmann::json::parse(json));
  return trex::train(parsed.train, ds_out, json);
}

}  // namespace

TEST_CASE("extract_features is deterministic and exposes encoder features") {
  trex::Dataset ds;
  trex::Checkpoint ckpt = quick_checkpoint(ds);
  trex::FeatureSet a = trex::extract_features(ckpt, ds, 8);
  trex::FeatureSet b = trex::extract_features(ckpt, ds, 8);
  CHECK(a.features.cols() == 8);  // encoder output_dim, not the bottleneck
  CHECK(a.features.rows() == ds.size());
  for (std::size_t i = 0; i < a.features.size(); ++i) CHECK(a.features[i] == b.features[i]);
}

TEST_CASE("transfer report on a single transfer dataset") {
  trex::Dataset ds;
  trex::Checkpoint ckpt = quick_checkpoint(ds);
  ProbeConfig cfg = quick_probe();
  cfg.short_side = 8;
  trex::TransferReport rep =
      trex::transfer_report(ckpt, {ds}, cfg, 3, /*first_is_train_task=*/false);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.mean_log_odds == doctest::Approx(rep.rows[0].log_odds_value));
  CHECK(rep.rows[0].transfer);
}
