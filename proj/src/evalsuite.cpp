// SPDX-License-Identifier: Apache-2.0

#include "trex/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "trex/augment.hpp"

namespace trex {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Zero-initialized multinomial logistic regression (with bias column) trained
/// by minibatch SGD with momentum 0.9 and a cosine-decayed learning rate.
Tensor probe_fit(const Tensor& x, const std::vector<std::uint32_t>& labels,
                 std::size_t num_classes, double lr, double wd, std::size_t epochs,
                 std::size_t batch_size, std::uint64_t seed) {
  const std::size_t n = x.rows(), d = x.cols();
  Tensor w({num_classes, d});
  Tensor vel({num_classes, d});
  const std::size_t b = std::min<std::size_t>(std::max<std::size_t>(batch_size, 1), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> row(num_classes);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double lr_e =
        lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                                   static_cast<double>(epochs)));
    Rng rng(Rng::derive(seed, epoch));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

    for (std::size_t start = 0; start < n; start += b) {
      const std::size_t m = std::min(b, n - start);
      Tensor grad({num_classes, d});
      for (std::size_t bi = 0; bi < m; ++bi) {
        const std::size_t r = order[start + bi];
        double mx = -1e300;
        for (std::size_t c = 0; c < num_classes; ++c) {
          row[c] = dot(w.row(c), x.row(r));
          mx = std::max(mx, row[c]);
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < num_classes; ++c) {
          row[c] = std::exp(row[c] - mx);
          sum += row[c];
        }
        for (std::size_t c = 0; c < num_classes; ++c) {
          const double g = row[c] / sum - (c == labels[r] ? 1.0 : 0.0);
          auto xr = x.row(r);
          auto gr = grad.row(c);
          for (std::size_t k = 0; k < d; ++k) gr[k] += g * xr[k];
        }
      }
      for (std::size_t c = 0; c < num_classes; ++c) {
        auto gr = grad.row(c);
        auto wr = w.row(c);
        auto vr = vel.row(c);
        for (std::size_t k = 0; k < d; ++k) {
          const double g = gr[k] / static_cast<double>(m) + wd * wr[k];
          vr[k] = 0.9 * vr[k] + g;
          wr[k] -= lr_e * vr[k];
        }
      }
    }
  }
  return w;
}

double probe_accuracy(const Tensor& w, const Tensor& x,
                      const std::vector<std::uint32_t>& labels,
                      const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i : idx) {
    double best = -1e300;
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < w.rows(); ++c) {
      const double s = dot(w.row(c), x.row(i));
      if (s > best) {
        best = s;
        best_c = c;
      }
    }
    if (best_c == labels[i]) correct++;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  Tensor out({std::max<std::size_t>(idx.size(), 1), x.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  return out;
}

}  // namespace

FeatureSet extract_features(Checkpoint& ckpt, const Dataset& dataset, std::size_t short_side) {
  set_numeric_mode(ckpt.cfg.precision);
  dataset.validate();
  const std::size_t n = dataset.size();
  const std::size_t d = ckpt.cfg.encoder.output_dim;
  FeatureSet fs;
  fs.features = Tensor({n, d});
  fs.labels = dataset.labels;
  fs.splits = dataset.split_tags;
  fs.dataset_name = dataset.name;
  fs.num_classes = dataset.num_classes;
  fs.extraction_hash =
      fnv1a(ckpt.config_json + "|" + dataset.name + "|" + std::to_string(short_side));

  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Tensor batch({m, short_side * short_side * 3});
    parallel_for(m, [&](std::size_t i) {
      Tensor t = eval_transform(to_aug_image(dataset, start + i), short_side,
                                ckpt.cfg.augment.norm_mean, ckpt.cfg.augment.norm_std);
      std::copy(t.data().begin(), t.data().end(), batch.row(i).begin());
    });
    ForwardResult fwd = forward(ckpt.params, batch, short_side, RunMode::Eval, false);
    for (std::size_t i = 0; i < m; ++i)
      std::copy(fwd.x.row(i).begin(), fwd.x.row(i).end(), fs.features.row(start + i).begin());
  }
  return fs;
}

ProbeOutcome linear_probe(const FeatureSet& features, const ProbeConfig& cfg,
                          std::uint64_t seed) {
  if (cfg.trials < 1) throw std::invalid_argument("linear_probe: need at least one trial");
  const std::size_t n = features.features.rows();
  const std::size_t c = features.num_classes;

  // Optional feature normalization, then a constant bias column.
  Tensor x = cfg.l2_normalize_features ? l2_normalize_rows(features.features)
                                       : features.features;
  Tensor xb({n, x.cols() + 1});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(x.row(r).begin(), x.row(r).end(), xb.row(r).begin());
    xb.at(r, x.cols()) = 1.0;
  }

  std::vector<std::size_t> pool, test_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (features.splits[i] == static_cast<std::uint8_t>(Split::Test))
      test_idx.push_back(i);
    else
      pool.push_back(i);
  }
  if (pool.empty() || test_idx.empty())
    throw std::invalid_argument("linear_probe: need non-empty train+val and test splits");

  std::vector<std::vector<std::size_t>> pool_by_class(c);
  for (std::size_t i : pool) pool_by_class[features.labels[i]].push_back(i);
  for (std::size_t k = 0; k < c; ++k)
    if (pool_by_class[k].empty())
      throw std::invalid_argument("linear_probe: class " + std::to_string(k) +
                                  " has no training samples");

  ProbeOutcome out;
  std::vector<std::uint32_t> labels_vec(features.labels.begin(), features.labels.end());

  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t probe_seed = Rng::derive(seed, 0xBE57, s);

    // Stratified re-split of train+val into search-train / search-val.
    std::vector<std::size_t> tr, va;
    for (std::size_t k = 0; k < c; ++k) {
      std::vector<std::size_t> idx = pool_by_class[k];
      Rng rng(Rng::derive(probe_seed, k));
      for (std::size_t i = idx.size() - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
      std::size_t n_val = static_cast<std::size_t>(
          std::floor(cfg.val_fraction * static_cast<double>(idx.size())));
      if (n_val >= idx.size()) n_val = idx.size() - 1;
      for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_val ? va : tr).push_back(idx[i]);
    }
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    for (std::size_t k = 0; k < c; ++k) {
      bool found = false;
      for (std::size_t i : tr)
        if (features.labels[i] == k) {
          found = true;
          break;
        }
      if (!found)
        throw std::invalid_argument("linear_probe: degenerate split, class " +
                                    std::to_string(k) + " missing from train");
    }

    struct Trial {
      double lr = 0.0, wd = 0.0, val_acc = -1.0;
    };
    std::vector<Trial> trials(cfg.trials);
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      Rng rng(Rng::derive(probe_seed, 0x7121, t));
      trials[t].lr = std::exp(rng.uniform(std::log(cfg.lr_min), std::log(cfg.lr_max)));
      trials[t].wd = std::exp(rng.uniform(std::log(cfg.wd_min), std::log(cfg.wd_max)));
    }
    Tensor xtr = gather_rows(xb, tr);
    std::vector<std::uint32_t> ytr(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) ytr[i] = features.labels[tr[i]];

    parallel_for(cfg.trials, [&](std::size_t t) {
      Tensor w = probe_fit(xtr, ytr, c, trials[t].lr, trials[t].wd, cfg.epochs, cfg.batch_size,
                           Rng::derive(probe_seed, 0xF17, t));
      trials[t].val_acc = probe_accuracy(w, xb, labels_vec, va);
    });

    std::size_t best = 0;
    for (std::size_t t = 1; t < cfg.trials; ++t)
      if (trials[t].val_acc > trials[best].val_acc) best = t;  // tie keeps lowest index

    Tensor xpool = gather_rows(xb, pool);
    std::vector<std::uint32_t> ypool(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) ypool[i] = features.labels[pool[i]];
    Tensor w_final = probe_fit(xpool, ypool, c, trials[best].lr, trials[best].wd, cfg.epochs,
                               cfg.batch_size, Rng::derive(probe_seed, 0xF1A));
    out.per_seed_accuracy.push_back(probe_accuracy(w_final, xb, labels_vec, test_idx));
    if (s == 0) {
      out.lr = trials[best].lr;
      out.weight_decay = trials[best].wd;
    }
  }

  double sum = 0.0;
  for (double a : out.per_seed_accuracy) sum += a;
  out.test_accuracy = sum / static_cast<double>(out.per_seed_accuracy.size());
  return out;
}

double log_odds(double p) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("log_odds: accuracy outside [0, 1]");
  return std::log(p / (1.0 - p));
}

TransferReport transfer_report(Checkpoint& ckpt, const std::vector<Dataset>& datasets,
                               const ProbeConfig& cfg, std::uint64_t seed,
                               bool first_is_train_task) {
  if (datasets.empty()) throw std::invalid_argument("transfer_report: no datasets");
  if (first_is_train_task && datasets.size() < 2)
    throw std::invalid_argument("transfer_report: need at least one transfer dataset");

  TransferReport report;
  double lo_sum = 0.0;
  std::size_t lo_count = 0;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    FeatureSet fs = extract_features(ckpt, datasets[i], cfg.short_side);
    ProbeOutcome probe = linear_probe(fs, cfg, Rng::derive(seed, i));

    ReportRow row;
    row.dataset = datasets[i].name;
    row.accuracy = probe.test_accuracy;
    row.transfer = !(first_is_train_task && i == 0);
    row.probe_lr = probe.lr;
    row.probe_wd = probe.weight_decay;

    const std::size_t n_test = datasets[i].indices_of(Split::Test).size();
    const double lo_floor = 1.0 / (2.0 * static_cast<double>(n_test));
    const double clamped = std::clamp(probe.test_accuracy, lo_floor, 1.0 - lo_floor);
    row.clamped = clamped != probe.test_accuracy;
    if (row.clamped) report.clamp_events++;
    row.log_odds_value = log_odds(clamped);

    if (row.transfer) {
      lo_sum += row.log_odds_value;
      lo_count++;
    }
    report.rows.push_back(row);
  }
  report.mean_log_odds = lo_count ? lo_sum / static_cast<double>(lo_count) : 0.0;
  return report;
}

void write_report_csv(const TransferReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_report_csv: cannot open " + path);
  os << "dataset,role,accuracy,log_odds,clamped,probe_lr,probe_wd\n";
  for (const auto& r : report.rows)
    os << r.dataset << ',' << (r.transfer ? "transfer" : "train_task") << ','
       << fmt_double(r.accuracy) << ',' << fmt_double(r.log_odds_value) << ','
       << (r.clamped ? 1 : 0) << ',' << fmt_double(r.probe_lr) << ',' << fmt_double(r.probe_wd)
       << '\n';
  os << "mean_log_odds,," << fmt_double(report.mean_log_odds) << ",,,,\n";
}

void write_report_json(const TransferReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_report_json: cannot open " + path);
  os << "{\n  \"rows\": [\n";
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    os << "    {\"dataset\": \"" << r.dataset << "\", \"role\": \""
       << (r.transfer ? "transfer" : "train_task") << "\", \"accuracy\": "
       << fmt_double(r.accuracy) << ", \"log_odds\": " << fmt_double(r.log_odds_value)
       << ", \"clamped\": " << (r.clamped ? "true" : "false")
       << ", \"probe_lr\": " << fmt_double(r.probe_lr)
       << ", \"probe_wd\": " << fmt_double(r.probe_wd) << "}" << (i + 1 < report.rows.size() ? "," : "")
       << "\n";
  }
  os << "  ],\n  \"mean_log_odds\": " << fmt_double(report.mean_log_odds)
     << ",\n  \"clamp_events\": " << report.clamp_events << "\n}\n";
}

}  // namespace trex
