// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trex/analysis.hpp"
#include "trex/config.hpp"
#include "trex/evalsuite.hpp"
#include "trex/optim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              std::optional<std::uint64_t> seed_override) {
  trex::RunConfig cfg = trex::load_run_config(config_path);
  if (!out_override.empty()) cfg.io.output_dir = out_override;
  if (seed_override) {
    cfg.io.seed = *seed_override;
    cfg.train.seed = *seed_override;
  }

  const fs::path run_dir = fs::path(cfg.io.output_dir) / cfg.io.run_name;
  fs::create_directories(run_dir);

  const json resolved = trex::to_json(cfg);
  const std::string config_json = resolved.dump(2);
  {
    std::ofstream os(run_dir / "resolved-config.json", std::ios::binary);
    os << config_json << "\n";
  }

  trex::Dataset dataset = trex::materialize_dataset(cfg.data);
  trex::MetricsWriter metrics((run_dir / "metrics.jsonl").string());

  trex::CheckpointSink periodic = [&](const trex::Checkpoint& c) {
    trex::save_checkpoint(c, (run_dir / ("checkpoint-" + std::to_string(c.step) + ".trxc")).string());
  };
  trex::Checkpoint final_ckpt =
      trex::train(cfg.train, dataset, config_json, metrics.sink(), nullptr, 0,
                  cfg.train.checkpoint_every > 0 ? periodic : trex::CheckpointSink{});
  trex::save_checkpoint(final_ckpt, (run_dir / "final.trxc").string());
  metrics.write_summary_csv((run_dir / "summary.csv").string());
  std::cout << "run complete: " << run_dir.string() << " (" << final_ckpt.step << " steps)\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::vector<std::string>& data_paths,
             const std::string& out_dir, std::optional<std::uint64_t> seed_override) {
  trex::Checkpoint ckpt = trex::load_checkpoint(checkpoint_path);
  trex::RunConfig rc = trex::parse_run_config(json::parse(ckpt.config_json));
  const std::uint64_t seed = seed_override ? *seed_override : rc.io.seed;

  std::vector<trex::Dataset> datasets;
  for (const auto& p : data_paths) datasets.push_back(trex::load_dataset_argument(p));

  trex::TransferReport report =
      trex::transfer_report(ckpt, datasets, rc.probe, seed, /*first_is_train_task=*/true);

  const fs::path out = out_dir.empty() ? fs::path(checkpoint_path).parent_path() : fs::path(out_dir);
  fs::create_directories(out);
  trex::write_report_csv(report, (out / "report.csv").string());
  trex::write_report_json(report, (out / "report.json").string());
  std::cout << "mean log odds over " << (datasets.size() - 1)
            << " transfer datasets: " << fmt_double(report.mean_log_odds) << "\n";
  return 0;
}

int cmd_analyze(const std::string& checkpoint_path, const std::vector<std::string>& data_paths,
                const std::string& out_dir) {
  trex::Checkpoint ckpt = trex::load_checkpoint(checkpoint_path);
  trex::RunConfig rc = trex::parse_run_config(json::parse(ckpt.config_json));
  const trex::AnalysisConfig& acfg = rc.train.analysis;

  const fs::path out = out_dir.empty() ? fs::path(checkpoint_path).parent_path() : fs::path(out_dir);
  fs::create_directories(out);

  json doc;
  std::ofstream csv((out / "analysis.csv").string(), std::ios::binary);
  csv << "dataset,intra_class_distance,all_sample_distance,sparsity_ratio,coding_length,"
         "redundancy,zero_variance_columns\n";

  for (const auto& p : data_paths) {
    trex::Dataset ds = trex::load_dataset_argument(p);
    trex::FeatureSet fs_all = trex::extract_features(ckpt, ds, rc.probe.short_side);

    // Features are analyzed on the test split; small sets without one use all.
    std::vector<std::size_t> idx = ds.indices_of(trex::Split::Test);
    if (idx.empty()) {
      idx.resize(ds.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    }
    trex::Tensor x({idx.size(), fs_all.features.cols()});
    std::vector<std::uint32_t> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = fs_all.features.row(idx[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
      labels[i] = fs_all.labels[idx[i]];
    }

    const double intra = trex::pairwise_distance(x, labels, trex::DistanceMode::IntraClass,
                                                 acfg.pair_budget);
    const double all = trex::pairwise_distance(x, labels, trex::DistanceMode::AllSample,
                                               acfg.pair_budget);
    const double sparsity = trex::sparsity_ratio(x, acfg.sparsity_eps);
    const double coding = trex::coding_length(x, acfg.coding_precision_sq);
    const trex::RedundancyResult red = trex::redundancy(x);
    const trex::Tensor spectrum = trex::singular_spectrum(x);

    json entry{{"intra_class_distance", intra},
               {"all_sample_distance", all},
               {"sparsity_ratio", sparsity},
               {"coding_length", coding},
               {"redundancy", red.value},
               {"zero_variance_columns", red.zero_variance_columns}};
    json spec = json::array();
    for (double v : spectrum.data()) spec.push_back(v);
    entry["singular_spectrum"] = spec;
    doc[ds.name] = entry;

    csv << ds.name << ',' << fmt_double(intra) << ',' << fmt_double(all) << ','
        << fmt_double(sparsity) << ',' << fmt_double(coding) << ',' << fmt_double(red.value)
        << ',' << red.zero_variance_columns << '\n';

    std::ofstream sp((out / ("spectrum-" + ds.name + ".csv")).string(), std::ios::binary);
    sp << "index,normalized_singular_value\n";
    for (std::size_t i = 0; i < spectrum.size(); ++i)
      sp << i << ',' << fmt_double(spectrum[i]) << '\n';
  }

  std::ofstream js((out / "analysis.json").string(), std::ios::binary);
  js << doc.dump(2) << "\n";
  std::cout << "analysis written to " << out.string() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  const fs::path out = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  fs::create_directories(out);
  std::ofstream os((out / "summary.csv").string(), std::ios::binary);
  os << "run,train_task_accuracy,mean_log_odds,final_loss\n";
  for (const auto& dir : run_dirs) {
    const fs::path report_path = fs::path(dir) / "report.json";
    if (!fs::exists(report_path))
      throw std::runtime_error("report: missing " + report_path.string() +
                               " (run `trex eval` first)");
    json rep;
    {
      std::ifstream is(report_path);
      is >> rep;
    }
    double train_acc = 0.0;
    for (const auto& row : rep.at("rows"))
      if (row.at("role") == "train_task") train_acc = row.at("accuracy").get<double>();
    const double mean_lo = rep.at("mean_log_odds").get<double>();

    double final_loss = std::nan("");
    const fs::path metrics_path = fs::path(dir) / "metrics.jsonl";
    if (fs::exists(metrics_path)) {
      std::ifstream is(metrics_path);
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        if (rec.at("name") == "loss") final_loss = rec.at("values")[0].get<double>();
      }
    }
    os << fs::path(dir).filename().string() << ',' << fmt_double(train_acc) << ','
       << fmt_double(mean_lo) << ',' << fmt_double(final_loss) << '\n';
  }
  std::cout << "summary written to " << (out / "summary.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trex: desk-scale supervised representation-learning lab"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_dir;
  std::vector<std::string> data_paths, run_dirs;
  std::optional<std::uint64_t> seed_override;

  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out_dir, "override io.output_dir");
  train->add_option("--seed", seed_override, "override io.seed");

  auto* eval = app.add_subcommand("eval", "linear-probe transfer evaluation");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint (.trxc)")->required();
  eval->add_option("--data", data_paths,
                   "datasets: first is the training task (.trxd or synthetic spec .json)")
      ->required();
  eval->add_option("--out", out_dir, "report directory");
  eval->add_option("--seed", seed_override, "probe seed override");

  auto* analyze = app.add_subcommand("analyze", "feature-statistics analysis");
  analyze->add_option("--checkpoint", checkpoint_path, "checkpoint (.trxc)")->required();
  analyze->add_option("--data", data_paths, "datasets to analyze")->required();
  analyze->add_option("--out", out_dir, "output directory");

  auto* report = app.add_subcommand("report", "merge runs into a summary table");
  report->add_option("runs", run_dirs, "run directories (need report.json from eval)")
      ->required();
  report->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train)) return cmd_train(config_path, out_dir, seed_override);
    if (app.got_subcommand(eval)) return cmd_eval(checkpoint_path, data_paths, out_dir, seed_override);
    if (app.got_subcommand(analyze)) return cmd_analyze(checkpoint_path, data_paths, out_dir);
    if (app.got_subcommand(report)) return cmd_report(run_dirs, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
