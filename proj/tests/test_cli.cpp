// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "trex/config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::temp_directory_path() / "trex_cli_test";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TREX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string tiny_config_json(const std::string& run_name, std::uint64_t seed = 3) {
  nlohmann::json doc{
      {"data",
       {{"kind", "synthetic"},
        {"name", "tiny"},
        {"seed", 2},
        {"classes", 4},
        {"train_per_class", 8},
        {"val_per_class", 2},
        {"test_per_class", 4},
        {"image_size", 12}}},
      {"augment",
       {{"global_resolution", 12}, {"local_resolution", 6}, {"n_local", 2}}},
      {"model",
       {{"encoder", {{"pool_grid", 2}, {"hidden_widths", {16}}, {"output_dim", 16}}},
        {"projector", {{"hidden_layers", 1}, {"hidden_dim", 24}, {"bottleneck_dim", 8}}}}},
      {"optimizer",
       {{"batch_size", 8}, {"epochs", 2}, {"warmup_epochs", 1}, {"log_every", 1}}},
      {"eval",
       {{"trials", 3}, {"epochs", 15}, {"batch_size", 64}, {"seeds", 1}, {"short_side", 12}}},
      {"io", {{"output_dir", (kScratch / "runs").string()}, {"run_name", run_name}, {"seed", seed}}}};
  return doc.dump(2);
}

std::string write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << content;
  return path.string();
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::string transfer_spec(const std::string& name, int offset) {
  nlohmann::json doc{{"kind", "synthetic"}, {"name", name},        {"seed", 2},
                     {"classes", 4},        {"train_per_class", 8}, {"val_per_class", 2},
                     {"test_per_class", 4}, {"image_size", 12},     {"family_offset", offset}};
  return doc.dump(2);
}

}  // namespace

TEST_CASE("missing config file exits nonzero") {
  CHECK(run_cli("train --config /nonexistent/cfg.json") != 0);
}

TEST_CASE("train/eval/analyze/report pipeline") {
  fs::remove_all(kScratch);
  const std::string cfg = write_file(kScratch / "tiny.json", tiny_config_json("runA"));
  REQUIRE(run_cli("train --config " + cfg) == 0);

  const fs::path run_dir = kScratch / "runs" / "runA";
  CHECK(fs::exists(run_dir / "resolved-config.json"));
  CHECK(fs::exists(run_dir / "metrics.jsonl"));
  CHECK(fs::exists(run_dir / "final.trxc"));
  CHECK(fs::exists(run_dir / "summary.csv"));

  // the resolved config reproduces the run bit-identically
  {
    nlohmann::json resolved = nlohmann::json::parse(slurp(run_dir / "resolved-config.json"));
    resolved["io"]["run_name"] = "runB";
    const std::string cfg2 = write_file(kScratch / "resolved.json", resolved.dump(2));
    REQUIRE(run_cli("train --config " + cfg2) == 0);
    CHECK(slurp(run_dir / "metrics.jsonl") ==
          slurp(kScratch / "runs" / "runB" / "metrics.jsonl"));
  }

  // eval: training task plus three transfer levels -> 4 rows + the mean line
  const std::string train_spec = write_file(kScratch / "train_task.json", transfer_spec("tiny", 0));
  const std::string l1 = write_file(kScratch / "l1.json", transfer_spec("l1", 1));
  const std::string l2 = write_file(kScratch / "l2.json", transfer_spec("l2", 2));
  const std::string l3 = write_file(kScratch / "l3.json", transfer_spec("l3", 3));
  REQUIRE(run_cli("eval --checkpoint " + (run_dir / "final.trxc").string() + " --data " +
                  train_spec + " " + l1 + " " + l2 + " " + l3) == 0);
  CHECK(fs::exists(run_dir / "report.csv"));
  CHECK(fs::exists(run_dir / "report.json"));
  {
    std::ifstream is(run_dir / "report.csv");
    std::string line;
    std::size_t rows = 0;
    bool has_mean = false;
    while (std::getline(is, line)) {
      if (line.rfind("dataset,", 0) == 0) continue;
      if (line.rfind("mean_log_odds", 0) == 0) {
        has_mean = true;
        continue;
      }
      if (!line.empty()) rows++;
    }
    CHECK(rows == 4);
    CHECK(has_mean);
  }

  // analyze
  REQUIRE(run_cli("analyze --checkpoint " + (run_dir / "final.trxc").string() + " --data " +
                  l1) == 0);
  CHECK(fs::exists(run_dir / "analysis.json"));
  CHECK(fs::exists(run_dir / "analysis.csv"));

  // report merges runs that have been evaluated
  REQUIRE(run_cli("report " + run_dir.string() + " --out " + kScratch.string()) == 0);
  CHECK(fs::exists(kScratch / "summary.csv"));

  // analyze without a checkpoint fails
  CHECK(run_cli("analyze --checkpoint /nonexistent.trxc --data " + l1) != 0);
}

TEST_CASE("every shipped recipe parses against the strict schema") {
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(TREX_RECIPE_DIR)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(trex::load_run_config(entry.path().string()));
    seen++;
  }
  CHECK(seen >= 20);
}

TEST_CASE("unknown keys are rejected with their path") {
  nlohmann::json doc{{"augment", {{"blur_probz", 0.5}}}};
  try {
    trex::parse_run_config(doc);
    FAIL("expected a schema error");
  } catch (const trex::ConfigError& e) {
    CHECK(std::string(e.what()).find("augment.blur_probz") != std::string::npos);
  }
}
