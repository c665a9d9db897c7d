// SPDX-License-Identifier: Apache-2.0

#ifndef TREX_CONFIG_HPP
#define TREX_CONFIG_HPP

#include <string>

#include <json.hpp>

#include "trex/analysis.hpp"
#include "trex/dataio.hpp"
#include "trex/evalsuite.hpp"
#include "trex/optim.hpp"

namespace trex {

/// Schema violation with the offending key path (e.g. "augment.blur_prob").
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | trxd
  SyntheticSpec synthetic;
  std::string path;  // .trxd file when kind == trxd
};

struct IoConfig {
  std::string output_dir = "runs";
  std::string run_name = "run";
  std::uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
};

/// The whole run document: data, augment, model, objective, optimizer, eval,
/// analysis, io. Unknown keys are rejected.
struct RunConfig {
  DataConfig data;
  TrainConfig train;  // augment/model/objective/optimizer/analysis subtrees
  ProbeConfig probe;  // eval subtree
  IoConfig io;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

/// Serializes with every default materialized; feeding the result back
/// reproduces the run bit-identically.
nlohmann::json to_json(const RunConfig& cfg);

/// Generates or loads the dataset named by a data config.
Dataset materialize_dataset(const DataConfig& data);

/// Loads --data arguments: a .trxd file, or a JSON synthetic spec document.
Dataset load_dataset_argument(const std::string& path);

}  // namespace trex

#endif  // TREX_CONFIG_HPP
