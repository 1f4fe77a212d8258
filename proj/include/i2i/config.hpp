#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "i2i/eval.hpp"
#include "i2i/objective.hpp"

namespace i2i {

struct RunConfig {
  TrainConfig train;
  EvalSettings eval;
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "run";
  std::size_t checkpoint_every = 1000;
  std::size_t sample_every = 500;
  bool log_wall_time = false;
};

/// Parses a config document. Unknown keys, wrong types and invalid values
/// raise ConfigError naming the key path; absent keys take their defaults.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every field with its resolved value; parse_run_config(to_json(c)) == c.
std::string to_json(const RunConfig& config);

}  // namespace i2i
