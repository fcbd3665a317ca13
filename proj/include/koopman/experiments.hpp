#pragma once

#include "koopman/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace koopman::experiments {

struct RunOptions {
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;  // overrides the config seed
  int workers = 1;
};

struct Summary {
  nlohmann::ordered_json json;
  bool pass = true;
};

/// Names of the available experiments.
std::vector<std::string> experiment_names();

/// Published schema of the experiment configs (keys and defaults).
nlohmann::ordered_json config_schema();

/// Run one experiment from a validated config. Writes the experiment's CSV
/// artifacts and summary.json into opts.out_dir and returns the summary.
/// Throws InvalidInput for malformed configs (including unknown keys).
Summary run_experiment(const nlohmann::json& config, const RunOptions& opts);

/// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const RVec& x, const RVec& y);

}  // namespace koopman::experiments
