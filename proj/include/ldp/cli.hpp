#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldp/chain.hpp"
#include "ldp/conjugate.hpp"
#include "ldp/estimate.hpp"
#include "ldp/simulate.hpp"

namespace ldp::cli {

inline const std::vector<std::string> kSubcommands = {"chain-info", "rates",   "bridge-sample",
                                                      "infconv",    "contract", "mc-verify"};

struct RunOptions {
  std::string subcommand;
  std::filesystem::path config;
  std::filesystem::path out;
  unsigned threads = 1;
  std::optional<std::filesystem::path> cache;
  std::optional<std::string> seed_override;  // value of LDP_SEED, if set
};

/// Validated experiment configuration.
struct ExperimentConfig {
  ExperimentConfig(nlohmann::json raw_config, GeneratorMatrix q) : raw(std::move(raw_config)), chain(std::move(q)) {}

  nlohmann::json raw;  // effective config (seed override applied)
  GeneratorMatrix chain;
  double t0 = 1.0;
  ObservableMode mode = ObservableMode::Occupation;
  std::uint64_t seed = 0;
  std::size_t samples = 10000;  // N, bridge samples per pair
  std::uint64_t max_attempts = 1'000'000;
  InfConvSettings infconv;
  ConjugateSettings conjugate;
  double gap_tolerance = 1e-6;
  std::string hash;  // FNV-1a of the canonical dump of `raw`
};

ExperimentConfig parse_config(const nlohmann::json& doc, const std::optional<std::string>& seed_override = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& seed_override = {});

std::string config_hash(const nlohmann::json& doc);

/// Runs one subcommand and writes <sub>.json, <sub>.csv and <sub>.schema.json
/// into `out`. On failure writes error.json and returns a nonzero status.
int run(const RunOptions& options);

/// Command-line entry point.
int main(int argc, char** argv);

}  // namespace ldp::cli
