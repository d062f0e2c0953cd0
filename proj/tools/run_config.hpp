#pragma once

// Run configuration: a flat `key = value` file with dotted keys, command-line
// overrides, and a resolved snapshot that reloads to the same run.

#include "cdadp/trainer.hpp"
#include "cdadp/vehicle.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdadp::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string task = "vehicle";  // vehicle | double_integrator
  TrainConfig train;
  vehicle::VehicleParams vehicle;
  std::size_t final_eval_steps = 500;
  std::vector<std::string> compare_algorithms = {"cdadp", "tradp", "gpi"};
  std::size_t compare_seeds = 5;
};

// Applies one `key = value` assignment; throws ConfigError for unknown keys
// or unparsable values.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// `origin` names the source in diagnostics ("file:line").
void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin);
void apply_file(RunConfig& cfg, const std::filesystem::path& path);
// Parses "key=value".
void apply_override(RunConfig& cfg, const std::string& assignment);

// Every key with its current value, one per line, in a stable order.
std::string resolved_text(const RunConfig& cfg);
std::vector<std::string> known_keys();
std::string config_hash(const RunConfig& cfg);

Task make_task(const RunConfig& cfg);

// "cdadp", "gpi", "tradp", "ptradp" or "ptradp:<eta>".
struct AlgoVariant {
  Algorithm algorithm = Algorithm::Cdadp;
  double eta = -1.0;  // < 0: keep the configured eta
  std::string label;
};
AlgoVariant parse_algo_variant(const std::string& text);

}  // namespace cdadp::cli
