#pragma once

// The work behind each CLI subcommand, kept out of main so tests can drive it.

#include "cdadp/tabular.hpp"
#include "cdadp/trainer.hpp"
#include "run_config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cdadp::cli {

// $CDADP_OUT_ROOT, or "runs" when unset.
std::filesystem::path output_root();

// <root>/<kind>_<label>_seed<seed>_<hash prefix>; deterministic for a given config.
std::filesystem::path default_run_dir(const std::string& kind, const std::string& label, const RunConfig& cfg);

// Columns: t, states, controls, then value and bound for each constraint at t + 1.
void write_trajectory_csv(const std::filesystem::path& path, const SystemModel& model, const EvalReport& report);

// Training into `dir`: config.resolved, metrics.jsonl, diagnostics.jsonl,
// checkpoints/, trajectories/final.csv, plots/training_curve.svg, summary.json.
TrainResult run_training(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& log);

struct EvalRequest {
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> checkpoint;  // default: latest under run_dir/checkpoints
  std::optional<std::size_t> steps;                 // default: eval.final_steps
  std::optional<std::uint64_t> seed;                // default: train.eval_seed
};

struct EvalOutcome {
  EvalReport report;
  std::filesystem::path checkpoint;
  std::filesystem::path csv;
  bool config_hash_matches = true;
};

// Reloads config.resolved from the run directory; throws ConfigError when the
// checkpointed network does not fit the configured task.
EvalOutcome run_eval(const EvalRequest& req, std::ostream& log);

struct VariantSummary {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_cost;        // per seed
  std::vector<double> final_max_excess;  // per seed, max over constraints
  std::vector<std::vector<MetricsRow>> metrics;
  double initial_cost = 0.0;
};

double median(std::vector<double> v);

// Trains every variant over `seeds` consecutive seeds starting at train.seed.
// Each run lands in dir/<label>/seed<k>; dir gets summary.json and plots.
std::vector<VariantSummary> run_compare(const RunConfig& cfg, const std::vector<AlgoVariant>& variants,
                                        std::size_t seeds, const std::filesystem::path& dir, std::ostream& log);

struct TabularRequest {
  std::optional<std::filesystem::path> mdp_file;
  std::size_t random_count = 0;
  std::uint64_t seed = 1;
  tabular::VerifyOptions options;
  std::optional<TerminalDiscount> terminal;  // overrides the file or generator default
};

struct TabularOutcome {
  std::size_t instances = 0;
  std::size_t passed = 0;
  std::optional<std::filesystem::path> witness;  // first failing MDP, written next to the report
};

TabularOutcome run_verify_tabular(const TabularRequest& req, const std::filesystem::path& dir, std::ostream& log);

}  // namespace cdadp::cli
