#pragma once

// Training loop: a pool of agents rolls the policy out on the model, the
// value network is fitted to the returns, and the policy takes one step of
// the selected algorithm per iteration.

#include "cdadp/dynamics.hpp"
#include "cdadp/netcore.hpp"
#include "cdadp/rollout.hpp"
#include "cdadp/trsolver.hpp"
#include "cdadp/vehicle.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cdadp {

enum class Algorithm {
  Cdadp,   // constrained trust-region step with feasibility recovery
  Gpi,     // plain gradient step on the policy
  Tradp,   // trust-region step without constraints
  Ptradp,  // penalty step with fixed eta, always
};

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

struct TrainConfig {
  Algorithm algorithm = Algorithm::Cdadp;
  std::size_t horizon = 30;             // N: rollouts take N + 1 steps
  std::size_t constraint_samples = 10;  // M
  double gamma = 0.98;
  double delta_a = 0.003 * 0.003 * 0.003;
  double delta_b = 0.006 * 0.006 * 0.006;
  double eta = 0.8;
  std::size_t agents = 256;
  double critic_lr = 8e-4;
  int critic_epochs = 1;
  double gpi_actor_lr = 2e-4;
  std::size_t iterations = 2000;
  std::uint64_t seed = 1;
  TerminalDiscount terminal = TerminalDiscount::PowerN;

  double metric_damping = 0.01;
  MetricSolve metric_solve = MetricSolve::LowRank;
  CgOptions cg;
  bool prioritize_violated = false;

  std::size_t hidden_layers = 5;
  std::size_t hidden_width = 32;
  bool linear_policy = false;  // single affine policy layer, for linear models

  std::size_t eval_steps = 400;
  std::uint64_t eval_seed = 7;
  std::size_t eval_every = 1;  // 0: only after the last iteration
  double eval_discount = 1.0;

  std::size_t max_episode_steps = 0;  // 0: agents only reset when leaving the domain
  std::size_t checkpoint_every = 0;   // 0: only the final checkpoint
  bool record_wall_time = true;
  std::size_t threads = 1;

  void validate() const;
};

// A model plus the state boxes that define where agents start and where
// they may stay.
struct Task {
  std::string name;
  std::shared_ptr<const SystemModel> model;
  Eigen::VectorXd sample_lo, sample_hi;  // reset distribution (uniform)
  Eigen::VectorXd domain_lo, domain_hi;  // agents outside are reset
  std::vector<double> control_scale;     // policy output multipliers

  bool in_domain(const Eigen::VectorXd& x) const;
};

// Circle tracking; agents start in a narrow box and are reset once they
// leave a wider one.
Task vehicle_task(const vehicle::VehicleParams& params = {});

// Double integrator without state constraints, starts in [-1, 1]^2.
Task double_integrator_task();

NetworkSpec policy_spec(const Task& task, const TrainConfig& cfg);
NetworkSpec value_spec(const Task& task, const TrainConfig& cfg);

struct AgentPool {
  std::vector<Eigen::VectorXd> states;
  std::vector<std::size_t> episode_steps;
  std::mt19937_64 rng;
};

Eigen::VectorXd sample_state(const Task& task, std::mt19937_64& rng);
AgentPool init_pool(const Task& task, const TrainConfig& cfg);

struct ConstraintRef {
  std::size_t agent = 0;
  std::size_t step = 0;
  std::size_t constraint = 0;
  double value = 0.0;
  double bound = 0.0;
};

// Indices of up to `count` distinct buffer entries, uniformly at random;
// with `prioritize_violated`, violated entries are drawn first.
std::vector<std::size_t> sample_constraints(const std::vector<ConstraintRef>& buffer, std::size_t count,
                                            std::mt19937_64& rng, bool prioritize_violated);

struct EvalReport {
  double cost = 0.0;
  std::vector<double> max_excess;  // per constraint, -inf when nothing was evaluated
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> controls;
  std::vector<std::vector<ConstraintEval>> constraints;  // on states[t + 1]
  std::optional<std::size_t> failed_at;

  bool violated(double tol = 0.0) const;
};

// Closed-loop simulation accumulating discount^t * l. A trajectory leaving the
// model domain stops early and records the failing step.
EvalReport evaluate(const SystemModel& model, const Network& policy, const Eigen::VectorXd& x0, std::size_t steps,
                    double discount = 1.0);

Eigen::VectorXd eval_start_state(const Task& task, const TrainConfig& cfg);

struct MetricsRow {
  std::size_t iter = 0;
  double mean_G = 0.0;
  std::optional<double> eval_cost;
  std::vector<double> excess;
  std::string branch;
  double wall_ms = 0.0;
  std::optional<std::size_t> eval_failed_at;
};

std::string to_json_line(const MetricsRow& row);

struct StepDiagnostics {
  std::size_t iter = 0;
  std::string branch;
  double delta_min = 0.0;
  double active_delta = 0.0;
  double metric_half_norm = 0.0;
  double lambda = 0.0;
  double nu_norm = 0.0;
  int metric_iterations = 0;
  double critic_loss = 0.0;
  std::size_t resets = 0;
};

std::string to_json_line(const StepDiagnostics& d);

struct TrainerState {
  Network policy;
  Network value;
  AdamState critic_adam;
  AgentPool pool;
  std::mt19937_64 sample_rng;
  std::size_t iteration = 0;
};

TrainerState init_trainer(const Task& task, const TrainConfig& cfg);

struct IterationResult {
  MetricsRow row;
  StepDiagnostics diag;
};

// One pass of: rollouts, critic update, policy step, pool advance.
IterationResult iterate(TrainerState& state, const Task& task, const TrainConfig& cfg);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics, diagnostics, checkpoints
  std::string config_hash;
  std::function<void(const MetricsRow&)> on_row;
};

struct TrainResult {
  Network policy;
  Network value;
  std::vector<MetricsRow> metrics;
  std::vector<StepDiagnostics> steps;
  EvalReport initial_eval;
  EvalReport final_eval;
};

TrainResult train(const Task& task, const TrainConfig& cfg, const TrainOptions& opts = {});

// Calls fn(i) for i in [0, n) over `threads` workers; fn must only touch slot i.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace cdadp
