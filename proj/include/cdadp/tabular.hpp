#pragma once

// Constrained policy iteration on finite deterministic MDPs, with exact
// evaluation and exhaustive search used as references.

#include "cdadp/rollout.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace cdadp::tabular {

// A state s is safe when values[s] <= bound holds for every constraint.
struct StateConstraint {
  std::vector<double> values;
  double bound = 0.0;
};

struct FiniteMDP {
  std::size_t states = 0;
  std::size_t actions = 0;
  std::vector<std::vector<std::size_t>> next;  // [s][a]
  std::vector<std::vector<double>> cost;       // [s][a]
  double gamma = 0.9;
  std::size_t horizon = 1;  // N: backups look N + 1 steps ahead
  std::vector<StateConstraint> constraints;
  // The exact tail keeps the N-step backup consistent with the one-step
  // Bellman equation; PowerN is kept for comparison.
  TerminalDiscount terminal = TerminalDiscount::PowerNPlusOne;

  // Throws StructuralError on malformed tables and InfeasibleError when no
  // state is feasible.
  void validate() const;
  bool safe(std::size_t s) const;
  double terminal_weight() const;
};

using Policy = std::vector<std::size_t>;
using Value = Eigen::VectorXd;

struct FeasibleSet {
  std::vector<bool> viable;    // safe, and can stay safe forever
  std::vector<bool> feasible;  // Psi: some action leads into the viable set
  std::size_t count() const;
};

FeasibleSet feasible_set(const FiniteMDP& mdp);

// Every state of Psi moves into the viable set under the policy.
bool is_feasible_policy(const FiniteMDP& mdp, const FeasibleSet& fs, const Policy& pi);

// Some feasible policy, choosing the smallest viable action per state.
Policy first_feasible_policy(const FiniteMDP& mdp, const FeasibleSet& fs);

struct Lookahead {
  double discounted_cost = 0.0;  // sum_{j=0}^{N} gamma^j l_j
  std::size_t end = 0;           // s_{N+1}
  bool constraints_hold = true;  // s_1 .. s_{N+1} all safe
};

// Takes action `a` at `s`, then follows `pi` for N more steps.
Lookahead lookahead(const FiniteMDP& mdp, const Policy& pi, std::size_t s, std::size_t a);

// One application of V(s) <- sum_j gamma^j l_j + w V(s_{N+1}) along pi.
Value bellman_sweep(const FiniteMDP& mdp, const Policy& pi, const Value& V);
Value policy_evaluation(const FiniteMDP& mdp, const Policy& pi, const Value& V0, std::size_t sweeps);

// Fixed point of bellman_sweep by a direct linear solve.
Value exact_value(const FiniteMDP& mdp, const Policy& pi);

inline constexpr double kTieTolerance = 1e-12;

// Per feasible state, the action minimizing the lookahead objective among
// those whose successor is viable, whose N+1 visited states are safe and
// whose squared index distance to pi(s) is at most delta_action. Ties go to
// the smallest index. Throws InfeasibleError if a state of Psi has no
// admissible action.
Policy constrained_improvement(const FiniteMDP& mdp, const FeasibleSet& fs, const Policy& pi, const Value& V,
                               double delta_action = std::numeric_limits<double>::infinity());

struct IterationTrace {
  std::vector<Policy> policies;  // pi_0, pi_1, ...
  std::vector<Value> values;     // exact value of each policy
};

struct PolicyIterationResult {
  Policy policy;
  Value value;
  std::size_t iterations = 0;  // improvement steps until the policy repeats
  bool converged = true;       // false when |A|^|S| steps pass without a repeat
  IterationTrace trace;
};

PolicyIterationResult constrained_policy_iteration(const FiniteMDP& mdp, const Policy& pi0,
                                                   double delta_action = std::numeric_limits<double>::infinity());

struct BruteForceResult {
  Policy policy;               // a feasible policy attaining `value` on Psi, if one exists
  Value value;                 // pointwise minimum over feasible policies (on Psi)
  bool attained = false;       // some single policy reaches the pointwise minimum
  std::size_t enumerated = 0;  // feasible policies evaluated
};

inline constexpr std::size_t kMaxEnumeration = 1000000;

BruteForceResult brute_force_optimal(const FiniteMDP& mdp);

struct RandomMdpOptions {
  std::size_t max_states = 6;
  std::size_t max_actions = 4;
  std::size_t max_horizon = 3;
  double gamma_lo = 0.5;
  double gamma_hi = 0.95;
  double unsafe_fraction = 0.25;
};

// Random deterministic MDP with at least one feasible state.
FiniteMDP random_mdp(std::mt19937_64& rng, const RandomMdpOptions& opts = {});

struct VerifyOptions {
  double delta_action = std::numeric_limits<double>::infinity();
  std::size_t sweeps = 20;
  double contraction_tol = 1e-12;
  double monotone_tol = 1e-12;
  double optimality_tol = 1e-8;
};

struct VerifyReport {
  bool contraction_ok = true;
  double max_contraction_ratio = 0.0;  // worst observed ||V_{i+1}-V||/||V_i-V||
  double contraction_bound = 0.0;      // terminal weight w
  bool monotone_ok = true;
  double max_value_increase = 0.0;     // worst V_{K+1}(s) - V_K(s) over Psi
  bool optimal_ok = true;
  double max_optimality_gap = 0.0;     // worst |V_cpi - V_brute| over Psi
  bool optimum_attained = true;
  std::size_t iterations = 0;
  bool converged = true;
  bool iteration_bound = true;         // iterations <= |A|^|S|

  bool passed() const { return contraction_ok && monotone_ok && optimal_ok && converged && iteration_bound; }
};

// Runs the contraction, monotonicity and optimality checks on one MDP. With a
// finite delta_action the optimality check is replaced by a local fixed-point
// check: no admissible action improves on the final policy.
VerifyReport verify(const FiniteMDP& mdp, const VerifyOptions& opts = {}, std::uint64_t seed = 0);

std::string to_json(const FiniteMDP& mdp);
FiniteMDP mdp_from_json(const std::string& text);
FiniteMDP load_mdp(const std::filesystem::path& path);
std::string to_json(const VerifyReport& report);

}  // namespace cdadp::tabular
