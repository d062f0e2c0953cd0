#include "cdadp/trainer.hpp"

#include "cdadp/checkpoint.hpp"
#include "cdadp/critic.hpp"
#include "cdadp/errors.hpp"
#include "cdadp/lti.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

namespace cdadp {

namespace {

constexpr int kMaxResets = 100;

using ordered_json = nlohmann::ordered_json;

ordered_json finite_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

std::string format_iter(std::size_t iter) {
  std::string s = std::to_string(iter);
  return "iter_" + std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

void write_nets(const std::filesystem::path& dir, const TrainerState& state, const TrainConfig& cfg,
                const std::string& hash) {
  std::filesystem::create_directories(dir);
  write_checkpoint(dir / "policy.ckpt", state.policy);
  write_checkpoint_meta(dir / "policy.ckpt", {state.iteration, cfg.seed, hash, "policy"});
  write_checkpoint(dir / "value.ckpt", state.value);
  write_checkpoint_meta(dir / "value.ckpt", {state.iteration, cfg.seed, hash, "value"});
}

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::size_t resets = 0;
};

// Rolls out every agent; agents whose trajectory fails are reset from the
// pool stream in index order and rolled out again, so the result does not
// depend on the thread count.
RolloutBatch rollout_pool(AgentPool& pool, const Task& task, const Network& policy, const TrainConfig& cfg) {
  const std::size_t n = pool.states.size();
  RolloutBatch batch;
  batch.trajectories.resize(n);
  std::vector<char> ok(n, 0);
  std::vector<std::size_t> pending(n);
  std::iota(pending.begin(), pending.end(), std::size_t{0});
  for (int attempt = 0; !pending.empty(); ++attempt) {
    if (attempt > kMaxResets) throw TrajectoryInvalid(0, "agent rollouts keep failing after repeated resets");
    parallel_for(pending.size(), cfg.threads, [&](std::size_t k) {
      const std::size_t i = pending[k];
      try {
        batch.trajectories[i] = rollout(*task.model, policy, pool.states[i], cfg.horizon);
        ok[i] = 1;
      } catch (const TrajectoryInvalid&) {
        ok[i] = 0;
      }
    });
    std::vector<std::size_t> failed;
    for (std::size_t i : pending) {
      if (!ok[i]) {
        pool.states[i] = sample_state(task, pool.rng);
        pool.episode_steps[i] = 0;
        failed.push_back(i);
        ++batch.resets;
      }
    }
    pending = std::move(failed);
  }
  return batch;
}

void advance_pool(AgentPool& pool, const Task& task, const Network& policy, const TrainConfig& cfg) {
  const std::size_t n = pool.states.size();
  std::vector<Eigen::VectorXd> next(n);
  std::vector<char> ok(n, 0);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    try {
      const Eigen::VectorXd u = forward(policy.spec, policy.params, pool.states[i]);
      next[i] = task.model->step(pool.states[i], u);
      ok[i] = task.in_domain(next[i]) ? 1 : 0;
    } catch (const TrajectoryInvalid&) {
    } catch (const DomainError&) {
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    ++pool.episode_steps[i];
    const bool expired = cfg.max_episode_steps > 0 && pool.episode_steps[i] >= cfg.max_episode_steps;
    if (ok[i] && !expired) {
      pool.states[i] = std::move(next[i]);
    } else {
      pool.states[i] = sample_state(task, pool.rng);
      pool.episode_steps[i] = 0;
    }
  }
}

Eigen::VectorXd mean_actor_gradient(const std::vector<Trajectory>& trajs, const TrainerState& state,
                                    const TrainConfig& cfg) {
  const std::size_t n = trajs.size();
  const Eigen::Index P = static_cast<Eigen::Index>(state.policy.params.size());
  const ReturnOptions ret{cfg.gamma, cfg.terminal};
  Eigen::MatrixXd slots = Eigen::MatrixXd::Zero(P, static_cast<Eigen::Index>(n));
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    accumulate_actor_gradient(trajs[i], state.policy, state.value, ret, 1.0, slots.col(static_cast<Eigen::Index>(i)));
  });
  Eigen::VectorXd total = Eigen::VectorXd::Zero(P);
  for (Eigen::Index i = 0; i < slots.cols(); ++i) total += slots.col(i);
  return total / static_cast<double>(n);
}

std::unique_ptr<MetricOperator> pool_metric(const AgentPool& pool, const Network& policy, const TrainConfig& cfg) {
  const std::size_t n = pool.states.size();
  const Eigen::Index out = static_cast<Eigen::Index>(policy.spec.output_dim);
  const Eigen::Index P = static_cast<Eigen::Index>(policy.params.size());
  Eigen::MatrixXd J(out * static_cast<Eigen::Index>(n), P);
  parallel_for(n, cfg.threads, [&](std::size_t i) {
    J.middleRows(out * static_cast<Eigen::Index>(i), out) = output_jacobian(policy.spec, policy.params, pool.states[i]);
  });
  return std::make_unique<GaussNewtonMetric>(std::move(J), 2.0 / static_cast<double>(n), cfg.metric_damping,
                                             cfg.metric_solve, cfg.cg);
}

std::vector<RawConstraint> sampled_constraints(const std::vector<Trajectory>& trajs, const Network& policy,
                                               std::mt19937_64& rng, const TrainConfig& cfg) {
  std::vector<ConstraintRef> buffer;
  for (std::size_t a = 0; a < trajs.size(); ++a) {
    for (std::size_t i = 0; i < trajs[a].steps.size(); ++i) {
      const auto& cons = trajs[a].steps[i].constraints;
      for (std::size_t tau = 0; tau < cons.size(); ++tau) buffer.push_back({a, i, tau, cons[tau].value, cons[tau].bound});
    }
  }
  const auto picks = sample_constraints(buffer, cfg.constraint_samples, rng, cfg.prioritize_violated);
  std::vector<RawConstraint> raw(picks.size());
  parallel_for(picks.size(), cfg.threads, [&](std::size_t k) {
    const ConstraintRef& ref = buffer[picks[k]];
    raw[k] = {ref.value, ref.bound,
              constraint_gradient(trajs[ref.agent], policy, ref.step, ref.constraint).values()};
  });
  return raw;
}

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Cdadp: return "cdadp";
    case Algorithm::Gpi: return "gpi";
    case Algorithm::Tradp: return "tradp";
    case Algorithm::Ptradp: return "ptradp";
  }
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "cdadp") return Algorithm::Cdadp;
  if (s == "gpi") return Algorithm::Gpi;
  if (s == "tradp") return Algorithm::Tradp;
  if (s == "ptradp" || s == "p-tradp") return Algorithm::Ptradp;
  throw StructuralError("unknown algorithm '" + name + "'");
}

void TrainConfig::validate() const {
  if (horizon == 0) throw StructuralError("horizon must be at least 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw StructuralError("gamma must be in (0, 1]");
  if (!(delta_a > 0.0) || !(delta_b >= delta_a)) throw StructuralError("need 0 < delta_a <= delta_b");
  if (!(eta >= 0.0 && eta <= 1.0)) throw StructuralError("eta must be in [0, 1]");
  if (agents == 0) throw StructuralError("agent count must be positive");
  if (!(critic_lr > 0.0) || !(gpi_actor_lr > 0.0)) throw StructuralError("learning rates must be positive");
  if (critic_epochs < 1) throw StructuralError("critic_epochs must be at least 1");
  if (!(metric_damping > 0.0)) throw StructuralError("metric damping must be positive");
  if (!linear_policy && hidden_layers > 0 && hidden_width == 0) throw StructuralError("hidden width must be positive");
  if (!(eval_discount > 0.0 && eval_discount <= 1.0)) throw StructuralError("eval discount must be in (0, 1]");
  if (threads == 0) throw StructuralError("thread count must be positive");
}

bool Task::in_domain(const Eigen::VectorXd& x) const {
  if (!model->in_domain(x)) return false;
  return (x.array() >= domain_lo.array()).all() && (x.array() <= domain_hi.array()).all();
}

Task vehicle_task(const vehicle::VehicleParams& params) {
  Task t;
  t.name = "vehicle";
  t.model = std::make_shared<vehicle::VehicleModel>(params);
  t.sample_lo = (Eigen::VectorXd(5) << -1.0, -0.2, 5.0, -0.15, -1.0).finished();
  t.sample_hi = (Eigen::VectorXd(5) << 1.0, 0.2, 15.0, 0.15, 1.0).finished();
  t.domain_lo = (Eigen::VectorXd(5) << -5.0, -2.0, 1.0, -1.0, -8.0).finished();
  t.domain_hi = (Eigen::VectorXd(5) << 5.0, 2.0, 35.0, 1.0, 8.0).finished();
  t.control_scale = {vehicle::kMaxSteer, vehicle::kMaxAccel};
  return t;
}

Task double_integrator_task() {
  Task t;
  t.name = "double_integrator";
  t.model = std::make_shared<LtiModel>(double_integrator());
  t.sample_lo = Eigen::VectorXd::Constant(2, -1.0);
  t.sample_hi = Eigen::VectorXd::Constant(2, 1.0);
  t.domain_lo = Eigen::VectorXd::Constant(2, -10.0);
  t.domain_hi = Eigen::VectorXd::Constant(2, 10.0);
  t.control_scale = {1.0};
  return t;
}

NetworkSpec policy_spec(const Task& task, const TrainConfig& cfg) {
  const std::size_t n = task.model->state_dim(), m = task.model->control_dim();
  if (cfg.linear_policy) return NetworkSpec::mlp(n, 0, 0, m, Activation::Linear, Activation::Linear, task.control_scale);
  return NetworkSpec::mlp(n, cfg.hidden_layers, cfg.hidden_width, m, Activation::Elu, Activation::Tanh,
                          task.control_scale);
}

NetworkSpec value_spec(const Task& task, const TrainConfig& cfg) {
  return NetworkSpec::mlp(task.model->state_dim(), cfg.hidden_layers, cfg.hidden_width, 1, Activation::Elu,
                          Activation::Linear);
}

Eigen::VectorXd sample_state(const Task& task, std::mt19937_64& rng) {
  const Eigen::Index n = task.sample_lo.size();
  for (int attempt = 0; attempt < kMaxResets; ++attempt) {
    Eigen::VectorXd x(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      x[k] = std::uniform_real_distribution<double>(task.sample_lo[k], task.sample_hi[k])(rng);
    }
    if (task.in_domain(x)) return x;
  }
  throw DomainError("state sampler keeps producing states outside the domain");
}

AgentPool init_pool(const Task& task, const TrainConfig& cfg) {
  AgentPool pool;
  pool.rng.seed(cfg.seed);
  pool.states.reserve(cfg.agents);
  for (std::size_t i = 0; i < cfg.agents; ++i) pool.states.push_back(sample_state(task, pool.rng));
  pool.episode_steps.assign(cfg.agents, 0);
  return pool;
}

std::vector<std::size_t> sample_constraints(const std::vector<ConstraintRef>& buffer, std::size_t count,
                                            std::mt19937_64& rng, bool prioritize_violated) {
  std::vector<std::size_t> first, rest;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const bool violated = buffer[i].value > buffer[i].bound;
    (prioritize_violated && violated ? first : rest).push_back(i);
  }
  std::vector<std::size_t> picks;
  auto draw = [&](std::vector<std::size_t>& pool) {
    for (std::size_t k = 0; k < pool.size() && picks.size() < count; ++k) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(k, pool.size() - 1)(rng);
      std::swap(pool[k], pool[j]);
      picks.push_back(pool[k]);
    }
  };
  draw(first);
  draw(rest);
  return picks;
}

bool EvalReport::violated(double tol) const {
  return std::any_of(max_excess.begin(), max_excess.end(), [tol](double e) { return e > tol; });
}

EvalReport evaluate(const SystemModel& model, const Network& policy, const Eigen::VectorXd& x0, std::size_t steps,
                    double discount) {
  if (static_cast<std::size_t>(x0.size()) != model.state_dim()) throw StructuralError("initial state size mismatch");
  EvalReport rep;
  rep.max_excess.assign(model.constraint_count(), -std::numeric_limits<double>::infinity());
  rep.states.push_back(x0);
  double w = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Eigen::VectorXd& x = rep.states.back();
    try {
      if (!model.in_domain(x)) throw TrajectoryInvalid(t, "state outside the model domain");
      const Eigen::VectorXd u = forward(policy.spec, policy.params, x);
      Eigen::VectorXd next = model.step(x, u);
      const double l = model.utility(x, u).value;
      auto cons = model.constraints(next, u);
      rep.cost += w * l;
      w *= discount;
      for (std::size_t k = 0; k < cons.size(); ++k) rep.max_excess[k] = std::max(rep.max_excess[k], cons[k].excess());
      rep.controls.push_back(u);
      rep.constraints.push_back(std::move(cons));
      rep.states.push_back(std::move(next));
    } catch (const TrajectoryInvalid&) {
      rep.failed_at = t;
      break;
    } catch (const DomainError&) {
      rep.failed_at = t;
      break;
    }
  }
  return rep;
}

Eigen::VectorXd eval_start_state(const Task& task, const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.eval_seed);
  return sample_state(task, rng);
}

std::string to_json_line(const MetricsRow& row) {
  ordered_json j;
  j["iter"] = row.iter;
  j["mean_G"] = finite_or_null(row.mean_G);
  j["eval_cost"] = row.eval_cost ? finite_or_null(*row.eval_cost) : ordered_json(nullptr);
  ordered_json ex = ordered_json::array();
  for (double e : row.excess) ex.push_back(finite_or_null(e));
  j["excess"] = ex;
  j["branch"] = row.branch;
  j["wall_ms"] = row.wall_ms;
  if (row.eval_failed_at) j["eval_failed_at"] = *row.eval_failed_at;
  return j.dump();
}

std::string to_json_line(const StepDiagnostics& d) {
  ordered_json j;
  j["iter"] = d.iter;
  j["branch"] = d.branch;
  j["delta_min"] = finite_or_null(d.delta_min);
  j["active_delta"] = d.active_delta;
  j["metric_half_norm"] = d.metric_half_norm;
  j["lambda"] = d.lambda;
  j["nu_norm"] = d.nu_norm;
  j["metric_iterations"] = d.metric_iterations;
  j["critic_loss"] = finite_or_null(d.critic_loss);
  j["resets"] = d.resets;
  return j.dump();
}

TrainerState init_trainer(const Task& task, const TrainConfig& cfg) {
  cfg.validate();
  if (task.sample_lo.size() != static_cast<Eigen::Index>(task.model->state_dim())) {
    throw StructuralError("task sampler does not match the model state size");
  }
  std::mt19937_64 init_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainerState s;
  s.policy.spec = policy_spec(task, cfg);
  s.policy.params = init_params(s.policy.spec, init_rng);
  s.value.spec = value_spec(task, cfg);
  s.value.params = init_params(s.value.spec, init_rng);
  s.critic_adam = AdamState::for_params(s.value.params, cfg.critic_lr);
  s.pool = init_pool(task, cfg);
  s.sample_rng.seed(cfg.seed + 0x51ed270b27f1d3c3ULL);
  return s;
}

IterationResult iterate(TrainerState& state, const Task& task, const TrainConfig& cfg) {
  IterationResult res;
  res.row.iter = state.iteration + 1;
  res.diag.iter = res.row.iter;
  const std::size_t n = state.pool.states.size();

  RolloutBatch batch = rollout_pool(state.pool, task, state.policy, cfg);
  res.diag.resets = batch.resets;

  const ReturnOptions ret{cfg.gamma, cfg.terminal};
  CriticBatch critic;
  critic.states = state.pool.states;
  critic.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) critic.targets[i] = return_target(batch.trajectories[i], state.value, ret);
  res.row.mean_G = std::accumulate(critic.targets.begin(), critic.targets.end(), 0.0) / static_cast<double>(n);
  res.diag.critic_loss = critic_update(critic, state.value, state.critic_adam, cfg.critic_epochs);

  const Eigen::VectorXd dJ = mean_actor_gradient(batch.trajectories, state, cfg);

  if (cfg.algorithm == Algorithm::Gpi) {
    state.policy.params.values() -= cfg.gpi_actor_lr * dJ;
    res.row.branch = "gpi";
  } else {
    std::vector<RawConstraint> raw;
    if (cfg.algorithm != Algorithm::Tradp) raw = sampled_constraints(batch.trajectories, state.policy, state.sample_rng, cfg);
    try {
      const NormalizedProblem prob = normalize(dJ, raw);
      const auto metric = pool_metric(state.pool, state.policy, cfg);
      LinearizedStep step{prob.g, prob.C, prob.z, metric.get(), cfg.delta_a, cfg.delta_b};
      if (cfg.algorithm == Algorithm::Ptradp) {
        const DualCoefficients coeffs = assemble_dual_coefficients(step);
        const Eigen::VectorXd d = penalty_recovery_step(step, coeffs, recovery_weights(prob.z), cfg.eta);
        state.policy.params.values() += d;
        res.row.branch = to_string(StepBranch::PenaltyRecovery);
        res.diag.active_delta = cfg.delta_b;
        res.diag.metric_half_norm = 0.5 * d.dot(metric->apply(d));
      } else {
        const StepOutcome out = policy_step(step, cfg.eta);
        state.policy.params.values() += out.delta_theta;
        res.row.branch = to_string(out.branch);
        res.diag.delta_min = out.delta_min;
        res.diag.active_delta = out.active_delta;
        res.diag.metric_half_norm = out.metric_half_norm;
        res.diag.lambda = out.lambda;
        res.diag.nu_norm = out.nu.size() > 0 ? out.nu.norm() : 0.0;
      }
      res.diag.metric_iterations = metric->solve_iterations();
    } catch (const DegenerateError&) {
      res.row.branch = "degenerate";
    }
  }
  res.diag.branch = res.row.branch;

  advance_pool(state.pool, task, state.policy, cfg);
  ++state.iteration;
  return res;
}

TrainResult train(const Task& task, const TrainConfig& cfg, const TrainOptions& opts) {
  TrainerState state = init_trainer(task, cfg);
  const Eigen::VectorXd x_eval = eval_start_state(task, cfg);
  TrainResult result;
  result.initial_eval = evaluate(*task.model, state.policy, x_eval, cfg.eval_steps, cfg.eval_discount);

  std::ofstream metrics_out, diag_out;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir);
    metrics_out.open(*opts.out_dir / "metrics.jsonl");
    diag_out.open(*opts.out_dir / "diagnostics.jsonl");
    if (!metrics_out || !diag_out) throw std::runtime_error("cannot open output files in " + opts.out_dir->string());
  }

  const auto start = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const Network last_policy = state.policy, last_value = state.value;
    IterationResult it;
    try {
      it = iterate(state, task, cfg);
    } catch (...) {
      if (opts.out_dir) {
        state.policy = last_policy;
        state.value = last_value;
        write_nets(*opts.out_dir / "checkpoints" / "last_good", state, cfg, opts.config_hash);
      }
      throw;
    }
    const bool last = k + 1 == cfg.iterations;
    if (last || (cfg.eval_every > 0 && it.row.iter % cfg.eval_every == 0)) {
      EvalReport rep = evaluate(*task.model, state.policy, x_eval, cfg.eval_steps, cfg.eval_discount);
      it.row.eval_cost = rep.cost;
      it.row.excess = rep.max_excess;
      it.row.eval_failed_at = rep.failed_at;
      if (last) result.final_eval = std::move(rep);
    }
    if (cfg.record_wall_time) {
      it.row.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    if (opts.out_dir) {
      metrics_out << to_json_line(it.row) << '\n' << std::flush;
      diag_out << to_json_line(it.diag) << '\n';
      const bool periodic = cfg.checkpoint_every > 0 && it.row.iter % cfg.checkpoint_every == 0;
      if (periodic && !last) write_nets(*opts.out_dir / "checkpoints" / format_iter(it.row.iter), state, cfg, opts.config_hash);
    }
    if (opts.on_row) opts.on_row(it.row);
    result.metrics.push_back(std::move(it.row));
    result.steps.push_back(std::move(it.diag));
  }
  if (cfg.iterations == 0) result.final_eval = result.initial_eval;
  if (opts.out_dir) write_nets(*opts.out_dir / "checkpoints" / format_iter(state.iteration), state, cfg, opts.config_hash);
  result.policy = state.policy;
  result.value = state.value;
  return result;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace cdadp
