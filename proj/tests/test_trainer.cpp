#include "cdadp/critic.hpp"
#include "cdadp/errors.hpp"
#include "cdadp/lti.hpp"
#include "cdadp/trainer.hpp"
#include "doctest.h"
#include "test_support.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

using namespace cdadp;
using namespace testing_support;

namespace {

TrainConfig small_vehicle_config(Algorithm algo = Algorithm::Cdadp) {
  TrainConfig cfg;
  cfg.algorithm = algo;
  cfg.agents = 8;
  cfg.horizon = 5;
  cfg.constraint_samples = 4;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 8;
  cfg.iterations = 3;
  cfg.eval_steps = 40;
  cfg.delta_a = 1e-4;
  cfg.delta_b = 4e-4;
  cfg.record_wall_time = false;
  return cfg;
}

TrainConfig lti_config() {
  TrainConfig cfg;
  cfg.agents = 16;
  cfg.horizon = 10;
  cfg.linear_policy = true;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 8;
  cfg.delta_a = 1e-6;
  cfg.delta_b = 4e-6;
  cfg.record_wall_time = false;
  return cfg;
}

double mean_objective(const Task& task, const Network& policy, const Network& value,
                      const std::vector<Eigen::VectorXd>& states, const TrainConfig& cfg) {
  double total = 0.0;
  for (const auto& x : states) {
    total += return_target(rollout(*task.model, policy, x, cfg.horizon), value, {cfg.gamma, cfg.terminal});
  }
  return total / static_cast<double>(states.size());
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("init_pool is reproducible and covers the sampler box") {
  const Task task = vehicle_task();
  TrainConfig cfg;
  cfg.seed = 11;
  const AgentPool a = init_pool(task, cfg), b = init_pool(task, cfg);
  REQUIRE(a.states.size() == 256);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    CHECK(a.states[i] == b.states[i]);
    CHECK(a.states[i][2] > 0.0);
    CHECK(std::abs(a.states[i][4]) < 50.0);
    CHECK(task.in_domain(a.states[i]));
    lo = std::min(lo, a.states[i][2]);
    hi = std::max(hi, a.states[i][2]);
  }
  CHECK(lo <= 5.0 + 0.05 * 10.0);
  CHECK(hi >= 15.0 - 0.05 * 10.0);

  cfg.seed = 12;
  CHECK(init_pool(task, cfg).states[0] != a.states[0]);
}

TEST_CASE("sample_constraints draws distinct records uniformly") {
  std::vector<ConstraintRef> buffer(20);
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = {i, 0, 0, i < 3 ? 1.0 : -1.0, 0.0};
  std::mt19937_64 rng(5);
  std::vector<int> hits(buffer.size(), 0);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    auto picks = sample_constraints(buffer, 5, rng, false);
    REQUIRE(picks.size() == 5);
    std::sort(picks.begin(), picks.end());
    CHECK(std::adjacent_find(picks.begin(), picks.end()) == picks.end());
    for (auto p : picks) ++hits[p];
  }
  // each record appears with probability 5/20
  for (int h : hits) CHECK(std::abs(h / static_cast<double>(trials) - 0.25) < 0.02);

  CHECK(sample_constraints(buffer, 50, rng, false).size() == 20);
  CHECK(sample_constraints({}, 5, rng, false).empty());

  for (int t = 0; t < 50; ++t) {
    const auto picks = sample_constraints(buffer, 4, rng, true);
    std::vector<std::size_t> head(picks.begin(), picks.begin() + 3);
    std::sort(head.begin(), head.end());
    CHECK(head == std::vector<std::size_t>{0, 1, 2});
    CHECK(picks[3] >= 3);
  }
}

TEST_CASE("evaluate accumulates utilities and flags violations") {
  SUBCASE("zero utility gives zero cost") {
    const LtiModel m = lti_model(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Ones(2, 1),
                                 Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(1, 1));
    std::mt19937_64 rng(1);
    const auto spec = NetworkSpec::mlp(2, 1, 4, 1, Activation::Elu, Activation::Tanh);
    const Network pol{spec, init_params(spec, rng)};
    const EvalReport rep = evaluate(m, pol, Eigen::VectorXd::Ones(2), 25);
    CHECK(rep.cost == 0.0);
    CHECK(rep.states.size() == 26);
    CHECK_FALSE(rep.failed_at.has_value());
    CHECK(evaluate(m, pol, Eigen::VectorXd::Ones(2), 0).cost == 0.0);
  }
  SUBCASE("straight driving with a zero policy") {
    vehicle::VehicleParams p;
    p.R = 1e12;  // the reference path is a straight line
    const vehicle::VehicleModel model(p);
    const auto spec = NetworkSpec::mlp(5, 1, 4, 2, Activation::Elu, Activation::Tanh,
                                       {vehicle::kMaxSteer, vehicle::kMaxAccel});
    const Network pol{spec, ParamVector::zeros(spec)};
    const Eigen::VectorXd x0 = vehicle::VehicleState{0.0, 0.0, 10.0, 0.0, 0.0}.to_vector();
    const EvalReport rep = evaluate(model, pol, x0, 3);
    // each step costs -0.015 * v_x with v_x = 10 and no lateral error
    CHECK(rep.cost == doctest::Approx(-0.45).epsilon(1e-9));
    CHECK_FALSE(rep.violated());
    for (double e : rep.max_excess) CHECK(e < 0.0);
  }
  SUBCASE("violation flag follows the sign of the excess") {
    EvalReport rep;
    rep.max_excess = {-1.0, -0.5, 0.0};
    CHECK_FALSE(rep.violated());
    rep.max_excess[1] = 1e-9;
    CHECK(rep.violated());
    CHECK_FALSE(rep.violated(1e-6));
  }
  SUBCASE("a diverging rollout reports its failing step") {
    const Task task = vehicle_task();
    const auto spec = NetworkSpec::mlp(5, 1, 4, 2, Activation::Elu, Activation::Tanh,
                                       {vehicle::kMaxSteer, vehicle::kMaxAccel});
    ParamVector params = ParamVector::zeros(spec);
    params.bias(1)[1] = -10.0;  // full braking
    const Eigen::VectorXd x0 = vehicle::VehicleState{0.0, 0.0, 1.0, 0.0, 0.0}.to_vector();
    const EvalReport rep = evaluate(*task.model, {spec, params}, x0, 400);
    REQUIRE(rep.failed_at.has_value());
    CHECK(*rep.failed_at < 400);
    CHECK(rep.controls.size() == *rep.failed_at);
  }
}

TEST_CASE("GPI moves the policy by lr times the mean actor gradient") {
  const Task task = vehicle_task();
  const TrainConfig cfg = small_vehicle_config(Algorithm::Gpi);
  TrainerState state = init_trainer(task, cfg);
  const TrainerState before = state;

  // Independent replay of the critic update, then the pooled gradient.
  Network value = before.value;
  AdamState adam = before.critic_adam;
  CriticBatch batch;
  std::vector<Trajectory> trajs;
  for (const auto& x : before.pool.states) {
    trajs.push_back(rollout(*task.model, before.policy, x, cfg.horizon));
    batch.states.push_back(x);
    batch.targets.push_back(return_target(trajs.back(), before.value, {cfg.gamma, cfg.terminal}));
  }
  critic_update(batch, value, adam);
  Eigen::VectorXd dJ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(before.policy.params.size()));
  for (const auto& t : trajs) dJ += actor_gradient(t, before.policy, value, {cfg.gamma, cfg.terminal}).values();
  dJ /= static_cast<double>(trajs.size());

  const IterationResult res = iterate(state, task, cfg);
  const Eigen::VectorXd step = state.policy.params.values() - before.policy.params.values();
  CHECK(res.row.branch == "gpi");
  CHECK(rel_err(step.norm(), cfg.gpi_actor_lr * dJ.norm()) < 1e-10);
  CHECK(rel_err(step, -cfg.gpi_actor_lr * dJ) < 1e-10);
  CHECK(rel_err(state.value.params.values(), value.params.values()) < 1e-14);
}

TEST_CASE("TRADP equals CDADP when no constraint is sampled") {
  const Task task = vehicle_task();
  TrainConfig cd = small_vehicle_config(Algorithm::Cdadp);
  cd.constraint_samples = 0;
  const TrainConfig tr = small_vehicle_config(Algorithm::Tradp);
  TrainerState a = init_trainer(task, cd), b = init_trainer(task, tr);
  for (int k = 0; k < 3; ++k) {
    const auto ra = iterate(a, task, cd);
    const auto rb = iterate(b, task, tr);
    CHECK(ra.row.branch == rb.row.branch);
    CHECK(ra.row.mean_G == rb.row.mean_G);
  }
  CHECK(a.policy.params.values() == b.policy.params.values());
  CHECK(a.value.params.values() == b.value.params.values());
}

TEST_CASE("one LTI iteration decreases the objective on a fixed pool") {
  const Task task = double_integrator_task();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg = lti_config();
    cfg.seed = seed;
    TrainerState state = init_trainer(task, cfg);
    const std::vector<Eigen::VectorXd> pool = state.pool.states;
    const Network old_policy = state.policy;
    iterate(state, task, cfg);
    // the step was taken against the updated critic
    const double before = mean_objective(task, old_policy, state.value, pool, cfg);
    const double after = mean_objective(task, state.policy, state.value, pool, cfg);
    CHECK(after < before);
  }
}

TEST_CASE("applied steps respect the trust region") {
  const Task task = vehicle_task();
  for (Algorithm algo : {Algorithm::Cdadp, Algorithm::Tradp, Algorithm::Ptradp}) {
    TrainConfig cfg = small_vehicle_config(algo);
    cfg.iterations = 6;
    const TrainResult res = train(task, cfg);
    for (const auto& d : res.steps) {
      CHECK(d.metric_half_norm <= d.active_delta * (1.0 + 1e-6));
      CHECK(d.active_delta <= cfg.delta_b * (1.0 + 1e-12));
      if (algo == Algorithm::Ptradp) {
        CHECK(d.branch == "recovery");
        CHECK(d.metric_half_norm == doctest::Approx(cfg.delta_b).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("pool states stay inside the domain") {
  const Task task = vehicle_task();
  TrainConfig cfg = small_vehicle_config();
  cfg.max_episode_steps = 3;
  TrainerState state = init_trainer(task, cfg);
  for (int k = 0; k < 5; ++k) {
    iterate(state, task, cfg);
    REQUIRE(state.pool.states.size() == cfg.agents);
    for (const auto& x : state.pool.states) CHECK(task.in_domain(x));
    for (auto s : state.pool.episode_steps) CHECK(s < 3);
  }
}

TEST_CASE("train with no budget returns the initial networks") {
  const Task task = vehicle_task();
  TrainConfig cfg = small_vehicle_config();
  cfg.iterations = 0;
  const TrainResult res = train(task, cfg);
  const TrainerState init = init_trainer(task, cfg);
  CHECK(res.metrics.empty());
  CHECK(res.policy.params.values() == init.policy.params.values());
  CHECK(res.value.params.values() == init.value.params.values());
  CHECK(res.final_eval.cost == res.initial_eval.cost);
}

TEST_CASE("training is deterministic and independent of the thread count") {
  const Task task = vehicle_task();
  auto lines = [&](std::size_t threads) {
    TrainConfig cfg = small_vehicle_config();
    cfg.threads = threads;
    std::vector<std::string> out;
    for (const auto& row : train(task, cfg).metrics) out.push_back(to_json_line(row));
    return out;
  };
  const auto a = lines(1);
  CHECK(a == lines(1));
  CHECK(a == lines(3));
}

TEST_CASE("train writes metrics, diagnostics and checkpoints") {
  const Task task = vehicle_task();
  TrainConfig cfg = small_vehicle_config();
  cfg.iterations = 4;
  cfg.eval_every = 2;
  const auto dir = std::filesystem::temp_directory_path() / "cdadp_test_train_out";
  std::filesystem::remove_all(dir);
  TrainOptions opts;
  opts.out_dir = dir;
  opts.config_hash = "abc";
  const TrainResult res = train(task, cfg, opts);

  const auto metrics = read_lines(dir / "metrics.jsonl");
  REQUIRE(metrics.size() == 4);
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const auto j = nlohmann::json::parse(metrics[i]);
    CHECK(j["iter"] == i + 1);
    CHECK(j.contains("mean_G"));
    CHECK(j.contains("wall_ms"));
    CHECK(j.contains("branch"));
    if ((i + 1) % 2 == 0) {
      CHECK(j["eval_cost"].is_number());
      CHECK(j["excess"].size() == 3);
    } else {
      CHECK(j["eval_cost"].is_null());
    }
  }
  CHECK(metrics[0].rfind("{\"iter\":1,\"mean_G\":", 0) == 0);
  CHECK(read_lines(dir / "diagnostics.jsonl").size() == 4);

  std::size_t checkpoints = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "checkpoints")) {
    ++checkpoints;
    CHECK(std::filesystem::exists(e.path() / "policy.ckpt"));
    CHECK(std::filesystem::exists(e.path() / "value.ckpt"));
  }
  CHECK(checkpoints == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("configuration checks") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.delta_b = cfg.delta_a / 2.0;
  CHECK_THROWS_AS(cfg.validate(), StructuralError);
  cfg = {};
  cfg.eta = 1.5;
  CHECK_THROWS_AS(cfg.validate(), StructuralError);
  CHECK(algorithm_from_string("PTRADP") == Algorithm::Ptradp);
  CHECK(to_string(Algorithm::Gpi) == "gpi");
  CHECK_THROWS_AS(algorithm_from_string("sac"), StructuralError);
}
