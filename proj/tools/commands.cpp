#include "commands.hpp"

#include "cdadp/checkpoint.hpp"
#include "cdadp/errors.hpp"
#include "svg_plot.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace cdadp::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json finite_or_null(double v) {
  return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ordered_json eval_json(const EvalReport& r) {
  ordered_json j;
  j["cost"] = finite_or_null(r.cost);
  ordered_json ex = ordered_json::array();
  for (double e : r.max_excess) ex.push_back(finite_or_null(e));
  j["max_excess"] = ex;
  j["steps"] = r.controls.size();
  j["failed_at"] = r.failed_at ? ordered_json(*r.failed_at) : ordered_json(nullptr);
  j["violated"] = r.violated();
  return j;
}

double max_of(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  return m;
}

// Evaluated rows as a plotted series.
Series eval_series(const std::string& label, const std::vector<MetricsRow>& rows, double initial) {
  Series s;
  s.label = label;
  s.x.push_back(0.0);
  s.y.push_back(initial);
  for (const auto& r : rows) {
    if (!r.eval_cost) continue;
    s.x.push_back(static_cast<double>(r.iter));
    s.y.push_back(*r.eval_cost);
  }
  return s;
}

fs::path latest_checkpoint(const fs::path& run_dir) {
  const fs::path root = run_dir / "checkpoints";
  if (!fs::is_directory(root)) throw ConfigError("no checkpoints in " + run_dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("iter_", 0) == 0) dirs.push_back(entry.path());
  }
  if (dirs.empty()) throw ConfigError("no checkpoints in " + root.string());
  std::sort(dirs.begin(), dirs.end());
  return dirs.back() / "policy.ckpt";
}

}  // namespace

fs::path output_root() {
  const char* env = std::getenv("CDADP_OUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path default_run_dir(const std::string& kind, const std::string& label, const RunConfig& cfg) {
  std::string safe = label;
  std::replace(safe.begin(), safe.end(), ':', '-');
  return output_root() /
         (kind + "_" + safe + "_seed" + std::to_string(cfg.train.seed) + "_" + config_hash(cfg).substr(0, 8));
}

void write_trajectory_csv(const fs::path& path, const SystemModel& model, const EvalReport& report) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << 't';
  for (const auto& n : model.state_names()) out << ',' << n;
  for (const auto& n : model.control_names()) out << ',' << n;
  for (const auto& n : model.constraint_names()) out << ',' << n << ',' << n << "_bound";
  out << '\n';
  const std::size_t nc = model.constraint_count();
  for (std::size_t t = 0; t < report.states.size(); ++t) {
    out << t;
    for (Eigen::Index i = 0; i < report.states[t].size(); ++i) out << ',' << report.states[t][i];
    if (t < report.controls.size()) {
      for (Eigen::Index i = 0; i < report.controls[t].size(); ++i) out << ',' << report.controls[t][i];
    } else {
      for (std::size_t i = 0; i < model.control_dim(); ++i) out << ',';
    }
    // Constraints belong to the state they were evaluated on, states[t].
    if (t > 0 && t - 1 < report.constraints.size()) {
      for (const auto& c : report.constraints[t - 1]) out << ',' << c.value << ',' << c.bound;
    } else {
      for (std::size_t i = 0; i < nc; ++i) out << ",,";
    }
    out << '\n';
  }
  write_text(path, out.str());
}

TrainResult run_training(const RunConfig& cfg, const fs::path& dir, std::ostream& log) {
  const Task task = make_task(cfg);
  fs::create_directories(dir);
  write_text(dir / "config.resolved", resolved_text(cfg));

  TrainOptions opts;
  opts.out_dir = dir;
  opts.config_hash = config_hash(cfg);
  const std::size_t every = std::max<std::size_t>(1, cfg.train.iterations / 20);
  opts.on_row = [&](const MetricsRow& r) {
    if (r.iter % every != 0 && r.iter != cfg.train.iterations) return;
    log << "iter " << r.iter << "  mean_G " << r.mean_G;
    if (r.eval_cost) log << "  eval " << *r.eval_cost;
    log << "  branch " << r.branch << '\n';
  };
  TrainResult result = train(task, cfg.train, opts);

  const Eigen::VectorXd x0 = eval_start_state(task, cfg.train);
  const EvalReport final_eval = evaluate(*task.model, result.policy, x0, cfg.final_eval_steps, cfg.train.eval_discount);
  write_trajectory_csv(dir / "trajectories" / "initial.csv", *task.model, result.initial_eval);
  write_trajectory_csv(dir / "trajectories" / "final.csv", *task.model, final_eval);

  LinePlot plot;
  plot.title = task.name + " / " + to_string(cfg.train.algorithm);
  plot.x_label = "iteration";
  plot.y_label = "evaluation cost";
  plot.symlog = true;
  plot.series.push_back(eval_series(to_string(cfg.train.algorithm), result.metrics, result.initial_eval.cost));
  write_text(dir / "plots" / "training_curve.svg", render_svg(plot));

  ordered_json branches = ordered_json::object();
  for (const auto& r : result.metrics) branches[r.branch] = branches.value(r.branch, 0) + 1;
  ordered_json s;
  s["task"] = task.name;
  s["algorithm"] = to_string(cfg.train.algorithm);
  s["seed"] = cfg.train.seed;
  s["iterations"] = result.metrics.size();
  s["config_hash"] = opts.config_hash;
  s["initial_eval"] = eval_json(result.initial_eval);
  s["training_eval"] = eval_json(result.final_eval);
  s["final_eval"] = eval_json(final_eval);
  s["branches"] = branches;
  write_text(dir / "summary.json", s.dump(2) + "\n");

  log << "initial cost " << result.initial_eval.cost << "  final cost " << final_eval.cost << "  ("
      << cfg.final_eval_steps << " steps)\n";
  log << "wrote " << dir.string() << '\n';
  return result;
}

EvalOutcome run_eval(const EvalRequest& req, std::ostream& log) {
  RunConfig cfg;
  apply_file(cfg, req.run_dir / "config.resolved");
  const Task task = make_task(cfg);

  EvalOutcome out;
  out.checkpoint = req.checkpoint ? *req.checkpoint : latest_checkpoint(req.run_dir);
  const Network policy = read_checkpoint(out.checkpoint);
  if (!(policy.spec == policy_spec(task, cfg.train))) {
    throw ConfigError("checkpoint " + out.checkpoint.string() + " does not match the policy network of " +
                      (req.run_dir / "config.resolved").string());
  }
  std::uint64_t iteration = 0;
  if (fs::exists(out.checkpoint.string() + ".meta.json")) {
    const CheckpointMeta meta = read_checkpoint_meta(out.checkpoint);
    iteration = meta.iteration;
    out.config_hash_matches = meta.config_hash == config_hash(cfg);
    if (!out.config_hash_matches) {
      log << "warning: checkpoint config hash " << meta.config_hash << " differs from config.resolved ("
          << config_hash(cfg) << ")\n";
    }
  }

  TrainConfig eval_cfg = cfg.train;
  if (req.seed) eval_cfg.eval_seed = *req.seed;
  const std::size_t steps = req.steps.value_or(cfg.final_eval_steps);
  out.report = evaluate(*task.model, policy, eval_start_state(task, eval_cfg), steps, cfg.train.eval_discount);

  const std::string stem = "eval_iter" + std::to_string(iteration) + "_seed" + std::to_string(eval_cfg.eval_seed);
  out.csv = req.run_dir / "trajectories" / (stem + ".csv");
  write_trajectory_csv(out.csv, *task.model, out.report);
  ordered_json j = eval_json(out.report);
  j["checkpoint"] = out.checkpoint.string();
  j["iteration"] = iteration;
  j["eval_seed"] = eval_cfg.eval_seed;
  j["config_hash_matches"] = out.config_hash_matches;
  write_text(req.run_dir / (stem + ".json"), j.dump(2) + "\n");
  log << j.dump(2) << '\n';
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<VariantSummary> run_compare(const RunConfig& cfg, const std::vector<AlgoVariant>& variants,
                                        std::size_t seeds, const fs::path& dir, std::ostream& log) {
  const Task task = make_task(cfg);
  fs::create_directories(dir);
  write_text(dir / "config.resolved", resolved_text(cfg));

  std::vector<VariantSummary> out;
  for (const auto& v : variants) {
    VariantSummary sum;
    sum.label = v.label;
    for (std::size_t k = 0; k < seeds; ++k) {
      RunConfig run = cfg;
      run.train.algorithm = v.algorithm;
      if (v.eta >= 0.0) run.train.eta = v.eta;
      run.train.seed = cfg.train.seed + k;
      std::string safe = v.label;
      std::replace(safe.begin(), safe.end(), ':', '-');
      const fs::path run_dir = dir / safe / ("seed" + std::to_string(run.train.seed));
      log << "== " << v.label << " seed " << run.train.seed << '\n';
      TrainResult r = run_training(run, run_dir, log);
      sum.seeds.push_back(run.train.seed);
      sum.final_cost.push_back(r.final_eval.cost);
      sum.final_max_excess.push_back(max_of(r.final_eval.max_excess));
      sum.initial_cost = r.initial_eval.cost;
      sum.metrics.push_back(std::move(r.metrics));
    }
    out.push_back(std::move(sum));
  }

  // Median evaluation curve per variant, over the iterations every seed evaluated.
  LinePlot curves;
  curves.title = task.name + ": median evaluation cost over " + std::to_string(seeds) + " seeds";
  curves.x_label = "iteration";
  curves.y_label = "evaluation cost";
  curves.symlog = true;
  BoxPlot box;
  box.title = task.name + ": final evaluation cost per seed";
  box.y_label = "evaluation cost";
  box.symlog = true;

  ordered_json j;
  j["task"] = task.name;
  j["seeds"] = seeds;
  j["config_hash"] = config_hash(cfg);
  ordered_json vs = ordered_json::array();
  for (const auto& s : out) {
    Series med;
    med.label = s.label;
    med.x.push_back(0.0);
    med.y.push_back(s.initial_cost);
    const std::size_t rows = s.metrics.empty() ? 0 : s.metrics.front().size();
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<double> at;
      for (const auto& m : s.metrics) {
        if (i < m.size() && m[i].eval_cost) at.push_back(*m[i].eval_cost);
      }
      if (at.size() != s.metrics.size()) continue;
      med.x.push_back(static_cast<double>(s.metrics.front()[i].iter));
      med.y.push_back(median(at));
    }
    curves.series.push_back(std::move(med));
    box.groups.push_back({s.label, s.final_cost});

    ordered_json e;
    e["label"] = s.label;
    e["seeds"] = s.seeds;
    ordered_json costs = ordered_json::array(), excess = ordered_json::array();
    for (double c : s.final_cost) costs.push_back(finite_or_null(c));
    for (double c : s.final_max_excess) excess.push_back(finite_or_null(c));
    e["final_cost"] = costs;
    e["final_max_excess"] = excess;
    e["median_final_cost"] = finite_or_null(median(s.final_cost));
    e["min_final_cost"] = finite_or_null(*std::min_element(s.final_cost.begin(), s.final_cost.end()));
    e["max_final_cost"] = finite_or_null(*std::max_element(s.final_cost.begin(), s.final_cost.end()));
    vs.push_back(e);
    log << s.label << ": median final cost " << median(s.final_cost) << " (" << s.final_cost.size()
        << " seeds)\n";
  }
  j["variants"] = vs;
  write_text(dir / "summary.json", j.dump(2) + "\n");
  write_text(dir / "plots" / "median_cost.svg", render_svg(curves));
  write_text(dir / "plots" / "final_cost_box.svg", render_svg(box));
  log << "wrote " << dir.string() << '\n';
  return out;
}

TabularOutcome run_verify_tabular(const TabularRequest& req, const fs::path& dir, std::ostream& log) {
  std::vector<tabular::FiniteMDP> mdps;
  if (req.mdp_file) {
    mdps.push_back(tabular::load_mdp(*req.mdp_file));
  } else {
    std::mt19937_64 rng(req.seed);
    for (std::size_t i = 0; i < req.random_count; ++i) mdps.push_back(tabular::random_mdp(rng));
  }
  if (mdps.empty()) throw ConfigError("nothing to verify: give an MDP file or --random n with n > 0");

  TabularOutcome out;
  ordered_json reports = ordered_json::array();
  for (std::size_t i = 0; i < mdps.size(); ++i) {
    auto& m = mdps[i];
    if (req.terminal) m.terminal = *req.terminal;
    const tabular::VerifyReport r = tabular::verify(m, req.options, req.seed + i);
    ++out.instances;
    if (r.passed()) {
      ++out.passed;
    } else {
      log << "instance " << i << " failed: " << tabular::to_json(r) << '\n';
      if (!out.witness) {
        out.witness = dir / ("witness_" + std::to_string(i) + ".json");
        write_text(*out.witness, tabular::to_json(m) + "\n");
      }
    }
    reports.push_back(ordered_json::parse(tabular::to_json(r)));
  }
  ordered_json j;
  j["instances"] = out.instances;
  j["passed"] = out.passed;
  j["seed"] = req.seed;
  j["reports"] = reports;
  write_text(dir / "verify_tabular.json", j.dump(2) + "\n");
  log << out.passed << "/" << out.instances << " instances passed\n";
  if (out.witness) log << "witness MDP written to " << out.witness->string() << '\n';
  return out;
}

}  // namespace cdadp::cli
