#include "cdadp/errors.hpp"
#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace cdadp;
using namespace cdadp::cli;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> iters;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "configuration file (key = value per line)")->check(CLI::ExistingFile);
  app->add_option("--set", f.sets, "override one key, e.g. --set train.agents=64")->take_all();
  app->add_option("--seed", f.seed, "training seed (train.seed)");
  app->add_option("--out", f.out, "output directory (default: $CDADP_OUT_ROOT or runs/)");
  app->add_option("--iters", f.iters, "training iterations (train.iterations)");
}

RunConfig load(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) apply_file(cfg, f.config);
  for (const auto& s : f.sets) apply_override(cfg, s);
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.iters) cfg.train.iterations = *f.iters;
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained approximate dynamic programming: training, evaluation and checks"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string train_algo;
  auto* train_cmd = app.add_subcommand("train", "train one policy");
  add_common(train_cmd, train_flags);
  train_cmd->add_option("--algo", train_algo, "cdadp | tradp | ptradp[:eta] | gpi");

  EvalRequest eval_req;
  std::string eval_ckpt;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint from a run directory");
  eval_cmd->add_option("run_dir", eval_req.run_dir, "run directory containing config.resolved")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "policy checkpoint (default: latest)");
  eval_cmd->add_option("--steps", eval_req.steps, "evaluation steps (default: eval.final_steps)");
  eval_cmd->add_option("--seed", eval_req.seed, "start-state seed (default: train.eval_seed)");

  CommonFlags cmp_flags;
  std::vector<std::string> cmp_algos;
  std::optional<std::size_t> cmp_seeds;
  auto* cmp_cmd = app.add_subcommand("compare", "train several algorithms over several seeds");
  add_common(cmp_cmd, cmp_flags);
  cmp_cmd->add_option("--algo", cmp_algos, "variants (default: compare.algorithms)")->take_all();
  cmp_cmd->add_option("--seeds", cmp_seeds, "seeds per variant (default: compare.seeds)");

  TabularRequest tab_req;
  std::string tab_file, tab_out, tab_terminal;
  auto* tab_cmd = app.add_subcommand("verify-tabular", "check constrained policy iteration on finite MDPs");
  tab_cmd->add_option("mdp", tab_file, "MDP JSON file")->check(CLI::ExistingFile);
  tab_cmd->add_option("--random", tab_req.random_count, "number of random MDPs");
  tab_cmd->add_option("--seed", tab_req.seed, "generator and check seed");
  tab_cmd->add_option("--delta-action", tab_req.options.delta_action, "squared action-distance bound per step");
  tab_cmd->add_option("--terminal", tab_terminal, "power_n | power_n_plus_one")
      ->check(CLI::IsMember({"power_n", "power_n_plus_one"}));
  tab_cmd->add_option("--out", tab_out, "output directory");
  tab_cmd->get_option("mdp")->excludes("--random");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      RunConfig cfg = load(train_flags);
      std::string label = to_string(cfg.train.algorithm);
      if (!train_algo.empty()) {
        const AlgoVariant v = parse_algo_variant(train_algo);
        cfg.train.algorithm = v.algorithm;
        if (v.eta >= 0.0) cfg.train.eta = v.eta;
        label = v.label;
      }
      const fs::path dir = train_flags.out.empty() ? default_run_dir("train", label, cfg) : fs::path(train_flags.out);
      run_training(cfg, dir, std::cout);
      return 0;
    }
    if (*eval_cmd) {
      if (!eval_ckpt.empty()) eval_req.checkpoint = eval_ckpt;
      const EvalOutcome out = run_eval(eval_req, std::cout);
      return out.report.failed_at ? 1 : 0;
    }
    if (*cmp_cmd) {
      RunConfig cfg = load(cmp_flags);
      const auto& names = cmp_algos.empty() ? cfg.compare_algorithms : cmp_algos;
      std::vector<AlgoVariant> variants;
      for (const auto& n : names) variants.push_back(parse_algo_variant(n));
      const std::size_t seeds = cmp_seeds.value_or(cfg.compare_seeds);
      if (seeds == 0) throw ConfigError("--seeds must be at least 1");
      const fs::path dir = cmp_flags.out.empty() ? default_run_dir("compare", "all", cfg) : fs::path(cmp_flags.out);
      run_compare(cfg, variants, seeds, dir, std::cout);
      return 0;
    }
    if (*tab_cmd) {
      if (!tab_file.empty()) tab_req.mdp_file = tab_file;
      if (tab_terminal == "power_n") tab_req.terminal = TerminalDiscount::PowerN;
      if (tab_terminal == "power_n_plus_one") tab_req.terminal = TerminalDiscount::PowerNPlusOne;
      const fs::path dir = tab_out.empty() ? output_root() / ("tabular_seed" + std::to_string(tab_req.seed))
                                           : fs::path(tab_out);
      const TabularOutcome out = run_verify_tabular(tab_req, dir, std::cout);
      return out.passed == out.instances ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StructuralError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
