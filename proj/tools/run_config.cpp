#include "run_config.hpp"

#include "cdadp/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace cdadp::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Entry number(const std::string& key, T RunConfig::*group, double T::*field) {
  return {key, [=](RunConfig& c, const std::string& v) { (c.*group).*field = parse_double(v); },
          [=](const RunConfig& c) { return fmt((c.*group).*field); }};
}

template <typename T, typename I>
Entry integer(const std::string& key, T RunConfig::*group, I T::*field) {
  return {key, [=](RunConfig& c, const std::string& v) { (c.*group).*field = static_cast<I>(parse_uint(v)); },
          [=](const RunConfig& c) { return fmt(static_cast<std::uint64_t>((c.*group).*field)); }};
}

Entry flag(const std::string& key, bool TrainConfig::*field) {
  return {key, [=](RunConfig& c, const std::string& v) { c.train.*field = parse_bool(v); },
          [=](const RunConfig& c) { return fmt(c.train.*field); }};
}

const std::vector<Entry>& registry() {
  using V = vehicle::VehicleParams;
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back({"task",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "vehicle" && v != "double_integrator") throw ConfigError("unknown task '" + v + "'");
                   c.task = v;
                 },
                 [](const RunConfig& c) { return c.task; }});
    e.push_back({"train.algorithm",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.train.algorithm = algorithm_from_string(v);
                   } catch (const StructuralError& err) {
                     throw ConfigError(err.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.train.algorithm); }});
    e.push_back(integer("train.horizon", &RunConfig::train, &TrainConfig::horizon));
    e.push_back(integer("train.constraint_samples", &RunConfig::train, &TrainConfig::constraint_samples));
    e.push_back(number("train.gamma", &RunConfig::train, &TrainConfig::gamma));
    e.push_back(number("train.delta_a", &RunConfig::train, &TrainConfig::delta_a));
    e.push_back(number("train.delta_b", &RunConfig::train, &TrainConfig::delta_b));
    e.push_back(number("train.eta", &RunConfig::train, &TrainConfig::eta));
    e.push_back(integer("train.agents", &RunConfig::train, &TrainConfig::agents));
    e.push_back(number("train.critic_lr", &RunConfig::train, &TrainConfig::critic_lr));
    e.push_back(integer("train.critic_epochs", &RunConfig::train, &TrainConfig::critic_epochs));
    e.push_back(number("train.gpi_actor_lr", &RunConfig::train, &TrainConfig::gpi_actor_lr));
    e.push_back(integer("train.iterations", &RunConfig::train, &TrainConfig::iterations));
    e.push_back(integer("train.seed", &RunConfig::train, &TrainConfig::seed));
    e.push_back({"train.terminal",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "power_n") {
                     c.train.terminal = TerminalDiscount::PowerN;
                   } else if (v == "power_n_plus_one") {
                     c.train.terminal = TerminalDiscount::PowerNPlusOne;
                   } else {
                     throw ConfigError("terminal must be power_n or power_n_plus_one");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.terminal == TerminalDiscount::PowerN ? "power_n" : "power_n_plus_one");
                 }});
    e.push_back(number("train.metric_damping", &RunConfig::train, &TrainConfig::metric_damping));
    e.push_back({"train.metric_solve",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "low_rank") {
                     c.train.metric_solve = MetricSolve::LowRank;
                   } else if (v == "cg") {
                     c.train.metric_solve = MetricSolve::Cg;
                   } else {
                     throw ConfigError("metric_solve must be low_rank or cg");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.metric_solve == MetricSolve::LowRank ? "low_rank" : "cg");
                 }});
    e.push_back({"train.cg_tol", [](RunConfig& c, const std::string& v) { c.train.cg.tol = parse_double(v); },
                 [](const RunConfig& c) { return fmt(c.train.cg.tol); }});
    e.push_back({"train.cg_max_iters",
                 [](RunConfig& c, const std::string& v) { c.train.cg.max_iters = static_cast<int>(parse_uint(v)); },
                 [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.train.cg.max_iters)); }});
    e.push_back(flag("train.prioritize_violated", &TrainConfig::prioritize_violated));
    e.push_back(integer("train.hidden_layers", &RunConfig::train, &TrainConfig::hidden_layers));
    e.push_back(integer("train.hidden_width", &RunConfig::train, &TrainConfig::hidden_width));
    e.push_back(flag("train.linear_policy", &TrainConfig::linear_policy));
    e.push_back(integer("train.eval_steps", &RunConfig::train, &TrainConfig::eval_steps));
    e.push_back(integer("train.eval_seed", &RunConfig::train, &TrainConfig::eval_seed));
    e.push_back(integer("train.eval_every", &RunConfig::train, &TrainConfig::eval_every));
    e.push_back(number("train.eval_discount", &RunConfig::train, &TrainConfig::eval_discount));
    e.push_back(integer("train.max_episode_steps", &RunConfig::train, &TrainConfig::max_episode_steps));
    e.push_back(integer("train.checkpoint_every", &RunConfig::train, &TrainConfig::checkpoint_every));
    e.push_back(flag("train.record_wall_time", &TrainConfig::record_wall_time));
    e.push_back(integer("train.threads", &RunConfig::train, &TrainConfig::threads));
    e.push_back(number("vehicle.C_f", &RunConfig::vehicle, &V::C_f));
    e.push_back(number("vehicle.C_r", &RunConfig::vehicle, &V::C_r));
    e.push_back(number("vehicle.a", &RunConfig::vehicle, &V::a));
    e.push_back(number("vehicle.b", &RunConfig::vehicle, &V::b));
    e.push_back(number("vehicle.m", &RunConfig::vehicle, &V::m));
    e.push_back(number("vehicle.I_z", &RunConfig::vehicle, &V::I_z));
    e.push_back(number("vehicle.mu", &RunConfig::vehicle, &V::mu));
    e.push_back(number("vehicle.f_sample", &RunConfig::vehicle, &V::f_sample));
    e.push_back(number("vehicle.f_sim", &RunConfig::vehicle, &V::f_sim));
    e.push_back(number("vehicle.R", &RunConfig::vehicle, &V::R));
    e.push_back(number("vehicle.g", &RunConfig::vehicle, &V::g));
    e.push_back({"eval.final_steps",
                 [](RunConfig& c, const std::string& v) { c.final_eval_steps = parse_uint(v); },
                 [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.final_eval_steps)); }});
    e.push_back({"compare.algorithms",
                 [](RunConfig& c, const std::string& v) {
                   auto list = split_list(v);
                   if (list.empty()) throw ConfigError("compare.algorithms needs at least one entry");
                   for (const auto& a : list) parse_algo_variant(a);
                   c.compare_algorithms = std::move(list);
                 },
                 [](const RunConfig& c) { return join(c.compare_algorithms); }});
    e.push_back({"compare.seeds",
                 [](RunConfig& c, const std::string& v) {
                   c.compare_seeds = parse_uint(v);
                   if (c.compare_seeds == 0) throw ConfigError("compare.seeds must be at least 1");
                 },
                 [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.compare_seeds)); }});
    return e;
  }();
  return entries;
}

}  // namespace

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : registry()) {
    if (e.key == key) {
      try {
        e.set(cfg, value);
      } catch (const ConfigError& err) {
        throw ConfigError("key '" + key + "': " + err.what());
      }
      return;
    }
  }
  throw ConfigError("unknown key '" + key + "'");
}

void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + "expected 'key = value'");
    try {
      set_key(cfg, key, value);
    } catch (const ConfigError& err) {
      throw ConfigError(where + err.what());
    }
  }
}

void apply_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(cfg, ss.str(), path.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  try {
    set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  } catch (const ConfigError& err) {
    throw ConfigError("--set " + assignment + ": " + err.what());
  }
}

std::string resolved_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : registry()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : resolved_text(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

Task make_task(const RunConfig& cfg) {
  if (cfg.task == "vehicle") {
    cfg.vehicle.validate();
    return vehicle_task(cfg.vehicle);
  }
  if (cfg.task == "double_integrator") return double_integrator_task();
  throw ConfigError("unknown task '" + cfg.task + "'");
}

AlgoVariant parse_algo_variant(const std::string& text) {
  AlgoVariant v;
  v.label = text;
  const auto colon = text.find(':');
  try {
    v.algorithm = algorithm_from_string(text.substr(0, colon));
  } catch (const StructuralError& err) {
    throw ConfigError(err.what());
  }
  if (colon != std::string::npos) {
    if (v.algorithm != Algorithm::Ptradp) throw ConfigError("only ptradp takes an eta suffix: '" + text + "'");
    v.eta = parse_double(text.substr(colon + 1));
    if (!(v.eta >= 0.0 && v.eta <= 1.0)) throw ConfigError("eta must be in [0, 1]: '" + text + "'");
  }
  return v;
}

}  // namespace cdadp::cli
