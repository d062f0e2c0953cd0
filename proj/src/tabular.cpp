#include "cdadp/tabular.hpp"

#include "cdadp/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cdadp::tabular {

namespace {

void check_tables(const FiniteMDP& mdp) {
  if (mdp.states == 0 || mdp.actions == 0) throw StructuralError("MDP needs at least one state and one action");
  if (mdp.next.size() != mdp.states || mdp.cost.size() != mdp.states) {
    throw StructuralError("transition and cost tables need one row per state");
  }
  for (std::size_t s = 0; s < mdp.states; ++s) {
    if (mdp.next[s].size() != mdp.actions || mdp.cost[s].size() != mdp.actions) {
      throw StructuralError("state " + std::to_string(s) + " needs one entry per action");
    }
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      if (mdp.next[s][a] >= mdp.states) {
        throw StructuralError("transition from state " + std::to_string(s) + " leaves the state set");
      }
      if (!std::isfinite(mdp.cost[s][a])) throw StructuralError("costs must be finite");
    }
  }
  if (!(mdp.gamma > 0.0 && mdp.gamma < 1.0)) throw StructuralError("gamma must be in (0, 1)");
  if (mdp.horizon == 0) throw StructuralError("horizon must be at least 1");
  for (const auto& c : mdp.constraints) {
    if (c.values.size() != mdp.states) throw StructuralError("constraint needs one value per state");
  }
}

bool policy_matches(const Policy& a, const Policy& b, const FeasibleSet& fs) {
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (fs.feasible[s] && a[s] != b[s]) return false;
  }
  return true;
}

std::vector<std::vector<std::size_t>> admissible_actions(const FiniteMDP& mdp, const FeasibleSet& fs) {
  std::vector<std::vector<std::size_t>> out(mdp.states);
  for (std::size_t s = 0; s < mdp.states; ++s) {
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      if (fs.viable[mdp.next[s][a]]) out[s].push_back(a);
    }
  }
  return out;
}

double max_abs_on(const Value& v, const std::vector<bool>& mask) {
  double m = 0.0;
  for (Eigen::Index s = 0; s < v.size(); ++s) {
    if (mask[static_cast<std::size_t>(s)]) m = std::max(m, std::abs(v[s]));
  }
  return m;
}

}  // namespace

void FiniteMDP::validate() const {
  check_tables(*this);
  if (feasible_set(*this).count() == 0) throw InfeasibleError("no state of the MDP is feasible");
}

bool FiniteMDP::safe(std::size_t s) const {
  return std::all_of(constraints.begin(), constraints.end(), [s](const StateConstraint& c) {
    return c.values[s] <= c.bound;
  });
}

double FiniteMDP::terminal_weight() const {
  return ReturnOptions{gamma, terminal}.terminal_weight(horizon);
}

std::size_t FeasibleSet::count() const { return static_cast<std::size_t>(std::count(feasible.begin(), feasible.end(), true)); }

FeasibleSet feasible_set(const FiniteMDP& mdp) {
  check_tables(mdp);
  FeasibleSet fs;
  fs.viable.resize(mdp.states);
  for (std::size_t s = 0; s < mdp.states; ++s) fs.viable[s] = mdp.safe(s);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t s = 0; s < mdp.states; ++s) {
      if (!fs.viable[s]) continue;
      const bool keep = std::any_of(mdp.next[s].begin(), mdp.next[s].end(), [&](std::size_t t) { return fs.viable[t]; });
      if (!keep) {
        fs.viable[s] = false;
        changed = true;
      }
    }
  }
  fs.feasible.resize(mdp.states);
  for (std::size_t s = 0; s < mdp.states; ++s) {
    fs.feasible[s] = std::any_of(mdp.next[s].begin(), mdp.next[s].end(), [&](std::size_t t) { return fs.viable[t]; });
  }
  return fs;
}

bool is_feasible_policy(const FiniteMDP& mdp, const FeasibleSet& fs, const Policy& pi) {
  if (pi.size() != mdp.states) return false;
  for (std::size_t s = 0; s < mdp.states; ++s) {
    if (pi[s] >= mdp.actions) return false;
    if (fs.feasible[s] && !fs.viable[mdp.next[s][pi[s]]]) return false;
  }
  return true;
}

Policy first_feasible_policy(const FiniteMDP& mdp, const FeasibleSet& fs) {
  Policy pi(mdp.states, 0);
  const auto adm = admissible_actions(mdp, fs);
  for (std::size_t s = 0; s < mdp.states; ++s) {
    if (!adm[s].empty()) pi[s] = adm[s].front();
  }
  return pi;
}

Lookahead lookahead(const FiniteMDP& mdp, const Policy& pi, std::size_t s, std::size_t a) {
  Lookahead la;
  double w = 1.0;
  for (std::size_t j = 0; j <= mdp.horizon; ++j) {
    const std::size_t act = j == 0 ? a : pi[s];
    la.discounted_cost += w * mdp.cost[s][act];
    w *= mdp.gamma;
    s = mdp.next[s][act];
    if (!mdp.safe(s)) la.constraints_hold = false;
  }
  la.end = s;
  return la;
}

Value bellman_sweep(const FiniteMDP& mdp, const Policy& pi, const Value& V) {
  const double w = mdp.terminal_weight();
  Value out(static_cast<Eigen::Index>(mdp.states));
  for (std::size_t s = 0; s < mdp.states; ++s) {
    const Lookahead la = lookahead(mdp, pi, s, pi[s]);
    out[static_cast<Eigen::Index>(s)] = la.discounted_cost + w * V[static_cast<Eigen::Index>(la.end)];
  }
  return out;
}

Value policy_evaluation(const FiniteMDP& mdp, const Policy& pi, const Value& V0, std::size_t sweeps) {
  Value V = V0;
  for (std::size_t i = 0; i < sweeps; ++i) V = bellman_sweep(mdp, pi, V);
  return V;
}

Value exact_value(const FiniteMDP& mdp, const Policy& pi) {
  const auto n = static_cast<Eigen::Index>(mdp.states);
  const double w = mdp.terminal_weight();
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
  Value c(n);
  for (std::size_t s = 0; s < mdp.states; ++s) {
    const Lookahead la = lookahead(mdp, pi, s, pi[s]);
    c[static_cast<Eigen::Index>(s)] = la.discounted_cost;
    M(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(la.end)) -= w;
  }
  const auto lu = M.partialPivLu();
  Value V = lu.solve(c);
  V += lu.solve(c - M * V);  // one refinement step
  return V;
}

Policy constrained_improvement(const FiniteMDP& mdp, const FeasibleSet& fs, const Policy& pi, const Value& V,
                               double delta_action) {
  const double w = mdp.terminal_weight();
  Policy out = pi;
  for (std::size_t s = 0; s < mdp.states; ++s) {
    if (!fs.feasible[s]) continue;
    std::vector<std::pair<std::size_t, double>> candidates;
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      const double dist = static_cast<double>(a) - static_cast<double>(pi[s]);
      if (dist * dist > delta_action) continue;
      if (!fs.viable[mdp.next[s][a]]) continue;
      const Lookahead la = lookahead(mdp, pi, s, a);
      if (!la.constraints_hold) continue;
      candidates.emplace_back(a, la.discounted_cost + w * V[static_cast<Eigen::Index>(la.end)]);
    }
    if (candidates.empty()) {
      throw InfeasibleError("feasible state " + std::to_string(s) + " has no admissible action");
    }
    double best = candidates.front().second;
    for (const auto& c : candidates) best = std::min(best, c.second);
    const double cut = best + kTieTolerance * std::max(1.0, std::abs(best));
    for (const auto& c : candidates) {
      if (c.second <= cut) {
        out[s] = c.first;
        break;
      }
    }
  }
  return out;
}

PolicyIterationResult constrained_policy_iteration(const FiniteMDP& mdp, const Policy& pi0, double delta_action) {
  const FeasibleSet fs = feasible_set(mdp);
  if (!is_feasible_policy(mdp, fs, pi0)) throw StructuralError("initial policy is not feasible");
  const double limit = std::pow(static_cast<double>(mdp.actions), static_cast<double>(mdp.states));
  PolicyIterationResult res;
  Policy pi = pi0;
  while (true) {
    const Value V = exact_value(mdp, pi);
    res.trace.policies.push_back(pi);
    res.trace.values.push_back(V);
    Policy next = constrained_improvement(mdp, fs, pi, V, delta_action);
    ++res.iterations;
    if (policy_matches(next, pi, fs)) {
      res.policy = pi;
      res.value = V;
      return res;
    }
    if (static_cast<double>(res.iterations) > limit) {
      res.converged = false;
      res.policy = pi;
      res.value = V;
      return res;
    }
    pi = std::move(next);
  }
}

BruteForceResult brute_force_optimal(const FiniteMDP& mdp) {
  const FeasibleSet fs = feasible_set(mdp);
  const auto adm = admissible_actions(mdp, fs);
  std::vector<std::size_t> free_states;
  double space = 1.0;
  for (std::size_t s = 0; s < mdp.states; ++s) {
    if (fs.feasible[s]) {
      free_states.push_back(s);
      space *= static_cast<double>(adm[s].size());
    }
  }
  if (space > static_cast<double>(kMaxEnumeration)) throw StructuralError("policy space too large to enumerate");

  // Odometer over the admissible actions of the feasible states.
  auto for_each_policy = [&](const auto& fn) {
    std::vector<std::size_t> digit(free_states.size(), 0);
    Policy pi = first_feasible_policy(mdp, fs);
    while (true) {
      for (std::size_t k = 0; k < free_states.size(); ++k) pi[free_states[k]] = adm[free_states[k]][digit[k]];
      fn(pi);
      std::size_t k = 0;
      for (; k < digit.size(); ++k) {
        if (++digit[k] < adm[free_states[k]].size()) break;
        digit[k] = 0;
      }
      if (k == digit.size()) return;
    }
  };

  BruteForceResult res;
  res.value = Value::Constant(static_cast<Eigen::Index>(mdp.states), std::numeric_limits<double>::infinity());
  for_each_policy([&](const Policy& pi) {
    res.value = res.value.cwiseMin(exact_value(mdp, pi));
    ++res.enumerated;
  });
  double best_gap = std::numeric_limits<double>::infinity();
  for_each_policy([&](const Policy& pi) {
    const double gap = max_abs_on(exact_value(mdp, pi) - res.value, fs.feasible);
    if (gap < best_gap) {
      best_gap = gap;
      res.policy = pi;
    }
  });
  res.attained = best_gap <= 1e-10 * (1.0 + max_abs_on(res.value, fs.feasible));
  for (std::size_t s = 0; s < mdp.states; ++s) {
    if (!fs.feasible[s]) res.value[static_cast<Eigen::Index>(s)] = std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

FiniteMDP random_mdp(std::mt19937_64& rng, const RandomMdpOptions& opts) {
  auto uniform_int = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    FiniteMDP mdp;
    mdp.states = uniform_int(2, std::max<std::size_t>(2, opts.max_states));
    mdp.actions = uniform_int(2, std::max<std::size_t>(2, opts.max_actions));
    mdp.horizon = uniform_int(1, std::max<std::size_t>(1, opts.max_horizon));
    mdp.gamma = opts.gamma_lo + (opts.gamma_hi - opts.gamma_lo) * unit(rng);
    mdp.next.assign(mdp.states, std::vector<std::size_t>(mdp.actions));
    mdp.cost.assign(mdp.states, std::vector<double>(mdp.actions));
    for (std::size_t s = 0; s < mdp.states; ++s) {
      for (std::size_t a = 0; a < mdp.actions; ++a) {
        mdp.next[s][a] = uniform_int(0, mdp.states - 1);
        mdp.cost[s][a] = unit(rng);
      }
    }
    StateConstraint c;
    c.bound = 1.0 - opts.unsafe_fraction;
    for (std::size_t s = 0; s < mdp.states; ++s) c.values.push_back(unit(rng));
    mdp.constraints.push_back(std::move(c));
    if (feasible_set(mdp).count() > 0) return mdp;
  }
  throw InfeasibleError("could not draw an MDP with a feasible state");
}

VerifyReport verify(const FiniteMDP& mdp, const VerifyOptions& opts, std::uint64_t seed) {
  mdp.validate();
  const FeasibleSet fs = feasible_set(mdp);
  std::mt19937_64 rng(seed);
  VerifyReport rep;

  // Random feasible starting policy.
  const auto adm = admissible_actions(mdp, fs);
  Policy pi0 = first_feasible_policy(mdp, fs);
  for (std::size_t s = 0; s < mdp.states; ++s) {
    if (fs.feasible[s]) pi0[s] = adm[s][std::uniform_int_distribution<std::size_t>(0, adm[s].size() - 1)(rng)];
  }

  rep.contraction_bound = mdp.terminal_weight();
  const Value V_pi = exact_value(mdp, pi0);
  Value V(static_cast<Eigen::Index>(mdp.states));
  for (Eigen::Index s = 0; s < V.size(); ++s) V[s] = std::uniform_real_distribution<double>(-100.0, 100.0)(rng);
  // Below this distance the rounding error of V_pi dominates the measured ratio.
  const double floor = 1e-3 * (1.0 + V_pi.cwiseAbs().maxCoeff());
  for (std::size_t i = 0; i < opts.sweeps; ++i) {
    const double before = (V - V_pi).cwiseAbs().maxCoeff();
    if (before <= floor) break;
    V = bellman_sweep(mdp, pi0, V);
    const double ratio = (V - V_pi).cwiseAbs().maxCoeff() / before;
    rep.max_contraction_ratio = std::max(rep.max_contraction_ratio, ratio);
  }
  rep.contraction_ok = rep.max_contraction_ratio <= rep.contraction_bound + opts.contraction_tol;

  const PolicyIterationResult cpi = constrained_policy_iteration(mdp, pi0, opts.delta_action);
  rep.iterations = cpi.iterations;
  rep.converged = cpi.converged;
  rep.iteration_bound =
      static_cast<double>(cpi.iterations) <= std::pow(static_cast<double>(mdp.actions), static_cast<double>(mdp.states));
  rep.max_value_increase = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < cpi.trace.values.size(); ++k) {
    const Value& prev = cpi.trace.values[k - 1];
    const Value& cur = cpi.trace.values[k];
    for (std::size_t s = 0; s < mdp.states; ++s) {
      if (!fs.feasible[s]) continue;
      const auto i = static_cast<Eigen::Index>(s);
      const double rise = cur[i] - prev[i];
      rep.max_value_increase = std::max(rep.max_value_increase, rise);
      if (rise > opts.monotone_tol * std::max(1.0, std::abs(prev[i]))) rep.monotone_ok = false;
    }
  }
  if (cpi.trace.values.size() < 2) rep.max_value_increase = 0.0;

  if (!cpi.converged) {
    rep.optimal_ok = false;
  } else if (std::isinf(opts.delta_action)) {
    const BruteForceResult bf = brute_force_optimal(mdp);
    rep.optimum_attained = bf.attained;
    for (std::size_t s = 0; s < mdp.states; ++s) {
      if (!fs.feasible[s]) continue;
      const auto i = static_cast<Eigen::Index>(s);
      rep.max_optimality_gap = std::max(rep.max_optimality_gap, std::abs(cpi.value[i] - bf.value[i]));
    }
    rep.optimal_ok = rep.max_optimality_gap <= opts.optimality_tol;
  } else {
    // Local fixed point: no admissible action within delta_action improves the lookahead objective.
    const Policy again = constrained_improvement(mdp, fs, cpi.policy, cpi.value, opts.delta_action);
    rep.optimal_ok = policy_matches(again, cpi.policy, fs);
  }
  return rep;
}

std::string to_json(const FiniteMDP& mdp) {
  nlohmann::ordered_json j;
  j["states"] = mdp.states;
  j["actions"] = mdp.actions;
  j["gamma"] = mdp.gamma;
  j["horizon"] = mdp.horizon;
  j["terminal"] = mdp.terminal == TerminalDiscount::PowerN ? "power_n" : "power_n_plus_one";
  j["next"] = mdp.next;
  j["cost"] = mdp.cost;
  nlohmann::ordered_json cons = nlohmann::ordered_json::array();
  for (const auto& c : mdp.constraints) cons.push_back({{"values", c.values}, {"bound", c.bound}});
  j["constraints"] = cons;
  return j.dump(2);
}

FiniteMDP mdp_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw StructuralError(std::string("MDP file is not valid JSON: ") + e.what());
  }
  static const std::vector<std::string> known = {"states", "actions", "gamma", "horizon", "terminal", "next", "cost",
                                                 "constraints"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw StructuralError("unknown MDP key '" + key + "'");
  }
  FiniteMDP mdp;
  try {
    mdp.states = j.at("states").get<std::size_t>();
    mdp.actions = j.at("actions").get<std::size_t>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.horizon = j.at("horizon").get<std::size_t>();
    mdp.next = j.at("next").get<std::vector<std::vector<std::size_t>>>();
    mdp.cost = j.at("cost").get<std::vector<std::vector<double>>>();
    if (j.contains("terminal")) {
      const auto t = j["terminal"].get<std::string>();
      if (t == "power_n") {
        mdp.terminal = TerminalDiscount::PowerN;
      } else if (t == "power_n_plus_one") {
        mdp.terminal = TerminalDiscount::PowerNPlusOne;
      } else {
        throw StructuralError("unknown terminal discount '" + t + "'");
      }
    }
    if (j.contains("constraints")) {
      for (const auto& c : j["constraints"]) {
        mdp.constraints.push_back({c.at("values").get<std::vector<double>>(), c.at("bound").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed MDP description: ") + e.what());
  }
  mdp.validate();
  return mdp;
}

FiniteMDP load_mdp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open MDP file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return mdp_from_json(ss.str());
}

std::string to_json(const VerifyReport& r) {
  nlohmann::ordered_json j;
  j["passed"] = r.passed();
  j["contraction_ok"] = {{"passed", r.contraction_ok}, {"max_ratio", r.max_contraction_ratio}, {"bound", r.contraction_bound}};
  j["monotone_ok"] = {{"passed", r.monotone_ok}, {"max_increase", r.max_value_increase}};
  j["optimal_ok"] = {{"passed", r.optimal_ok}, {"max_gap", r.max_optimality_gap}, {"optimum_attained", r.optimum_attained}};
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["iteration_bound"] = r.iteration_bound;
  return j.dump();
}

}  // namespace cdadp::tabular
