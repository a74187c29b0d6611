#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "storval/error.hpp"
#include "storval/lp.hpp"
#include "storval/markov.hpp"
#include "storval/stage.hpp"

namespace storval {

/**
 * @brief Polyhedral lower models of the cost-to-go, one per (stage, node).
 *
 * Stage T holds the outer model of the terminal cost. Pools only grow, so
 * evaluations are nondecreasing over time.
 */
class CutPool {
 public:
  CutPool() = default;

  CutPool(const MarkovChain& chain, Eigen::Index state_dim) : state_dim_(state_dim) {
    pools_.resize(static_cast<std::size_t>(chain.horizon()) + 1);
    for (int t = 0; t <= chain.horizon(); ++t) pools_[static_cast<std::size_t>(t)].resize(chain.node_count(t));
  }

  int horizon() const { return static_cast<int>(pools_.size()) - 1; }
  Eigen::Index state_dim() const { return state_dim_; }
  std::size_t node_count(int t) const { return pools_.at(static_cast<std::size_t>(t)).size(); }

  const std::vector<Cut>& cuts(int t, std::size_t node) const {
    return pools_.at(static_cast<std::size_t>(t)).at(node);
  }

  void add(int t, std::size_t node, Cut cut) {
    if (cut.slope.size() != state_dim_) throw ValidationError("cut slope has wrong dimension");
    pools_.at(static_cast<std::size_t>(t)).at(node).push_back(std::move(cut));
  }

  /// Appends unless an identical cut is already stored; returns true if added.
  bool add_unique(int t, std::size_t node, Cut cut, double tol = 1e-12) {
    for (const Cut& c : cuts(t, node)) {
      if (std::abs(c.intercept - cut.intercept) <= tol * (1.0 + std::abs(c.intercept)) &&
          (c.slope - cut.slope).cwiseAbs().maxCoeff() <= tol * (1.0 + c.slope.cwiseAbs().maxCoeff())) {
        return false;
      }
    }
    add(t, node, std::move(cut));
    return true;
  }

  double evaluate(int t, std::size_t node, const Eigen::VectorXd& x) const {
    const auto& pool = cuts(t, node);
    if (pool.empty()) throw ValidationError("evaluating an empty cut pool");
    double best = -lp::kInf;
    for (const Cut& c : pool) best = std::max(best, c(x));
    return best;
  }

  std::size_t total_cuts() const {
    std::size_t total = 0;
    for (const auto& stage : pools_)
      for (const auto& pool : stage) total += pool.size();
    return total;
  }

 private:
  Eigen::Index state_dim_ = 0;
  std::vector<std::vector<std::vector<Cut>>> pools_;
};

/// Seeds every pool with the constant cut `bound`.
inline CutPool init_pools(const StageProblemSpec& spec, const MarkovChain& chain, double bound) {
  spec.validate(chain);
  CutPool pools(chain, spec.state_dim);
  for (int t = 0; t <= chain.horizon(); ++t)
    for (std::size_t i = 0; i < chain.node_count(t); ++i) pools.add(t, i, {bound, Eigen::VectorXd::Zero(spec.state_dim)});
  return pools;
}

/// Per-stage bounds, `bounds[t]` for t = 0..T.
inline CutPool init_pools(const StageProblemSpec& spec, const MarkovChain& chain, const std::vector<double>& bounds) {
  spec.validate(chain);
  if (bounds.size() != static_cast<std::size_t>(chain.horizon()) + 1) throw ValidationError("need T + 1 stage bounds");
  CutPool pools(chain, spec.state_dim);
  for (int t = 0; t <= chain.horizon(); ++t)
    for (std::size_t i = 0; i < chain.node_count(t); ++i)
      pools.add(t, i, {bounds[static_cast<std::size_t>(t)], Eigen::VectorXd::Zero(spec.state_dim)});
  return pools;
}

inline double lower_bound(const CutPool& pools, const Eigen::VectorXd& x0) { return pools.evaluate(0, 0, x0); }

/// Stage-LP solution at (t, node, x).
///
/// `wait_and_see[i]` and `next_state[i]` are indexed by successor node and
/// left empty for successors that were not solved.
struct StageDecision {
  double value = 0.0;
  Eigen::VectorXd subgradient;
  Eigen::VectorXd here_and_now;
  std::vector<Eigen::VectorXd> wait_and_see;
  std::vector<Eigen::VectorXd> next_state;
};

struct EngineOptions {
  lp::Tolerances lp;
  /// Called with every stage LP before it is solved (debug dumps).
  std::function<void(int t, std::size_t node, const lp::LinearProgram&)> lp_observer;
  /// Solve stage LPs over a growing subset of the cuts, adding the most
  /// violated cut per successor until none is violated. The result is an
  /// optimum of the full LP; off means every cut enters the LP at once.
  bool cut_generation = true;
};

namespace detail {

inline std::string describe_state(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os << "(";
  for (Eigen::Index k = 0; k < x.size(); ++k) os << (k ? ", " : "") << x[k];
  os << ")";
  return os.str();
}

inline lp::Solution checked_solve(const lp::LinearProgram& program, int t, std::size_t node, const Eigen::VectorXd& x,
                                  const EngineOptions& options) {
  if (options.lp_observer) options.lp_observer(t, node, program);
  lp::Solution sol = lp::solve(program, options.lp);
  if (sol.status != lp::Status::Optimal) {
    throw NumericalError("stage LP at t=" + std::to_string(t) + ", node=" + std::to_string(node) + ", state=" +
                         describe_state(x) + " is " + lp::to_string(sol.status));
  }
  return sol;
}

struct StageSolve {
  StageLp stage;
  lp::Solution solution;
};

// The control-box point with every coordinate at 0 clamped into the box,
// plus each coordinate moved to its finite bounds.
inline std::vector<Eigen::VectorXd> probe_controls(const Box& box) {
  const Eigen::Index m = box.lower.size();
  const Eigen::VectorXd centre = box.project(Eigen::VectorXd::Zero(m));
  std::vector<Eigen::VectorXd> out{centre};
  for (Eigen::Index k = 0; k < m; ++k) {
    for (double v : {box.lower[k], box.upper[k]}) {
      if (!std::isfinite(v)) continue;
      Eigen::VectorXd p = centre;
      p[k] = v;
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline std::size_t best_cut(std::span<const Cut> cuts, const Eigen::VectorXd& x, double* value = nullptr) {
  std::size_t best = 0;
  double best_value = -lp::kInf;
  for (std::size_t k = 0; k < cuts.size(); ++k) {
    const double v = cuts[k](x);
    if (v > best_value) {
      best = k;
      best_value = v;
    }
  }
  if (value) *value = best_value;
  return best;
}

inline StageSolve solve_stage_lp(const StageProblemSpec& spec, const Eigen::VectorXd& x,
                                 std::span<const Successor> successors, int t, std::size_t node,
                                 const EngineOptions& options) {
  if (!options.cut_generation) {
    StageLp stage = stage_lp(spec, x, successors);
    lp::Solution sol = checked_solve(stage.program, t, node, x, options);
    return {std::move(stage), std::move(sol)};
  }
  if (options.lp_observer) options.lp_observer(t, node, stage_lp(spec, x, successors).program);

  const std::size_t count = successors.size();
  std::vector<std::vector<Cut>> active(count);
  std::vector<std::vector<char>> used(count);
  const Eigen::VectorXd ub0 = spec.here_and_now_box.project(Eigen::VectorXd::Zero(spec.here_and_now_dim));
  const auto probes = probe_controls(spec.wait_and_see_box);
  for (std::size_t s = 0; s < count; ++s) {
    const auto cuts = successors[s].cuts;
    if (cuts.empty()) throw ValidationError("empty cut pool: pools must be initialised before solving");
    used[s].assign(cuts.size(), 0);
    for (const auto& ua : probes) {
      const Eigen::VectorXd next = spec.state_box.project(successors[s].dynamics.apply(x, ub0, ua));
      const std::size_t k = best_cut(cuts, next);
      if (!used[s][k]) {
        used[s][k] = 1;
        active[s].push_back(cuts[k]);
      }
    }
  }

  std::vector<Successor> restricted(successors.begin(), successors.end());
  while (true) {
    for (std::size_t s = 0; s < count; ++s) restricted[s].cuts = active[s];
    StageLp stage = stage_lp(spec, x, restricted);
    lp::Solution sol = lp::solve(stage.program, options.lp);
    if (sol.status == lp::Status::Infeasible) {
      throw NumericalError("stage LP at t=" + std::to_string(t) + ", node=" + std::to_string(node) +
                           ", state=" + describe_state(x) + " is infeasible");
    }
    if (sol.status != lp::Status::Optimal) {
      // A restriction can be unbounded where the full LP is not.
      StageLp full = stage_lp(spec, x, successors);
      lp::Solution full_sol = checked_solve(full.program, t, node, x, options);
      return {std::move(full), std::move(full_sol)};
    }
    bool added = false;
    for (std::size_t s = 0; s < count; ++s) {
      const Eigen::VectorXd next = sol.primal.segment(stage.layout.next_state[s], spec.state_dim);
      const double theta = sol.primal[stage.layout.epigraph[s]];
      double value = 0.0;
      const std::size_t k = best_cut(successors[s].cuts, next, &value);
      if (value > theta + 1e-9 * std::max(1.0, std::abs(theta)) && !used[s][k]) {
        used[s][k] = 1;
        active[s].push_back(successors[s].cuts[k]);
        added = true;
      }
    }
    if (!added) return {std::move(stage), std::move(sol)};
  }
}

}  // namespace detail

/**
 * @brief Solves the stage problem at (t, node, x) against the pools of t + 1.
 *
 * Without here-and-now controls the expectation separates, so each successor
 * is an independent LP; `only` restricts the solve to one realised successor
 * (value and subgradient then refer to that successor alone). With
 * here-and-now controls a single LP couples all successors.
 */
inline StageDecision solve_stage(const StageProblemSpec& spec, const MarkovChain& chain, const CutPool& pools, int t,
                                 std::size_t node, const Eigen::VectorXd& x, std::optional<std::size_t> only = {},
                                 const EngineOptions& options = {}) {
  if (t < 0 || t >= chain.horizon()) throw ValidationError("no decision at stage " + std::to_string(t));
  const std::size_t count = chain.node_count(t + 1);
  StageDecision out;
  out.subgradient = Eigen::VectorXd::Zero(spec.state_dim);
  out.here_and_now = Eigen::VectorXd::Zero(spec.here_and_now_dim);
  out.wait_and_see.resize(count);
  out.next_state.resize(count);

  const auto successor = [&](std::size_t i, double prob) {
    return Successor{spec.dynamics(t, node, i), std::span<const Cut>(pools.cuts(t + 1, i)), prob};
  };
  const auto read_block = [&](const StageLp& stage, const lp::Solution& sol, std::size_t s, std::size_t i) {
    out.wait_and_see[i] = sol.primal.segment(stage.layout.wait_and_see[s], spec.wait_and_see_dim);
    out.next_state[i] = sol.primal.segment(stage.layout.next_state[s], spec.state_dim);
  };

  if (spec.here_and_now_dim == 0) {
    for (std::size_t i = 0; i < count; ++i) {
      if (only && *only != i) continue;
      const double prob = chain.probability(t, node, i);
      if (!only && prob == 0.0) continue;
      const std::vector<Successor> succ{successor(i, 1.0)};
      const auto [stage, sol] = detail::solve_stage_lp(spec, x, succ, t, node, options);
      read_block(stage, sol, 0, i);
      const double weight = only ? 1.0 : prob;
      out.value += weight * sol.value;
      out.subgradient += weight * sol.duals.head(spec.state_dim);
    }
    return out;
  }

  std::vector<Successor> succ;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < count; ++i) {
    const double prob = chain.probability(t, node, i);
    if (prob == 0.0 && !(only && *only == i)) continue;
    succ.push_back(successor(i, prob));
    index.push_back(i);
  }
  const auto [stage, sol] = detail::solve_stage_lp(spec, x, succ, t, node, options);
  out.value = sol.value;
  out.subgradient = sol.duals.head(spec.state_dim);
  out.here_and_now = sol.primal.segment(stage.layout.here_and_now, spec.here_and_now_dim);
  for (std::size_t s = 0; s < index.size(); ++s) read_block(stage, sol, s, index[s]);
  return out;
}

/// Sampled path and the states / controls the current policy applies on it.
struct Trajectory {
  std::vector<std::size_t> nodes;             // t = 0..T
  std::vector<Eigen::VectorXd> states;        // t = 0..T
  std::vector<Eigen::VectorXd> here_and_now;  // t = 0..T-1
  std::vector<Eigen::VectorXd> wait_and_see;  // control applied on the move t -> t+1
  double cost = 0.0;                          // running costs + terminal cost
};

/// Uniform in [0, 1) from the top 53 bits; portable across standard libraries.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Inverse-CDF draw of the successor of `from` at stage t.
inline std::size_t sample_successor(const MarkovChain& chain, int t, std::size_t from, std::mt19937_64& rng) {
  const double u = uniform01(rng);
  const auto& p = chain.transitions[static_cast<std::size_t>(t)];
  double cum = 0.0;
  std::size_t last = 0;
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    const double pi = p(static_cast<Eigen::Index>(from), i);
    if (pi <= 0.0) continue;
    cum += pi;
    last = static_cast<std::size_t>(i);
    if (u < cum) return last;
  }
  return last;
}

inline Trajectory forward_pass(const StageProblemSpec& spec, const MarkovChain& chain, const CutPool& pools,
                               const Eigen::VectorXd& x0, std::mt19937_64& rng, const EngineOptions& options = {}) {
  const int horizon = chain.horizon();
  Trajectory traj;
  traj.nodes.push_back(0);
  traj.states.push_back(x0);
  for (int t = 0; t < horizon; ++t) {
    const std::size_t from = traj.nodes.back();
    const std::size_t to = sample_successor(chain, t, from, rng);
    const StageDecision d = solve_stage(spec, chain, pools, t, from, traj.states.back(), to, options);
    const Eigen::VectorXd& ua = d.wait_and_see[to];
    const Eigen::VectorXd next = spec.dynamics(t, from, to).apply(traj.states.back(), d.here_and_now, ua);
    traj.cost += spec.here_and_now_cost.dot(d.here_and_now) + spec.wait_and_see_cost.dot(ua);
    traj.here_and_now.push_back(d.here_and_now);
    traj.wait_and_see.push_back(ua);
    traj.nodes.push_back(to);
    traj.states.push_back(next);
  }
  traj.cost += spec.terminal(traj.states.back());
  return traj;
}

inline Trajectory forward_pass(const StageProblemSpec& spec, const MarkovChain& chain, const CutPool& pools,
                               const Eigen::VectorXd& x0, std::uint64_t seed, const EngineOptions& options = {}) {
  std::mt19937_64 rng(seed);
  return forward_pass(spec, chain, pools, x0, rng, options);
}

/// Tangent of the terminal cost at x.
inline Cut terminal_cut(const StageProblemSpec& spec, const Eigen::VectorXd& x) {
  Cut cut;
  const double xc = x[spec.terminal.coordinate];
  const double slope = spec.terminal.derivative(xc);
  cut.slope = Eigen::VectorXd::Zero(spec.state_dim);
  cut.slope[spec.terminal.coordinate] = slope;
  cut.intercept = spec.terminal.value(xc) - slope * xc;
  return cut;
}

namespace detail {

inline bool same_transition(const Transition& a, const Transition& b) {
  return a.state == b.state && a.here_and_now == b.here_and_now && a.wait_and_see == b.wait_and_see &&
         a.constant == b.constant;
}

// Stage-t nodes whose moves into stage t + 1 use the same dynamics as the
// moves out of `node`, so that per-successor LPs can be shared.
inline bool shares_dynamics(const StageProblemSpec& spec, const MarkovChain& chain, int t, std::size_t node,
                            std::size_t other) {
  for (std::size_t i = 0; i < chain.node_count(t + 1); ++i)
    if (!same_transition(spec.dynamics(t, node, i), spec.dynamics(t, other, i))) return false;
  return true;
}

}  // namespace detail

/**
 * @brief Refines the pools along a forward trajectory.
 *
 * The terminal tangent at X_T is added to every stage-T pool (the terminal
 * cost does not depend on the node), then for t = T-1..0 the stage problem
 * at the visited (t, node, X_t) is solved against the freshly updated t + 1
 * pools and its cut appended to pool (t, node).
 *
 * With `all_nodes` the cut is also generated at the same X_t for every other
 * node of stage t, using that node's transition row. Without here-and-now
 * controls and with source-independent dynamics the successor LPs are
 * solved once and reused, so the extra cuts cost no additional LPs.
 */
inline void backward_pass(const StageProblemSpec& spec, const MarkovChain& chain, CutPool& pools,
                          const Trajectory& traj, bool skip_duplicates = false, const EngineOptions& options = {},
                          bool all_nodes = false) {
  const int horizon = chain.horizon();
  if (traj.states.size() != static_cast<std::size_t>(horizon) + 1) {
    throw ValidationError("trajectory does not match the chain horizon");
  }
  const auto append = [&](int t, std::size_t node, Cut cut) {
    if (skip_duplicates) pools.add_unique(t, node, std::move(cut));
    else pools.add(t, node, std::move(cut));
  };
  const Cut tangent = terminal_cut(spec, traj.states.back());
  for (std::size_t i = 0; i < chain.node_count(horizon); ++i) append(horizon, i, tangent);

  for (int t = horizon - 1; t >= 0; --t) {
    const std::size_t node = traj.nodes[static_cast<std::size_t>(t)];
    const Eigen::VectorXd& x = traj.states[static_cast<std::size_t>(t)];
    const std::size_t count = chain.node_count(t);
    if (!all_nodes || count == 1) {
      const StageDecision d = solve_stage(spec, chain, pools, t, node, x, std::nullopt, options);
      append(t, node, {d.value - d.subgradient.dot(x), d.subgradient});
      continue;
    }

    // Per-successor values and subgradients at x, solved on demand.
    const std::size_t succ_count = chain.node_count(t + 1);
    std::vector<std::optional<std::pair<double, Eigen::VectorXd>>> per_successor(succ_count);
    const auto successor_value = [&](std::size_t i) -> const std::pair<double, Eigen::VectorXd>& {
      if (!per_successor[i]) {
        const StageDecision d = solve_stage(spec, chain, pools, t, node, x, i, options);
        per_successor[i].emplace(d.value, d.subgradient);
      }
      return *per_successor[i];
    };

    std::vector<Cut> fresh;
    for (std::size_t j = 0; j < count; ++j) {
      StageDecision d;
      if (spec.here_and_now_dim == 0 && detail::shares_dynamics(spec, chain, t, node, j)) {
        d.subgradient = Eigen::VectorXd::Zero(spec.state_dim);
        for (std::size_t i = 0; i < succ_count; ++i) {
          const double prob = chain.probability(t, j, i);
          if (prob == 0.0) continue;
          const auto& [value, slope] = successor_value(i);
          d.value += prob * value;
          d.subgradient += prob * slope;
        }
      } else {
        d = solve_stage(spec, chain, pools, t, j, x, std::nullopt, options);
      }
      fresh.push_back({d.value - d.subgradient.dot(x), d.subgradient});
    }
    for (std::size_t j = 0; j < count; ++j) append(t, j, std::move(fresh[j]));
  }
}

struct TrainOptions {
  int iterations = 500;
  std::uint64_t seed = 1;
  /// Stop early once the bound gains less than this over `stall_window`
  /// consecutive iterations; 0 disables the check.
  double stall_tolerance = 0.0;
  int stall_window = 50;
  int forward_paths = 1;
  bool skip_duplicate_cuts = false;
  /// Generate the backward cut at every node of the visited stage.
  bool all_nodes = true;
  bool record_timings = true;
  EngineOptions engine;
};

struct IterationRecord {
  int iteration = 0;
  double lower_bound = 0.0;
  double forward_cost = 0.0;
  std::size_t cuts = 0;
  double ms = 0.0;
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
  bool stalled = false;

  double final_bound() const { return iterations.empty() ? -lp::kInf : iterations.back().lower_bound; }
};

/// Alternates forward and backward passes; pools are refined in place.
inline TrainReport train(const StageProblemSpec& spec, const MarkovChain& chain, CutPool& pools,
                         const Eigen::VectorXd& x0, const TrainOptions& options) {
  if (options.iterations < 1) throw ValidationError("training needs at least one iteration");
  if (options.forward_paths < 1) throw ValidationError("need at least one forward path per iteration");
  spec.validate(chain);
  std::mt19937_64 rng(options.seed);
  TrainReport report;
  for (int k = 1; k <= options.iterations; ++k) {
    const auto start = std::chrono::steady_clock::now();
    double cost = 0.0;
    std::vector<Trajectory> paths;
    for (int p = 0; p < options.forward_paths; ++p) {
      paths.push_back(forward_pass(spec, chain, pools, x0, rng, options.engine));
      cost += paths.back().cost;
    }
    for (const auto& path : paths) backward_pass(spec, chain, pools, path, options.skip_duplicate_cuts, options.engine, options.all_nodes);

    IterationRecord rec;
    rec.iteration = k;
    rec.lower_bound = lower_bound(pools, x0);
    rec.forward_cost = cost / options.forward_paths;
    rec.cuts = pools.total_cuts();
    if (options.record_timings) {
      rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    report.iterations.push_back(rec);

    const int w = options.stall_window;
    if (options.stall_tolerance > 0.0 && k > w &&
        rec.lower_bound - report.iterations[static_cast<std::size_t>(k - 1 - w)].lower_bound < options.stall_tolerance) {
      report.stalled = true;
      break;
    }
  }
  return report;
}

/// Feedback law read from the trained pools.
class Policy {
 public:
  Policy(const StageProblemSpec& spec, const MarkovChain& chain, const CutPool& pools, EngineOptions options = {})
      : spec_(&spec), chain_(&chain), pools_(&pools), options_(std::move(options)) {}

  /// Here-and-now control and the wait-and-see reply for every successor.
  StageDecision decide(int t, std::size_t node, const Eigen::VectorXd& x) const {
    check_stage(t);
    return solve_stage(*spec_, *chain_, *pools_, t, node, x, std::nullopt, options_);
  }

  /// Controls once the successor node is known.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> decide(int t, std::size_t node, const Eigen::VectorXd& x,
                                                     std::size_t successor) const {
    check_stage(t);
    StageDecision d = solve_stage(*spec_, *chain_, *pools_, t, node, x, successor, options_);
    return {std::move(d.here_and_now), std::move(d.wait_and_see[successor])};
  }

  const StageProblemSpec& spec() const { return *spec_; }
  const MarkovChain& chain() const { return *chain_; }

 private:
  void check_stage(int t) const {
    if (t >= chain_->horizon()) throw ValidationError("no decision at the horizon stage " + std::to_string(t));
    if (t < 0) throw ValidationError("negative stage");
  }

  const StageProblemSpec* spec_;
  const MarkovChain* chain_;
  const CutPool* pools_;
  EngineOptions options_;
};

inline Policy extract_policy(const StageProblemSpec& spec, const MarkovChain& chain, const CutPool& pools,
                             EngineOptions options = {}) {
  return Policy(spec, chain, pools, std::move(options));
}

}  // namespace storval
