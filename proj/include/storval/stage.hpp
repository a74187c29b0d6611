#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "storval/error.hpp"
#include "storval/lp.hpp"
#include "storval/markov.hpp"

namespace storval {

/// x' = A x + B^b u^b + B^a u^a + W for one Markov move.
struct Transition {
  Eigen::MatrixXd state;          // A
  Eigen::MatrixXd here_and_now;   // B^b
  Eigen::MatrixXd wait_and_see;   // B^a
  Eigen::VectorXd constant;       // W

  Eigen::VectorXd apply(const Eigen::VectorXd& x, const Eigen::VectorXd& ub, const Eigen::VectorXd& ua) const {
    Eigen::VectorXd out = state * x + constant;
    if (ub.size() > 0) out += here_and_now * ub;
    if (ua.size() > 0) out += wait_and_see * ua;
    return out;
  }
};

struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static Box unbounded(Eigen::Index n) {
    return {Eigen::VectorXd::Constant(n, -lp::kInf), Eigen::VectorXd::Constant(n, lp::kInf)};
  }
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const {
    return ((x - lower).array() >= -tol).all() && ((upper - x).array() >= -tol).all();
  }
  Eigen::VectorXd project(const Eigen::VectorXd& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

/// Smooth convex final cost of one state coordinate.
struct TerminalCost {
  Eigen::Index coordinate = 0;
  std::function<double(double)> value;
  std::function<double(double)> derivative;

  double operator()(const Eigen::VectorXd& x) const { return value(x[coordinate]); }
};

/**
 * @brief Generic linear-dynamics control problem driven by a Markov chain.
 *
 * Running costs are the indicator of the boxes (outgoing state and both
 * controls) plus linear control costs. The here-and-now control u^b is fixed
 * before the next node is revealed, the wait-and-see control u^a after.
 */
struct StageProblemSpec {
  int horizon = 0;
  Eigen::Index state_dim = 0;
  Eigen::Index here_and_now_dim = 0;
  Eigen::Index wait_and_see_dim = 0;

  /// Dynamics for the move from node `from` at stage t to node `to` at t + 1.
  std::function<Transition(int t, std::size_t from, std::size_t to)> dynamics;

  Box state_box;
  Box here_and_now_box;
  Box wait_and_see_box;
  Eigen::VectorXd here_and_now_cost;
  Eigen::VectorXd wait_and_see_cost;
  TerminalCost terminal;

  void validate(const MarkovChain& chain) const {
    if (horizon < 1 || horizon != chain.horizon()) throw ValidationError("problem horizon does not match the chain");
    if (state_dim < 1 || here_and_now_dim < 0 || wait_and_see_dim < 0) {
      throw ValidationError("invalid problem dimensions");
    }
    const auto check_box = [](const Box& b, Eigen::Index n, const char* what) {
      if (b.lower.size() != n || b.upper.size() != n || (b.lower.array() > b.upper.array()).any()) {
        throw ValidationError(std::string("invalid ") + what + " box");
      }
    };
    check_box(state_box, state_dim, "state");
    check_box(here_and_now_box, here_and_now_dim, "here-and-now control");
    check_box(wait_and_see_box, wait_and_see_dim, "wait-and-see control");
    if (here_and_now_cost.size() != here_and_now_dim || wait_and_see_cost.size() != wait_and_see_dim) {
      throw ValidationError("control cost vectors have wrong length");
    }
    if (!dynamics) throw ValidationError("problem has no dynamics");
    const Transition tr = dynamics(0, 0, 0);
    if (tr.state.rows() != state_dim || tr.state.cols() != state_dim || tr.constant.size() != state_dim ||
        tr.here_and_now.rows() != state_dim || tr.here_and_now.cols() != here_and_now_dim ||
        tr.wait_and_see.rows() != state_dim || tr.wait_and_see.cols() != wait_and_see_dim) {
      throw ValidationError("dynamics matrices do not match the problem dimensions");
    }
    if (terminal.coordinate < 0 || terminal.coordinate >= state_dim || !terminal.value || !terminal.derivative) {
      throw ValidationError("terminal cost is not fully specified");
    }
    double previous = -lp::kInf;
    for (int k = -20; k <= 20; ++k) {
      const double d = terminal.derivative(5.0 * k);
      if (!(d >= previous - 1e-12 * std::abs(previous))) throw ValidationError("terminal cost is not convex");
      previous = d;
    }
  }
};

/// Affine minorant v(x) >= intercept + slope . x
struct Cut {
  double intercept = 0.0;
  Eigen::VectorXd slope;

  double operator()(const Eigen::VectorXd& x) const { return intercept + slope.dot(x); }
};

struct Successor {
  Transition dynamics;
  std::span<const Cut> cuts;
  double probability = 1.0;
};

/// Column positions of the decision blocks inside a stage LP.
struct StageLayout {
  Eigen::Index state = 0;  // copies of the incoming state
  Eigen::Index here_and_now = 0;
  std::vector<Eigen::Index> wait_and_see;
  std::vector<Eigen::Index> next_state;
  std::vector<Eigen::Index> epigraph;
};

struct StageLp {
  lp::LinearProgram program;
  StageLayout layout;
};

/**
 * @brief One-LP form of a two-stage stage problem at the incoming state x.
 *
 * The incoming state enters as free copy variables pinned by equality rows
 * 0..N-1, whose multipliers are a subgradient of the stage value in x. Each
 * successor gets its own control / next-state / epigraph block, weighted by
 * its probability in the objective.
 */
inline StageLp stage_lp(const StageProblemSpec& spec, const Eigen::VectorXd& x, std::span<const Successor> successors) {
  const Eigen::Index n = spec.state_dim, mb = spec.here_and_now_dim, ma = spec.wait_and_see_dim;
  const Eigen::Index block = ma + n + 1;
  const Eigen::Index s_count = static_cast<Eigen::Index>(successors.size());
  if (s_count == 0) throw ValidationError("stage LP needs at least one successor");
  if (x.size() != n) throw ValidationError("incoming state has wrong dimension");

  Eigen::Index cut_rows = 0;
  for (const auto& s : successors) {
    if (s.cuts.empty()) throw ValidationError("empty cut pool: pools must be initialised before solving");
    cut_rows += static_cast<Eigen::Index>(s.cuts.size());
  }

  StageLp out;
  auto& layout = out.layout;
  layout.state = 0;
  layout.here_and_now = n;
  const Eigen::Index vars = n + mb + s_count * block;
  lp::LinearProgram& lp = out.program;
  lp = lp::LinearProgram::with_variables(vars);
  lp.lower.setConstant(-lp::kInf);
  lp.upper.setConstant(lp::kInf);
  lp.eq_matrix = Eigen::MatrixXd::Zero(n + s_count * n, vars);
  lp.eq_rhs = Eigen::VectorXd::Zero(n + s_count * n);
  lp.ineq_matrix = Eigen::MatrixXd::Zero(cut_rows, vars);
  lp.ineq_rhs = Eigen::VectorXd::Zero(cut_rows);
  lp.ineq_sense.assign(static_cast<std::size_t>(cut_rows), lp::Sense::GreaterEqual);

  for (Eigen::Index k = 0; k < n; ++k) {
    lp.eq_matrix(k, k) = 1.0;
    lp.eq_rhs[k] = x[k];
  }
  if (mb > 0) {
    lp.lower.segment(n, mb) = spec.here_and_now_box.lower;
    lp.upper.segment(n, mb) = spec.here_and_now_box.upper;
    lp.objective.segment(n, mb) = spec.here_and_now_cost;
  }

  Eigen::Index row = 0;
  for (Eigen::Index s = 0; s < s_count; ++s) {
    const auto& succ = successors[static_cast<std::size_t>(s)];
    const Eigen::Index ua = n + mb + s * block;
    const Eigen::Index xn = ua + ma;
    const Eigen::Index th = xn + n;
    layout.wait_and_see.push_back(ua);
    layout.next_state.push_back(xn);
    layout.epigraph.push_back(th);

    if (ma > 0) {
      lp.lower.segment(ua, ma) = spec.wait_and_see_box.lower;
      lp.upper.segment(ua, ma) = spec.wait_and_see_box.upper;
      lp.objective.segment(ua, ma) = succ.probability * spec.wait_and_see_cost;
    }
    lp.lower.segment(xn, n) = spec.state_box.lower;
    lp.upper.segment(xn, n) = spec.state_box.upper;
    lp.objective[th] = succ.probability;

    // x' - A x - B^b u^b - B^a u^a = W
    const Eigen::Index er = n + s * n;
    lp.eq_matrix.block(er, xn, n, n) = Eigen::MatrixXd::Identity(n, n);
    lp.eq_matrix.block(er, 0, n, n) = -succ.dynamics.state;
    if (mb > 0) lp.eq_matrix.block(er, n, n, mb) = -succ.dynamics.here_and_now;
    if (ma > 0) lp.eq_matrix.block(er, ua, n, ma) = -succ.dynamics.wait_and_see;
    lp.eq_rhs.segment(er, n) = succ.dynamics.constant;

    // theta - slope . x' >= intercept
    for (const Cut& c : succ.cuts) {
      lp.ineq_matrix(row, th) = 1.0;
      lp.ineq_matrix.block(row, xn, 1, n) = -c.slope.transpose();
      lp.ineq_rhs[row] = c.intercept;
      ++row;
    }
  }
  return out;
}

}  // namespace storval
