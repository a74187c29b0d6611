#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "storval/error.hpp"

namespace storval::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { LessEqual, GreaterEqual };

/// min c'x  s.t.  E x = e,  G x (<= | >=) g,  lower <= x <= upper.
struct LinearProgram {
  Eigen::VectorXd objective;
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_matrix;
  Eigen::VectorXd ineq_rhs;
  std::vector<Sense> ineq_sense;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  /// n variables in [0, +inf) and no rows.
  static LinearProgram with_variables(Eigen::Index n) {
    LinearProgram lp;
    lp.objective = Eigen::VectorXd::Zero(n);
    lp.eq_matrix.resize(0, n);
    lp.eq_rhs.resize(0);
    lp.ineq_matrix.resize(0, n);
    lp.ineq_rhs.resize(0);
    lp.lower = Eigen::VectorXd::Zero(n);
    lp.upper = Eigen::VectorXd::Constant(n, kInf);
    return lp;
  }

  Eigen::Index variables() const { return objective.size(); }

  void validate() const {
    const Eigen::Index n = variables();
    if (n < 1) throw ValidationError("LP needs at least one variable");
    if (eq_matrix.cols() != n || ineq_matrix.cols() != n || lower.size() != n || upper.size() != n ||
        eq_matrix.rows() != eq_rhs.size() || ineq_matrix.rows() != ineq_rhs.size() ||
        static_cast<std::size_t>(ineq_matrix.rows()) != ineq_sense.size()) {
      throw ValidationError("LP dimensions are inconsistent");
    }
    if (objective.hasNaN() || eq_matrix.hasNaN() || eq_rhs.hasNaN() || ineq_matrix.hasNaN() || ineq_rhs.hasNaN() ||
        lower.hasNaN() || upper.hasNaN()) {
      throw ValidationError("LP has NaN coefficients");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (lower[j] > upper[j] || lower[j] == kInf || upper[j] == -kInf) {
        throw ValidationError("LP variable " + std::to_string(j) + " has empty bounds");
      }
    }
  }
};

enum class Status { Optimal, Infeasible, Unbounded, Failed };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::Failed: return "failed";
  }
  return "?";
}

/// Duals follow the sensitivity convention: d value / d rhs.
struct Solution {
  Status status = Status::Failed;
  double value = 0.0;
  Eigen::VectorXd primal;
  Eigen::VectorXd duals;       // equality rows
  Eigen::VectorXd ineq_duals;  // inequality rows (>= 0 for >=, <= 0 for <=)
  std::size_t pivots = 0;
};

/// Numerical constants shared by every solve.
struct Tolerances {
  double feasibility = 1e-8;
  double optimality = 1e-9;
  double pivot = 1e-9;
  std::size_t degenerate_before_bland = 50;
  std::size_t max_pivots = 0;  // 0 selects 20 * (rows + columns) + 1000
};

namespace detail {

struct Column {
  Eigen::Index var;
  double sign;  // x_var = offset_var + sign * z
};

class Tableau {
 public:
  /// `initial` is [A | b] with an identity block on the starting basis.
  Tableau(Eigen::MatrixXd initial, std::vector<Eigen::Index> basis)
      : original_(std::move(initial)), basis_(std::move(basis)) {
    t_ = Eigen::MatrixXd::Zero(original_.rows() + 1, original_.cols());
    t_.topRows(original_.rows()) = original_;
    cost_ = Eigen::VectorXd::Zero(cols());
  }

  double at(Eigen::Index i, Eigen::Index j) const { return t_(i, j); }
  double rhs(Eigen::Index i) const { return t_(i, t_.cols() - 1); }
  Eigen::Index rows() const { return t_.rows() - 1; }
  Eigen::Index cols() const { return t_.cols() - 1; }
  Eigen::Index obj() const { return t_.rows() - 1; }
  const std::vector<Eigen::Index>& basis() const { return basis_; }

  /// Installs a cost vector and prices out the basic columns.
  void set_costs(Eigen::VectorXd cost) {
    cost_ = std::move(cost);
    price();
  }

  void pivot(Eigen::Index r, Eigen::Index q) {
    t_.row(r) /= t_(r, q);
    Eigen::VectorXd col = t_.col(q);
    col[r] = 0.0;
    const Eigen::RowVectorXd prow = t_.row(r);
    t_.noalias() -= col * prow;
    t_(r, q) = 1.0;
    basis_[static_cast<std::size_t>(r)] = q;
    ++since_refactor_;
  }

  /// Rebuilds the tableau from the original data and the current basis,
  /// discarding the round-off accumulated by the pivots.
  bool refactor() {
    const Eigen::Index m = rows();
    Eigen::MatrixXd b(m, m);
    for (Eigen::Index r = 0; r < m; ++r) b.col(r) = original_.col(basis_[static_cast<std::size_t>(r)]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(b);
    Eigen::MatrixXd fresh = lu.solve(original_);
    if (!fresh.allFinite()) return false;
    t_.topRows(m) = fresh;
    price();
    since_refactor_ = 0;
    return true;
  }

  std::size_t since_refactor() const { return since_refactor_; }

  /// Residual of the original rows and sign violation at the current basic
  /// solution.
  double residual() const {
    const Eigen::Index m = rows();
    Eigen::VectorXd z = Eigen::VectorXd::Zero(cols());
    for (Eigen::Index r = 0; r < m; ++r) z[basis_[static_cast<std::size_t>(r)]] = rhs(r);
    const Eigen::VectorXd res = original_.leftCols(cols()) * z - original_.col(cols());
    return std::max(res.cwiseAbs().maxCoeff(), -z.minCoeff());
  }

 private:
  void price() {
    const Eigen::Index m = rows();
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(t_.cols());
    row.head(cols()) = cost_.transpose();
    for (Eigen::Index r = 0; r < m; ++r) {
      const double cb = cost_[basis_[static_cast<std::size_t>(r)]];
      if (cb != 0.0) row -= cb * t_.row(r);
    }
    t_.row(obj()) = row;
  }

  Eigen::MatrixXd original_;
  Eigen::MatrixXd t_;
  Eigen::VectorXd cost_;
  std::vector<Eigen::Index> basis_;
  std::size_t since_refactor_ = 0;
};

enum class PhaseResult { Optimal, Unbounded, Failed };

inline constexpr std::size_t kRefactorInterval = 100;

// Primal simplex on the tableau; columns >= `first_blocked` never enter.
// The ratio test is the two-pass Harris rule: a step bounded by the
// tolerance-relaxed ratios, then the largest pivot among the rows that reach
// it (lowest basic index on ties).
inline PhaseResult run_phase(Tableau& tab, Eigen::Index first_blocked, const Tolerances& tol, std::size_t& pivots,
                             std::size_t max_pivots) {
  const Eigen::Index m = tab.rows();
  const Eigen::Index obj = tab.obj();
  bool bland = false;
  std::size_t degenerate = 0;
  double scale = 1.0;
  for (Eigen::Index i = 0; i < m; ++i) scale = std::max(scale, std::abs(tab.rhs(i)));
  const double accurate = 1e-3 * tol.feasibility * scale;
  while (true) {
    Eigen::Index q = -1;
    double best = -tol.optimality;
    for (Eigen::Index j = 0; j < first_blocked; ++j) {
      const double d = tab.at(obj, j);
      if (d < best) {
        q = j;
        if (bland) break;
        best = d;
      }
    }
    if (q < 0) {
      if (tab.since_refactor() == 0 || tab.residual() <= accurate) return PhaseResult::Optimal;
      if (!tab.refactor()) return PhaseResult::Failed;
      continue;
    }

    double bound = kInf;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double a = tab.at(i, q);
      if (a > tol.pivot) bound = std::min(bound, (std::max(tab.rhs(i), 0.0) + tol.feasibility) / a);
    }
    if (bound == kInf) return PhaseResult::Unbounded;
    Eigen::Index r = -1;
    double ratio = kInf;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double a = tab.at(i, q);
      if (a <= tol.pivot) continue;
      const double rt = std::max(tab.rhs(i), 0.0) / a;
      if (rt > bound) continue;
      const double ar = r < 0 ? 0.0 : tab.at(r, q);
      if (r < 0 || a > ar * (1.0 + 1e-12) || (a >= ar * (1.0 - 1e-12) && tab.basis()[i] < tab.basis()[r])) {
        r = i;
        ratio = rt;
      }
    }

    if (ratio <= tol.feasibility * 1e-3) {
      if (++degenerate > tol.degenerate_before_bland) bland = true;
    } else {
      degenerate = 0;
    }
    tab.pivot(r, q);
    if (++pivots > max_pivots) return PhaseResult::Failed;
    if (tab.since_refactor() >= kRefactorInterval && !tab.refactor()) return PhaseResult::Failed;
  }
}

}  // namespace detail

/// Largest violation of any row or bound at x.
inline double primal_residual(const LinearProgram& lp, const Eigen::VectorXd& x) {
  double worst = 0.0;
  if (lp.eq_matrix.rows() > 0) worst = (lp.eq_matrix * x - lp.eq_rhs).cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < lp.ineq_matrix.rows(); ++i) {
    const double gap = lp.ineq_matrix.row(i).dot(x) - lp.ineq_rhs[i];
    worst = std::max(worst, lp.ineq_sense[static_cast<std::size_t>(i)] == Sense::LessEqual ? gap : -gap);
  }
  worst = std::max(worst, (lp.lower - x).maxCoeff());
  worst = std::max(worst, (x - lp.upper).maxCoeff());
  return worst;
}

/**
 * @brief Dense two-phase primal simplex.
 *
 * Variables are shifted or reflected onto [0, inf) (free ones split, fixed
 * ones substituted), finite boxes become rows, and every row gets an
 * artificial column. The artificials stay in the tableau during phase two so
 * the row multipliers can be read off their reduced costs. Pricing is
 * Dantzig with lowest-index ties, switching to Bland's rule after a run of
 * degenerate pivots.
 */
inline Solution solve(const LinearProgram& lp, const Tolerances& tol = {}) {
  lp.validate();
  const Eigen::Index n = lp.variables();
  const Eigen::Index me = lp.eq_matrix.rows();
  const Eigen::Index mi = lp.ineq_matrix.rows();

  Eigen::VectorXd offset = Eigen::VectorXd::Zero(n);
  std::vector<detail::Column> columns;
  std::vector<std::pair<Eigen::Index, double>> box_rows;  // (column, width)
  for (Eigen::Index j = 0; j < n; ++j) {
    const double lo = lp.lower[j], hi = lp.upper[j];
    if (std::isfinite(lo) && std::isfinite(hi) && lo == hi) {
      offset[j] = lo;
    } else if (std::isfinite(lo)) {
      offset[j] = lo;
      if (std::isfinite(hi)) box_rows.emplace_back(static_cast<Eigen::Index>(columns.size()), hi - lo);
      columns.push_back({j, 1.0});
    } else if (std::isfinite(hi)) {
      offset[j] = hi;
      columns.push_back({j, -1.0});
    } else {
      columns.push_back({j, 1.0});
      columns.push_back({j, -1.0});
    }
  }

  const Eigen::Index nz = static_cast<Eigen::Index>(columns.size());
  const Eigen::Index nb = static_cast<Eigen::Index>(box_rows.size());
  const Eigen::Index m = me + mi + nb;
  const Eigen::Index slack0 = nz;
  const Eigen::Index art0 = nz + mi + nb;
  const Eigen::Index ncols = art0 + m;

  Solution sol;
  sol.primal = Eigen::VectorXd::Zero(n);
  sol.duals = Eigen::VectorXd::Zero(me);
  sol.ineq_duals = Eigen::VectorXd::Zero(mi);

  if (m == 0) {
    // Only bounds: each column sits at its bound or the problem is unbounded.
    for (Eigen::Index k = 0; k < nz; ++k) {
      if (lp.objective[columns[k].var] * columns[k].sign < -tol.optimality) {
        sol.status = Status::Unbounded;
        return sol;
      }
    }
    sol.status = Status::Optimal;
    sol.primal = offset;
    sol.value = lp.objective.dot(sol.primal);
    return sol;
  }

  Eigen::MatrixXd initial = Eigen::MatrixXd::Zero(m, ncols + 1);
  std::vector<double> row_sign(static_cast<std::size_t>(m), 1.0);

  const auto fill_row = [&](Eigen::Index r, const Eigen::Ref<const Eigen::RowVectorXd>& coeffs, double rhs) {
    for (Eigen::Index k = 0; k < nz; ++k) initial(r, k) = coeffs[columns[k].var] * columns[k].sign;
    initial(r, ncols) = rhs - coeffs.dot(offset);
  };
  for (Eigen::Index i = 0; i < me; ++i) fill_row(i, lp.eq_matrix.row(i), lp.eq_rhs[i]);
  for (Eigen::Index i = 0; i < mi; ++i) {
    fill_row(me + i, lp.ineq_matrix.row(i), lp.ineq_rhs[i]);
    initial(me + i, slack0 + i) = lp.ineq_sense[static_cast<std::size_t>(i)] == Sense::LessEqual ? 1.0 : -1.0;
  }
  for (Eigen::Index b = 0; b < nb; ++b) {
    const Eigen::Index r = me + mi + b;
    initial(r, box_rows[static_cast<std::size_t>(b)].first) = 1.0;
    initial(r, slack0 + mi + b) = 1.0;
    initial(r, ncols) = box_rows[static_cast<std::size_t>(b)].second;
  }
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  double rhs_scale = 1.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    if (initial(r, ncols) < 0.0) {
      initial.row(r) *= -1.0;
      row_sign[static_cast<std::size_t>(r)] = -1.0;
    }
    initial(r, art0 + r) = 1.0;
    // Rows whose slack enters with +1 start from the slack; the others from
    // their artificial.
    const bool slack_basic = r >= me && initial(r, slack0 + (r - me)) == 1.0;
    basis[static_cast<std::size_t>(r)] = slack_basic ? slack0 + (r - me) : art0 + r;
    rhs_scale = std::max(rhs_scale, std::abs(initial(r, ncols)));
  }
  detail::Tableau tab(std::move(initial), std::move(basis));

  const std::size_t max_pivots =
      tol.max_pivots ? tol.max_pivots : static_cast<std::size_t>(20 * (m + ncols) + 1000);

  // Phase one: minimise the sum of artificials.
  const Eigen::Index obj = tab.obj();
  Eigen::VectorXd cost = Eigen::VectorXd::Zero(ncols);
  cost.tail(m).setOnes();
  tab.set_costs(cost);

  auto phase = detail::run_phase(tab, art0, tol, sol.pivots, max_pivots);
  if (phase == detail::PhaseResult::Failed) return sol;
  if (-tab.rhs(obj) > tol.feasibility * rhs_scale) {
    sol.status = Status::Infeasible;
    return sol;
  }

  // Drive zero-level artificials out of the basis where possible.
  for (Eigen::Index r = 0; r < m; ++r) {
    if (tab.basis()[static_cast<std::size_t>(r)] < art0) continue;
    Eigen::Index q = -1;
    double best = 1e-9;
    for (Eigen::Index j = 0; j < art0; ++j) {
      if (std::abs(tab.at(r, j)) > best) {
        best = std::abs(tab.at(r, j));
        q = j;
      }
    }
    if (q >= 0) tab.pivot(r, q);
  }

  // Phase two.
  cost.setZero();
  for (Eigen::Index k = 0; k < nz; ++k) cost[k] = lp.objective[columns[k].var] * columns[k].sign;
  tab.set_costs(cost);

  phase = detail::run_phase(tab, art0, tol, sol.pivots, max_pivots);
  if (phase == detail::PhaseResult::Failed) return sol;
  if (phase == detail::PhaseResult::Unbounded) {
    sol.status = Status::Unbounded;
    return sol;
  }

  Eigen::VectorXd z = Eigen::VectorXd::Zero(ncols);
  for (Eigen::Index r = 0; r < m; ++r) z[tab.basis()[static_cast<std::size_t>(r)]] = tab.rhs(r);
  sol.primal = offset;
  for (Eigen::Index k = 0; k < nz; ++k) sol.primal[columns[k].var] += columns[k].sign * z[k];
  for (Eigen::Index i = 0; i < me; ++i) sol.duals[i] = -row_sign[static_cast<std::size_t>(i)] * tab.at(obj, art0 + i);
  for (Eigen::Index i = 0; i < mi; ++i) {
    sol.ineq_duals[i] = -row_sign[static_cast<std::size_t>(me + i)] * tab.at(obj, art0 + me + i);
  }
  sol.value = lp.objective.dot(sol.primal);
  // A basis that drifted despite refactoring is reported, never returned.
  sol.status = primal_residual(lp, sol.primal) <= 1e3 * tol.feasibility * rhs_scale ? Status::Optimal : Status::Failed;
  return sol;
}

/// Primal value minus the Lagrangian dual value built from the row duals and
/// the implied bound multipliers.
inline double duality_gap(const LinearProgram& lp, const Solution& sol) {
  Eigen::VectorXd reduced = lp.objective;
  double dual = 0.0;
  if (lp.eq_matrix.rows() > 0) {
    reduced -= lp.eq_matrix.transpose() * sol.duals;
    dual += lp.eq_rhs.dot(sol.duals);
  }
  if (lp.ineq_matrix.rows() > 0) {
    reduced -= lp.ineq_matrix.transpose() * sol.ineq_duals;
    dual += lp.ineq_rhs.dot(sol.ineq_duals);
  }
  // Reduced costs at round-off level are treated as zero so that free
  // variables do not contribute infinite bound terms.
  const double zero = 1e-9 * std::max(1.0, lp.objective.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < lp.variables(); ++j) {
    if (reduced[j] > zero) dual += reduced[j] * lp.lower[j];
    else if (reduced[j] < -zero) dual += reduced[j] * lp.upper[j];
  }
  return sol.value - dual;
}

/// Writes the program in CPLEX LP text layout.
inline void write_lp(std::ostream& os, const LinearProgram& lp, const std::string& name = "stage") {
  const auto term = [&](double c, Eigen::Index j, bool first) {
    if (c == 0.0) return std::string();
    std::string s = (c < 0.0) ? " - " : (first ? " " : " + ");
    return s + std::to_string(std::abs(c)) + " x" + std::to_string(j);
  };
  const auto write_row = [&](const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    bool first = true;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      const auto t = term(row[j], j, first);
      if (!t.empty()) {
        os << t;
        first = false;
      }
    }
    if (first) os << " 0 x0";
  };
  os << "\\ " << name << "\nMinimize\n obj:";
  write_row(lp.objective.transpose());
  os << "\nSubject To\n";
  for (Eigen::Index i = 0; i < lp.eq_matrix.rows(); ++i) {
    os << " e" << i << ":";
    write_row(lp.eq_matrix.row(i));
    os << " = " << lp.eq_rhs[i] << "\n";
  }
  for (Eigen::Index i = 0; i < lp.ineq_matrix.rows(); ++i) {
    os << " g" << i << ":";
    write_row(lp.ineq_matrix.row(i));
    os << (lp.ineq_sense[static_cast<std::size_t>(i)] == Sense::LessEqual ? " <= " : " >= ") << lp.ineq_rhs[i] << "\n";
  }
  os << "Bounds\n";
  for (Eigen::Index j = 0; j < lp.variables(); ++j) {
    const double lo = lp.lower[j], hi = lp.upper[j];
    if (!std::isfinite(lo) && !std::isfinite(hi)) {
      os << " x" << j << " free\n";
    } else if (lo == hi) {
      os << " x" << j << " = " << lo << "\n";
    } else {
      os << " " << (std::isfinite(lo) ? std::to_string(lo) : "-inf") << " <= x" << j
         << " <= " << (std::isfinite(hi) ? std::to_string(hi) : "+inf") << "\n";
    }
  }
  os << "End\n";
}

}  // namespace storval::lp
