#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "lp_oracle.hpp"
#include "storval/lp.hpp"
#include "storval/stage.hpp"

using namespace storval;
using lp::LinearProgram;
using lp::Sense;
using lp::Status;

namespace {

LinearProgram bounded_single(double lo, double hi, double c) {
  auto prog = LinearProgram::with_variables(1);
  prog.objective << c;
  prog.lower << lo;
  prog.upper << hi;
  return prog;
}

void add_ineq(LinearProgram& prog, const Eigen::RowVectorXd& row, Sense sense, double rhs) {
  const Eigen::Index r = prog.ineq_matrix.rows();
  prog.ineq_matrix.conservativeResize(r + 1, Eigen::NoChange);
  prog.ineq_matrix.row(r) = row;
  prog.ineq_rhs.conservativeResize(r + 1);
  prog.ineq_rhs[r] = rhs;
  prog.ineq_sense.push_back(sense);
}

void add_eq(LinearProgram& prog, const Eigen::RowVectorXd& row, double rhs) {
  const Eigen::Index r = prog.eq_matrix.rows();
  prog.eq_matrix.conservativeResize(r + 1, Eigen::NoChange);
  prog.eq_matrix.row(r) = row;
  prog.eq_rhs.conservativeResize(r + 1);
  prog.eq_rhs[r] = rhs;
}

double complementarity(const LinearProgram& prog, const lp::Solution& sol) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < prog.ineq_matrix.rows(); ++i) {
    const double slack = prog.ineq_matrix.row(i).dot(sol.primal) - prog.ineq_rhs[i];
    worst = std::max(worst, std::abs(slack * sol.ineq_duals[i]));
  }
  return worst;
}

}  // namespace

TEST(Lp, BoundAttainedOptimum) {
  const auto sol = lp::solve(bounded_single(-1.0, 1.0, -1.0));
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.value, -1.0, 1e-12);
  EXPECT_NEAR(sol.primal[0], 1.0, 1e-12);
}

TEST(Lp, InfeasibleEquality) {
  auto prog = bounded_single(0.0, 1.0, 0.0);
  add_eq(prog, Eigen::RowVectorXd::Ones(1), 2.0);
  EXPECT_EQ(lp::solve(prog).status, Status::Infeasible);
}

TEST(Lp, TwoVariableCoveringHasUnitDual) {
  auto prog = LinearProgram::with_variables(2);
  prog.objective << 1.0, 1.0;
  add_ineq(prog, Eigen::RowVector2d(1.0, 1.0), Sense::GreaterEqual, 1.0);
  const auto sol = lp::solve(prog);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.value, 1.0, 1e-12);
  EXPECT_NEAR(sol.primal.sum(), 1.0, 1e-12);
  EXPECT_NEAR(sol.ineq_duals[0], 1.0, 1e-12);
  EXPECT_LT(std::abs(lp::duality_gap(prog, sol)), 1e-8);
}

TEST(Lp, Unbounded) {
  auto prog = LinearProgram::with_variables(2);
  prog.objective << -1.0, 0.0;
  add_ineq(prog, Eigen::RowVector2d(0.0, 1.0), Sense::LessEqual, 3.0);
  EXPECT_EQ(lp::solve(prog).status, Status::Unbounded);
}

TEST(Lp, FixedAndFreeVariables) {
  // min x - y  s.t. x + y = 3, x free, y fixed at 1 -> x = 2, value 1.
  auto prog = LinearProgram::with_variables(2);
  prog.objective << 1.0, -1.0;
  prog.lower << -lp::kInf, 1.0;
  prog.upper << lp::kInf, 1.0;
  add_eq(prog, Eigen::RowVector2d(1.0, 1.0), 3.0);
  const auto sol = lp::solve(prog);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.primal[0], 2.0, 1e-12);
  EXPECT_NEAR(sol.value, 1.0, 1e-12);
  EXPECT_NEAR(sol.duals[0], 1.0, 1e-12);
}

TEST(Lp, NegativeRhsRowsKeepDualSigns) {
  // min -x s.t. -x >= -4, x <= 10 -> x = 4; d value / d rhs of -x >= -4 is +1.
  auto prog = LinearProgram::with_variables(1);
  prog.objective << -1.0;
  prog.upper << 10.0;
  add_ineq(prog, Eigen::RowVectorXd::Constant(1, -1.0), Sense::GreaterEqual, -4.0);
  const auto sol = lp::solve(prog);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.primal[0], 4.0, 1e-12);
  EXPECT_NEAR(sol.ineq_duals[0], 1.0, 1e-12);
}

TEST(Lp, RejectsMalformedPrograms) {
  auto prog = LinearProgram::with_variables(2);
  prog.objective[0] = std::nan("");
  EXPECT_THROW(lp::solve(prog), ValidationError);
  EXPECT_THROW(lp::solve(LinearProgram::with_variables(0)), ValidationError);
  auto bad = LinearProgram::with_variables(1);
  bad.lower << 2.0;
  bad.upper << 1.0;
  EXPECT_THROW(lp::solve(bad), ValidationError);
}

TEST(Lp, PivotBudgetExhaustionIsReportedAsFailure) {
  auto prog = LinearProgram::with_variables(3);
  prog.objective << -1.0, -1.0, -1.0;
  add_ineq(prog, Eigen::RowVector3d(1.0, 2.0, 1.0), Sense::LessEqual, 4.0);
  add_ineq(prog, Eigen::RowVector3d(2.0, 1.0, 3.0), Sense::LessEqual, 5.0);
  lp::Tolerances tol;
  tol.max_pivots = 1;
  EXPECT_EQ(lp::solve(prog, tol).status, Status::Failed);
}

// Random boxed programs: simplex agrees with vertex enumeration, and every
// optimal solution is primal feasible with zero duality gap and
// complementary slackness.
TEST(Lp, RandomProgramsMatchVertexEnumeration) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::uniform_int_distribution<int> rows(0, 4);
  int optimal = 0, infeasible = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index n = 3;
    auto prog = LinearProgram::with_variables(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      prog.objective[j] = coef(rng);
      prog.lower[j] = -1.0 - std::abs(coef(rng));
      prog.upper[j] = 1.0 + std::abs(coef(rng));
    }
    const int mi = rows(rng);
    for (int i = 0; i < mi; ++i) {
      Eigen::RowVectorXd a(n);
      for (Eigen::Index j = 0; j < n; ++j) a[j] = coef(rng);
      add_ineq(prog, a, (i % 2) ? Sense::LessEqual : Sense::GreaterEqual, coef(rng));
    }
    if (trial % 3 == 0) {
      Eigen::RowVectorXd a(n);
      for (Eigen::Index j = 0; j < n; ++j) a[j] = coef(rng);
      add_eq(prog, a, 0.5 * coef(rng));
    }
    const auto oracle = oracle::enumerate_vertices(prog);
    const auto sol = lp::solve(prog);
    if (!oracle) {
      EXPECT_EQ(sol.status, Status::Infeasible) << "trial " << trial;
      ++infeasible;
      continue;
    }
    ASSERT_EQ(sol.status, Status::Optimal) << "trial " << trial;
    ++optimal;
    EXPECT_NEAR(sol.value, *oracle, 1e-8) << "trial " << trial;
    EXPECT_LT(lp::primal_residual(prog, sol.primal), 1e-8);
    EXPECT_LT(std::abs(lp::duality_gap(prog, sol)), 1e-8);
    EXPECT_LT(complementarity(prog, sol), 1e-8);
    for (Eigen::Index i = 0; i < prog.ineq_matrix.rows(); ++i) {
      const bool ge = prog.ineq_sense[static_cast<std::size_t>(i)] == Sense::GreaterEqual;
      EXPECT_GE(ge ? sol.ineq_duals[i] : -sol.ineq_duals[i], -1e-9);
    }
  }
  EXPECT_GT(optimal, 100);
  EXPECT_GT(infeasible, 0);
}

TEST(Lp, SolveIsDeterministic) {
  auto prog = LinearProgram::with_variables(3);
  prog.objective << 1.0, 1.0, 0.0;
  add_ineq(prog, Eigen::RowVector3d(1.0, 1.0, 1.0), Sense::GreaterEqual, 1.0);
  const auto a = lp::solve(prog), b = lp::solve(prog);
  EXPECT_EQ(a.primal, b.primal);
  EXPECT_EQ(a.ineq_duals, b.ineq_duals);
}

TEST(Lp, WritesLpTextLayout) {
  auto prog = LinearProgram::with_variables(2);
  prog.objective << 1.0, -2.0;
  prog.lower[1] = -lp::kInf;
  add_ineq(prog, Eigen::RowVector2d(1.0, 1.0), Sense::GreaterEqual, 1.0);
  std::ostringstream os;
  lp::write_lp(os, prog);
  const std::string text = os.str();
  EXPECT_NE(text.find("Minimize"), std::string::npos);
  EXPECT_NE(text.find("Subject To"), std::string::npos);
  EXPECT_NE(text.find(">= 1"), std::string::npos);
  EXPECT_NE(text.find("x1 free"), std::string::npos);
  EXPECT_NE(text.find("End"), std::string::npos);
}

// ---- stage LP construction -------------------------------------------------

namespace {

StageProblemSpec scalar_spec(Eigen::Index mb, Eigen::Index ma) {
  StageProblemSpec spec;
  spec.horizon = 1;
  spec.state_dim = 1;
  spec.here_and_now_dim = mb;
  spec.wait_and_see_dim = ma;
  spec.state_box = Box::unbounded(1);
  spec.here_and_now_box = {Eigen::VectorXd::Constant(mb, -1.0), Eigen::VectorXd::Constant(mb, 1.0)};
  spec.wait_and_see_box = {Eigen::VectorXd::Constant(ma, -1.0), Eigen::VectorXd::Constant(ma, 1.0)};
  spec.here_and_now_cost = Eigen::VectorXd::Zero(mb);
  spec.wait_and_see_cost = Eigen::VectorXd::Zero(ma);
  return spec;
}

Transition scalar_transition(double a, double bb, double ba, double w, Eigen::Index mb, Eigen::Index ma) {
  Transition tr;
  tr.state = Eigen::MatrixXd::Constant(1, 1, a);
  tr.here_and_now = Eigen::MatrixXd::Constant(1, mb, bb);
  tr.wait_and_see = Eigen::MatrixXd::Constant(1, ma, ba);
  tr.constant = Eigen::VectorXd::Constant(1, w);
  return tr;
}

}  // namespace

TEST(StageLp, ZeroCutGivesZeroValue) {
  const auto spec = scalar_spec(0, 1);
  const std::vector<Cut> cuts{{0.0, Eigen::VectorXd::Zero(1)}};
  const std::vector<Successor> succ{{scalar_transition(1.0, 0.0, 1.0, 0.0, 0, 1), cuts, 1.0}};
  for (double x : {-3.0, 0.0, 2.5}) {
    const auto stage = stage_lp(spec, Eigen::VectorXd::Constant(1, x), succ);
    const auto sol = lp::solve(stage.program);
    ASSERT_EQ(sol.status, Status::Optimal);
    EXPECT_NEAR(sol.value, 0.0, 1e-12);
  }
}

TEST(StageLp, LinearCutSellsAtMaximumRate) {
  // x' = x - 2u, cut J(x') >= -x'  =>  u = -1, value -(x + 2), slope -1.
  const auto spec = scalar_spec(0, 1);
  const std::vector<Cut> cuts{{0.0, Eigen::VectorXd::Constant(1, -1.0)}};
  const std::vector<Successor> succ{{scalar_transition(1.0, 0.0, -2.0, 0.0, 0, 1), cuts, 1.0}};
  const double x = 5.0;
  const auto stage = stage_lp(spec, Eigen::VectorXd::Constant(1, x), succ);
  const auto sol = lp::solve(stage.program);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.primal[stage.layout.wait_and_see[0]], -1.0, 1e-12);
  EXPECT_NEAR(sol.value, -(x + 2.0), 1e-12);
  EXPECT_NEAR(sol.duals[0], -1.0, 1e-12);
}

TEST(StageLp, OppositeSlopesAverageOut) {
  const auto spec = scalar_spec(0, 0);
  const std::vector<Cut> up{{1.0, Eigen::VectorXd::Constant(1, 1.0)}};
  const std::vector<Cut> down{{3.0, Eigen::VectorXd::Constant(1, -1.0)}};
  const auto tr = scalar_transition(1.0, 0.0, 0.0, 0.0, 0, 0);
  const std::vector<Successor> succ{{tr, up, 0.5}, {tr, down, 0.5}};
  const auto stage = stage_lp(spec, Eigen::VectorXd::Constant(1, 0.7), succ);
  const auto sol = lp::solve(stage.program);
  ASSERT_EQ(sol.status, Status::Optimal);
  EXPECT_NEAR(sol.value, 2.0, 1e-12);
  EXPECT_NEAR(sol.duals[0], 0.0, 1e-12);
}

TEST(StageLp, EmptyPoolIsRejected) {
  const auto spec = scalar_spec(0, 1);
  const std::vector<Successor> succ{{scalar_transition(1.0, 0.0, 1.0, 0.0, 0, 1), {}, 1.0}};
  EXPECT_THROW(stage_lp(spec, Eigen::VectorXd::Zero(1), succ), ValidationError);
}

// Duals of the state-copy rows match central finite differences of the
// stage value at points where the value is differentiable.
TEST(StageLp, CopyRowDualsAreSubgradients) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 2, mb = trial % 2, ma = 1;
    StageProblemSpec spec;
    spec.horizon = 1;
    spec.state_dim = n;
    spec.here_and_now_dim = mb;
    spec.wait_and_see_dim = ma;
    spec.state_box = Box::unbounded(n);
    spec.here_and_now_box = {Eigen::VectorXd::Constant(mb, -1.0), Eigen::VectorXd::Constant(mb, 1.0)};
    spec.wait_and_see_box = {Eigen::VectorXd::Constant(ma, -0.5), Eigen::VectorXd::Constant(ma, 1.5)};
    spec.here_and_now_cost = Eigen::VectorXd::Constant(mb, 0.3 * u(rng));
    spec.wait_and_see_cost = Eigen::VectorXd::Constant(ma, 0.3 * u(rng));

    const int succ_count = 1 + trial % 3;
    std::vector<std::vector<Cut>> pools(static_cast<std::size_t>(succ_count));
    std::vector<Successor> succ;
    for (int s = 0; s < succ_count; ++s) {
      Transition tr;
      tr.state = Eigen::MatrixXd::Identity(n, n) + 0.3 * Eigen::MatrixXd::NullaryExpr(n, n, [&] { return u(rng); });
      tr.here_and_now = Eigen::MatrixXd::NullaryExpr(n, mb, [&] { return u(rng); });
      tr.wait_and_see = Eigen::MatrixXd::NullaryExpr(n, ma, [&] { return u(rng); });
      tr.constant = Eigen::VectorXd::NullaryExpr(n, [&] { return u(rng); });
      auto& pool = pools[static_cast<std::size_t>(s)];
      pool.push_back({-50.0, Eigen::VectorXd::Zero(n)});
      for (int k = 0; k < 6; ++k) pool.push_back({u(rng), Eigen::VectorXd::NullaryExpr(n, [&] { return 2.0 * u(rng); })});
      succ.push_back({tr, pool, 1.0 / succ_count});
    }

    const Eigen::VectorXd x = Eigen::VectorXd::NullaryExpr(n, [&] { return u(rng); });
    const auto value_at = [&](const Eigen::VectorXd& p) {
      const auto sol = lp::solve(stage_lp(spec, p, succ).program);
      EXPECT_EQ(sol.status, Status::Optimal);
      return sol;
    };
    const auto base = value_at(x);
    EXPECT_LT(std::abs(lp::duality_gap(stage_lp(spec, x, succ).program, base)), 1e-8);
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
      e[k] = h;
      const double fwd = (value_at(x + e).value - base.value) / h;
      const double bwd = (base.value - value_at(x - e).value) / h;
      if (std::abs(fwd - bwd) > 1e-6) continue;  // kink
      const double central = 0.5 * (fwd + bwd);
      EXPECT_NEAR(base.duals[k], central, std::max(1e-6, 1e-4 * std::abs(base.value))) << "trial " << trial;
      ++checked;
    }
  }
  EXPECT_GT(checked, 200);
}
