#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "storval/error.hpp"
#include "storval/markov.hpp"
#include "storval/sddp.hpp"
#include "storval/stage.hpp"

namespace storval {

/// State layout: cash is coordinate 0, stored energy coordinate 1.
inline constexpr Eigen::Index kWealth = 0;
inline constexpr Eigen::Index kEnergy = 1;

/// Physical storage, market and preference parameters.
struct StorageSpec {
  double capacity = 10.0;        // MWh
  double charge_max = 5.0;       // MWh per period, >= 0
  double discharge_min = -5.0;   // MWh per period, <= 0
  double loss = 0.0;             // fraction lost per period
  double interest = 0.0;         // cash return per period
  int horizon = 30;
  double rho = 1e-4;             // absolute risk aversion
  double x0 = 0.0;               // initial cash, EUR

  void validate() const {
    const auto fail = [](const std::string& field, const std::string& why) {
      throw ValidationError("storage." + field + ": " + why);
    };
    if (!(discharge_min <= 0.0)) fail("discharge_min", "must be <= 0");
    if (!(charge_max >= 0.0)) fail("charge_max", "must be >= 0");
    if (!(loss >= 0.0 && loss < 1.0)) fail("loss", "must lie in [0, 1)");
    if (!(interest > -1.0) || !std::isfinite(interest)) fail("interest", "must exceed -1");
    if (!(rho > 0.0) || !std::isfinite(rho)) fail("rho", "must be positive");
    if (horizon < 1) fail("horizon", "must be at least 1");
    if (!(capacity >= 0.0) || !std::isfinite(capacity)) fail("capacity", "must be >= 0");
    if (!std::isfinite(x0)) fail("x0", "must be finite");
  }

  Eigen::VectorXd initial_state() const { return Eigen::Vector2d(x0, 0.0); }
  double growth() const { return std::pow(1.0 + interest, horizon); }
};

/// Exponential utility (1 - exp(-rho z)) / rho.
inline double utility(double z, double rho) { return -std::expm1(-rho * z) / rho; }

/// Terminal cost -utility and its derivative.
inline double terminal_cost(double wealth, double rho) { return std::expm1(-rho * wealth) / rho; }
inline double terminal_cost_derivative(double wealth, double rho) { return -std::exp(-rho * wealth); }

/// Dynamics of one period when the trade clears at `price`.
inline Transition storage_transition(const StorageSpec& s, double price) {
  Transition tr;
  tr.state = Eigen::Matrix2d{{1.0 + s.interest, 0.0}, {0.0, 1.0 - s.loss}};
  tr.here_and_now = Eigen::MatrixXd::Zero(2, 0);
  tr.wait_and_see = Eigen::Vector2d(-price, 1.0);
  tr.constant = Eigen::Vector2d::Zero();
  return tr;
}

/// Spot price at node i of stage t: exp(m_t + xi_t^i).
inline double node_price(const MarkovChain& chain, std::span<const double> mean_curve, int t, std::size_t i) {
  return std::exp(mean_curve[static_cast<std::size_t>(t)] + chain.node(t, i));
}

namespace detail {

inline StageProblemSpec storage_problem(const StorageSpec& s, const MarkovChain& chain, std::span<const double> mean_curve,
                                        Box control_box) {
  s.validate();
  if (chain.horizon() != s.horizon) throw ValidationError("chain horizon differs from storage horizon");
  if (mean_curve.size() != static_cast<std::size_t>(s.horizon) + 1) {
    throw ValidationError("mean curve needs horizon + 1 values");
  }
  StageProblemSpec spec;
  spec.horizon = s.horizon;
  spec.state_dim = 2;
  spec.here_and_now_dim = 0;
  spec.wait_and_see_dim = 1;

  // Price table per (stage, node), captured by value.
  std::vector<std::vector<double>> prices(static_cast<std::size_t>(s.horizon) + 1);
  for (int t = 0; t <= s.horizon; ++t)
    for (std::size_t i = 0; i < chain.node_count(t); ++i) prices[static_cast<std::size_t>(t)].push_back(node_price(chain, mean_curve, t, i));
  spec.dynamics = [s, prices = std::move(prices)](int t, std::size_t, std::size_t to) {
    return storage_transition(s, prices[static_cast<std::size_t>(t) + 1][to]);
  };

  spec.state_box = {Eigen::Vector2d(-lp::kInf, 0.0), Eigen::Vector2d(lp::kInf, s.capacity)};
  spec.here_and_now_box = Box::unbounded(0);
  spec.wait_and_see_box = std::move(control_box);
  spec.here_and_now_cost = Eigen::VectorXd::Zero(0);
  spec.wait_and_see_cost = Eigen::VectorXd::Zero(1);
  const double rho = s.rho;
  spec.terminal.coordinate = kWealth;
  spec.terminal.value = [rho](double w) { return terminal_cost(w, rho); };
  spec.terminal.derivative = [rho](double w) { return terminal_cost_derivative(w, rho); };
  return spec;
}

}  // namespace detail

/**
 * @brief Storage trading problem in stage form.
 *
 * Cash and energy evolve as
 *   wealth' = (1 + r) wealth - s u,   energy' = (1 - l) energy + u,
 * where u in [discharge_min, charge_max] is chosen after the next price s is
 * revealed, energy stays in [0, capacity], and the final cost is -utility of
 * the terminal cash.
 */
inline StageProblemSpec build_spec(const StorageSpec& s, const MarkovChain& chain, std::span<const double> mean_curve) {
  return detail::storage_problem(s, chain, mean_curve, {Eigen::VectorXd::Constant(1, s.discharge_min),
                                                        Eigen::VectorXd::Constant(1, s.charge_max)});
}

/// The same market without the storage: capacity 0 and u fixed at 0.
inline StageProblemSpec no_storage_constraint(const StorageSpec& s, const MarkovChain& chain,
                                              std::span<const double> mean_curve) {
  StorageSpec empty = s;
  empty.capacity = 0.0;
  return detail::storage_problem(empty, chain, mean_curve, {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)});
}

/// Every cost-to-go exceeds -1/rho because utility is bounded by 1/rho.
inline double global_lower_bound(const StorageSpec& s) { return -1.0 / s.rho; }

/// Optimal cost of the agent without storage: cash just grows at rate r.
inline double baseline_value(const StorageSpec& s) {
  s.validate();
  return terminal_cost(s.growth() * s.x0, s.rho);
}

/// Closed-form indifference price under exponential utility and constant r.
inline double indifference_price_closed(double phi, double psi, double rho, double interest, int horizon) {
  const double a = rho * psi + 1.0, b = rho * phi + 1.0;
  if (!(a > 0.0) || !(b > 0.0)) {
    throw ValidationError("cost below -1/rho: value function is corrupted (phi=" + std::to_string(phi) +
                          ", psi=" + std::to_string(psi) + ")");
  }
  return (std::log(a) - std::log(b)) / (rho * std::pow(1.0 + interest, horizon));
}

/**
 * @brief Indifference price by bisection on phi(x0 - alpha) = psi.
 *
 * `phi` maps initial cash to the optimal cost with storage; it must be
 * strictly decreasing in cash so that alpha -> phi(x0 - alpha) is increasing.
 */
inline double indifference_price_root(const std::function<double(double)>& phi, double x0, double psi,
                                      double alpha_lo, double alpha_hi, double tol) {
  if (!(alpha_lo < alpha_hi) || !(tol > 0.0)) throw ValidationError("invalid bracket or tolerance");
  double g_lo = phi(x0 - alpha_lo) - psi;
  double g_hi = phi(x0 - alpha_hi) - psi;
  if (g_lo > 0.0 && g_hi < 0.0) {
    throw ValidationError("phi(x0 - alpha) is not increasing on the bracket");
  }
  if (g_lo > 0.0 || g_hi < 0.0) {
    throw ValidationError("bracket [" + std::to_string(alpha_lo) + ", " + std::to_string(alpha_hi) +
                          "] does not contain the price; widen it");
  }
  if (g_lo == 0.0) return alpha_lo;
  if (g_hi == 0.0) return alpha_hi;
  while (alpha_hi - alpha_lo > tol) {
    const double mid = 0.5 * (alpha_lo + alpha_hi);
    const double g = phi(x0 - mid) - psi;
    if (g <= 0.0) alpha_lo = mid;
    else alpha_hi = mid;
  }
  return 0.5 * (alpha_lo + alpha_hi);
}

/// Trained storage problem ready for pricing and simulation.
struct StorageSolution {
  StageProblemSpec spec;
  CutPool pools;
  TrainReport report;
  double phi = 0.0;
  double psi = 0.0;
  double price = 0.0;
};

/// Builds, trains and prices in one go.
inline StorageSolution solve_storage(const StorageSpec& s, const MarkovChain& chain, std::span<const double> mean_curve,
                                     const TrainOptions& options) {
  StorageSolution out;
  out.spec = build_spec(s, chain, mean_curve);
  out.pools = init_pools(out.spec, chain, global_lower_bound(s));
  out.report = train(out.spec, chain, out.pools, s.initial_state(), options);
  out.phi = lower_bound(out.pools, s.initial_state());
  out.psi = baseline_value(s);
  out.price = indifference_price_closed(out.phi, out.psi, s.rho, s.interest, s.horizon);
  return out;
}

}  // namespace storval
