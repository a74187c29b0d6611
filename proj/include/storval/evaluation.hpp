#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "storval/error.hpp"
#include "storval/markov.hpp"
#include "storval/priceseries.hpp"
#include "storval/sddp.hpp"
#include "storval/storage.hpp"

namespace storval {

enum class SimulationMode { InSample, OutOfSample };

inline const char* to_string(SimulationMode m) { return m == SimulationMode::InSample ? "in-sample" : "out-of-sample"; }

/// One simulated scenario. Vectors indexed by stage t = 0..T, except
/// `control`, where entry t is the trade executed on the move t -> t+1.
struct PolicyTrace {
  std::vector<double> xi;
  std::vector<std::size_t> node;
  std::vector<Eigen::VectorXd> state;
  std::vector<double> control;
  std::vector<double> price;  // price[0] is the stage-0 reference price
  double terminal_wealth = 0.0;
  double cost = 0.0;
};

struct EvalSummary {
  double mean_cost = 0.0;
  double se_cost = 0.0;
  std::size_t n = 0;
  std::vector<double> wealth;

  double mean_wealth() const {
    if (wealth.empty()) return 0.0;
    double s = 0.0;
    for (double w : wealth) s += w;
    return s / static_cast<double>(wealth.size());
  }
};

struct SimulationResult {
  std::vector<PolicyTrace> traces;
  EvalSummary summary;
};

struct SimulationOptions {
  SimulationMode mode = SimulationMode::OutOfSample;
  std::size_t scenarios = 1000;
  std::uint64_t seed = 1;
  bool keep_traces = true;
  EngineOptions engine;
};

/// Seed of scenario `index`, independent of the order scenarios are run in.
inline std::uint64_t scenario_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Trade u projected onto the physical limits at stored energy e. The
/// interval always contains 0 because e lies in [0, capacity].
inline double clip_control(const StorageSpec& s, double energy, double u) {
  const double kept = (1.0 - s.loss) * energy;
  const double lo = std::max(s.discharge_min, -kept);
  const double hi = std::min(s.charge_max, s.capacity - kept);
  return std::clamp(u, lo, hi);
}

/// Terminal wealth from the unrolled cash recursion.
inline double wealth_identity(const StorageSpec& s, const PolicyTrace& trace) {
  const int horizon = static_cast<int>(trace.control.size());
  double w = std::pow(1.0 + s.interest, horizon) * s.x0;
  for (int t = 1; t <= horizon; ++t) {
    w -= std::pow(1.0 + s.interest, horizon - t) * trace.price[static_cast<std::size_t>(t)] *
         trace.control[static_cast<std::size_t>(t - 1)];
  }
  return w;
}

/**
 * @brief Runs the trained storage policy along simulated price paths.
 *
 * In-sample paths are drawn from the chain. Out-of-sample paths come from
 * the continuous residual process: the nearest chain node supplies the
 * control, while cash and energy move with the continuous price
 * exp(m_t + xi_t). Trades are projected onto the physical limits so every
 * path stays feasible.
 */
inline SimulationResult simulate(const StorageSpec& s, const StageProblemSpec& spec, const MarkovChain& chain,
                                 const CutPool& pools, std::span<const double> mean_curve, const OUParams& params,
                                 const SimulationOptions& options) {
  if (options.scenarios < 1) throw ValidationError("simulation needs at least one scenario");
  s.validate();
  const int horizon = chain.horizon();
  if (horizon != s.horizon || mean_curve.size() != static_cast<std::size_t>(horizon) + 1) {
    throw ValidationError("simulation inputs disagree on the horizon");
  }
  if (options.mode == SimulationMode::OutOfSample) params.validate();
  const Policy policy = extract_policy(spec, chain, pools, options.engine);

  SimulationResult result;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < options.scenarios; ++k) {
    const std::uint64_t seed = scenario_seed(options.seed, k);
    PolicyTrace trace;
    if (options.mode == SimulationMode::InSample) {
      std::mt19937_64 rng(seed);
      trace.node.push_back(0);
      for (int t = 0; t < horizon; ++t) trace.node.push_back(sample_successor(chain, t, trace.node.back(), rng));
      for (int t = 0; t <= horizon; ++t) trace.xi.push_back(chain.node(t, trace.node[static_cast<std::size_t>(t)]));
    } else {
      trace.xi = simulate_ou(params, chain.node(0, 0), horizon, seed);
      trace.node.push_back(0);
      for (int t = 1; t <= horizon; ++t) trace.node.push_back(nearest_node(chain, t, trace.xi[static_cast<std::size_t>(t)]));
    }
    for (int t = 0; t <= horizon; ++t) {
      trace.price.push_back(std::exp(mean_curve[static_cast<std::size_t>(t)] + trace.xi[static_cast<std::size_t>(t)]));
    }

    Eigen::VectorXd x = s.initial_state();
    trace.state.push_back(x);
    for (int t = 0; t < horizon; ++t) {
      const std::size_t from = trace.node[static_cast<std::size_t>(t)];
      const std::size_t to = trace.node[static_cast<std::size_t>(t) + 1];
      const auto [ub, ua] = policy.decide(t, from, x, to);
      const double u = clip_control(s, x[kEnergy], ua[0]);
      const double price = trace.price[static_cast<std::size_t>(t) + 1];
      Eigen::VectorXd next(2);
      next[kWealth] = (1.0 + s.interest) * x[kWealth] - price * u;
      next[kEnergy] = (1.0 - s.loss) * x[kEnergy] + u;
      trace.control.push_back(u);
      trace.state.push_back(next);
      x = std::move(next);
    }
    trace.terminal_wealth = x[kWealth];
    trace.cost = terminal_cost(trace.terminal_wealth, s.rho);
    sum += trace.cost;
    sum_sq += trace.cost * trace.cost;
    result.summary.wealth.push_back(trace.terminal_wealth);
    if (options.keep_traces) result.traces.push_back(std::move(trace));
  }
  const double n = static_cast<double>(options.scenarios);
  result.summary.n = options.scenarios;
  result.summary.mean_cost = sum / n;
  if (options.scenarios > 1) {
    const double var = std::max(0.0, (sum_sq - n * result.summary.mean_cost * result.summary.mean_cost) / (n - 1.0));
    result.summary.se_cost = std::sqrt(var / n);
  }
  return result;
}

/// Value at quantile q in [0, 1] with linear interpolation between order
/// statistics.
inline double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw ValidationError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level must lie in [0, 1]");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

inline constexpr std::size_t kKdeGridPoints = 512;

struct KdePoint {
  double x;
  double density;
};

/// Silverman's rule h = 1.06 * std * n^(-1/5).
inline double silverman_bandwidth(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : samples) var += (v - mean) * (v - mean);
  var /= n - 1.0;
  return 1.06 * std::sqrt(var) * std::pow(n, -0.2);
}

/**
 * @brief Gaussian kernel density on 512 equally spaced points spanning
 * [min - 3h, max + 3h]. Without `bandwidth` Silverman's rule is used.
 */
inline std::vector<KdePoint> kde(std::span<const double> samples, std::optional<double> bandwidth = {}) {
  if (samples.size() < 2) throw ValidationError("density estimate needs at least two samples");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo == hi) throw ValidationError("all samples are equal: zero bandwidth");
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples);
  if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("bandwidth must be positive");

  const double a = lo - 3.0 * h, b = hi + 3.0 * h;
  const double step = (b - a) / static_cast<double>(kKdeGridPoints - 1);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * M_PI));
  std::vector<KdePoint> out;
  out.reserve(kKdeGridPoints);
  for (std::size_t g = 0; g < kKdeGridPoints; ++g) {
    const double x = a + step * static_cast<double>(g);
    double d = 0.0;
    for (double v : samples) {
      const double z = (x - v) / h;
      d += std::exp(-0.5 * z * z);
    }
    out.push_back({x, d * norm});
  }
  return out;
}

/// Trapezoid integral of a curve.
inline double trapezoid(std::span<const KdePoint> curve) {
  double total = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    total += 0.5 * (curve[i].density + curve[i - 1].density) * (curve[i].x - curve[i - 1].x);
  }
  return total;
}

enum class SweepParameter { Capacity, ChargeRateFraction, Sigma, Rho };

inline const char* to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::Capacity: return "capacity";
    case SweepParameter::ChargeRateFraction: return "charge_rate_fraction";
    case SweepParameter::Sigma: return "sigma";
    case SweepParameter::Rho: return "rho";
  }
  return "?";
}

inline SweepParameter parse_sweep_parameter(const std::string& name) {
  if (name == "capacity") return SweepParameter::Capacity;
  if (name == "charge_rate_fraction" || name == "charge-rate-fraction") return SweepParameter::ChargeRateFraction;
  if (name == "sigma") return SweepParameter::Sigma;
  if (name == "rho") return SweepParameter::Rho;
  throw ValidationError("unknown sweep parameter '" + name +
                        "' (expected capacity, charge_rate_fraction, sigma or rho)");
}

/// Everything needed to rebuild, train and price one sweep point.
struct SweepSettings {
  StorageSpec storage;
  OUParams params;
  std::vector<double> mean_curve;
  double xi0 = 0.0;
  int quadrature_points = 8;
  TrainOptions train;
  /// ρ values priced at every point; ignored for a ρ sweep. Empty means
  /// the storage's own ρ.
  std::vector<double> rhos;
  /// In-sample scenarios used for a standard error of the price; 0 skips.
  std::size_t se_scenarios = 0;
};

struct SweepRow {
  double value = 0.0;
  double rho = 0.0;
  double price = 0.0;
  double price_se = 0.0;
  double phi = 0.0;
  double psi = 0.0;
};

/// Standard error of a cost estimate carried over to the price by the
/// derivative of the closed-form price in phi.
inline double price_standard_error(double phi, double cost_se, const StorageSpec& s) {
  return cost_se / ((s.rho * phi + 1.0) * s.growth());
}

inline std::vector<SweepRow> sweep(const SweepSettings& base, SweepParameter parameter, std::span<const double> values) {
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  std::vector<double> rhos = base.rhos;
  if (rhos.empty() || parameter == SweepParameter::Rho) rhos = {base.storage.rho};

  std::vector<SweepRow> rows;
  for (double v : values) {
    OUParams params = base.params;
    StorageSpec s = base.storage;
    switch (parameter) {
      case SweepParameter::Capacity: s.capacity = v; break;
      case SweepParameter::ChargeRateFraction:
        if (!(v >= 0.0)) throw ValidationError("charge rate fraction must be >= 0");
        s.charge_max = v * s.capacity;
        s.discharge_min = -v * s.capacity;
        break;
      case SweepParameter::Sigma: params.sigma = v; break;
      case SweepParameter::Rho: s.rho = v; break;
    }
    const MarkovChain chain = build_chain(params, base.quadrature_points, s.horizon, base.xi0);
    for (double rho : rhos) {
      if (parameter != SweepParameter::Rho) s.rho = rho;
      StorageSolution sol = solve_storage(s, chain, base.mean_curve, base.train);
      SweepRow row{v, s.rho, sol.price, 0.0, sol.phi, sol.psi};
      if (base.se_scenarios > 0) {
        SimulationOptions so;
        so.mode = SimulationMode::InSample;
        so.scenarios = base.se_scenarios;
        so.seed = base.train.seed;
        so.keep_traces = false;
        so.engine = base.train.engine;
        const auto sim = simulate(s, sol.spec, chain, sol.pools, base.mean_curve, params, so);
        row.price_se = price_standard_error(sol.phi, sim.summary.se_cost, s);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace storval
