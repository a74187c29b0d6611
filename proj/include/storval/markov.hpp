#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "storval/error.hpp"
#include "storval/priceseries.hpp"

namespace storval {

/// N-point rule for a centred Gaussian: sum_i w_i f(x_i) ~ E[f(X)].
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
};

inline constexpr int kMaxQuadraturePoints = 64;

namespace detail {

// Orthonormal Hermite functions h_k(x) = H_k(x) / sqrt(2^k k! sqrt(pi)) at x,
// returns {h_n(x), h_{n-1}(x)}; stable through n = 64 without overflow.
inline std::pair<double, double> hermite_orthonormal(int n, double x) {
  double p_prev = 0.0;
  double p = 1.0 / std::sqrt(std::sqrt(std::numbers::pi));
  for (int k = 1; k <= n; ++k) {
    const double next = x * std::sqrt(2.0 / k) * p - std::sqrt((k - 1.0) / k) * p_prev;
    p_prev = p;
    p = next;
  }
  return {p, p_prev};
}

}  // namespace detail

/**
 * @brief Gauss-Hermite rule for the N(0, sigma^2) density.
 *
 * Nodes come from the eigenvalues of the symmetric Jacobi matrix of the
 * physicists' Hermite recurrence (Golub-Welsch), polished by Newton steps on
 * the orthonormal recurrence. Weights use the Christoffel formula
 * 1 / (n h_{n-1}(x)^2) and are normalised so they sum to one.
 */
inline Quadrature gauss_hermite(int n, double sigma) {
  if (n < 1) throw ValidationError("quadrature needs at least one point");
  if (n > kMaxQuadraturePoints) {
    throw ValidationError("quadrature limited to " + std::to_string(kMaxQuadraturePoints) + " points");
  }
  if (!(sigma > 0.0)) throw ValidationError("quadrature sigma must be positive");

  Quadrature q;
  if (n == 1) {
    q.nodes = {0.0};
    q.weights = {1.0};
    return q;
  }

  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd off(n - 1);
  for (int k = 1; k < n; ++k) off[k - 1] = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("Jacobi eigenproblem did not converge");

  std::vector<double> x(eig.eigenvalues().data(), eig.eigenvalues().data() + n);
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    for (int it = 0; it < 3; ++it) {
      const auto [hn, hn1] = detail::hermite_orthonormal(n, x[i]);
      const double dh = std::sqrt(2.0 * n) * hn1;  // h_n' = sqrt(2n) h_{n-1}
      if (dh == 0.0) break;
      x[i] -= hn / dh;
    }
    const double hn1 = detail::hermite_orthonormal(n, x[i]).second;
    w[i] = 1.0 / (n * hn1 * hn1);
  }
  // Enforce exact symmetry of the rule.
  for (int i = 0; i < n / 2; ++i) {
    const double xm = 0.5 * (x[n - 1 - i] - x[i]);
    const double wm = 0.5 * (w[i] + w[n - 1 - i]);
    x[i] = -xm;
    x[n - 1 - i] = xm;
    w[i] = w[n - 1 - i] = wm;
  }
  if (n % 2 == 1) x[n / 2] = 0.0;

  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  q.nodes.resize(n);
  q.weights.resize(n);
  const double scale = std::numbers::sqrt2 * sigma;
  for (int i = 0; i < n; ++i) {
    q.nodes[i] = scale * x[i];
    q.weights[i] = w[i] / total;
  }
  return q;
}

inline double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

/// One-step transition density of the residual process.
inline double conditional_density(const OUParams& params, double xi_from, double xi_to) {
  return normal_pdf(xi_to, (1.0 - params.a) * xi_from, params.sigma);
}

/// Finite-state approximation of the residual process on stages 0..T.
///
/// `transitions[t](j, i)` is the probability of node i at stage t + 1 given
/// node j at stage t. Stage 0 holds the single initial node.
struct MarkovChain {
  std::vector<std::vector<double>> nodes;
  std::vector<Eigen::MatrixXd> transitions;

  int horizon() const { return static_cast<int>(transitions.size()); }
  std::size_t node_count(int t) const { return nodes.at(static_cast<std::size_t>(t)).size(); }
  double node(int t, std::size_t i) const { return nodes[static_cast<std::size_t>(t)][i]; }
  double probability(int t, std::size_t from, std::size_t to) const {
    return transitions[static_cast<std::size_t>(t)](static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(to));
  }

  void validate(double tol = 1e-12) const {
    if (nodes.size() != transitions.size() + 1 || transitions.empty()) {
      throw ValidationError("chain needs T >= 1 transition matrices and T + 1 node sets");
    }
    for (std::size_t t = 0; t < transitions.size(); ++t) {
      const auto& p = transitions[t];
      if (static_cast<std::size_t>(p.rows()) != nodes[t].size() ||
          static_cast<std::size_t>(p.cols()) != nodes[t + 1].size()) {
        throw ValidationError("transition matrix " + std::to_string(t) + " has wrong shape");
      }
      for (Eigen::Index j = 0; j < p.rows(); ++j) {
        if ((p.row(j).array() < 0.0).any() || std::abs(p.row(j).sum() - 1.0) > tol) {
          throw ValidationError("transition row (" + std::to_string(t) + ", " + std::to_string(j) +
                                ") is not a probability vector");
        }
      }
    }
  }
};

/// Variance of the sampling density used to place the quadrature nodes.
enum class SamplingVariance {
  Innovation,  // N(0, sigma^2), the same at every stage
  Stationary,  // N(0, sigma^2 / (1 - (1 - a)^2))
};

/**
 * @brief Discretises the residual process by importance-weighted quadrature.
 *
 * Every stage t >= 1 shares the N quadrature nodes of the sampling density
 * phi. The raw weight of the move j -> i is p(xi_i | xi_j) / phi(xi_i) * w_i;
 * rows are then normalised to sum to one.
 */
inline MarkovChain build_chain(const OUParams& params, int n, int horizon, double xi0,
                               SamplingVariance sampling = SamplingVariance::Innovation) {
  params.validate();
  if (horizon < 1) throw ValidationError("chain horizon must be at least 1");
  double sd = params.sigma;
  if (sampling == SamplingVariance::Stationary) {
    const double rho = 1.0 - params.a;
    sd = params.sigma / std::sqrt(1.0 - rho * rho);
  }
  const Quadrature q = gauss_hermite(n, sd);

  MarkovChain chain;
  chain.nodes.push_back({xi0});
  for (int t = 1; t <= horizon; ++t) chain.nodes.push_back(q.nodes);

  for (int t = 0; t < horizon; ++t) {
    const auto& from = chain.nodes[static_cast<std::size_t>(t)];
    Eigen::MatrixXd p(static_cast<Eigen::Index>(from.size()), n);
    for (std::size_t j = 0; j < from.size(); ++j) {
      for (int i = 0; i < n; ++i) {
        const double xi = q.nodes[static_cast<std::size_t>(i)];
        const double target = conditional_density(params, from[j], xi);
        const double sampling_pdf = normal_pdf(xi, 0.0, sd);
        p(static_cast<Eigen::Index>(j), i) = target / sampling_pdf * q.weights[static_cast<std::size_t>(i)];
      }
      const double total = p.row(static_cast<Eigen::Index>(j)).sum();
      if (!(total > 1e-300)) {
        throw NumericalError("transition row (" + std::to_string(t) + ", " + std::to_string(j) +
                             ") has no mass on the quadrature support");
      }
      p.row(static_cast<Eigen::Index>(j)) /= total;
    }
    chain.transitions.push_back(std::move(p));
  }
  return chain;
}

/// Index of the stage-t node closest to xi; ties go to the smaller index.
inline std::size_t nearest_node(const MarkovChain& chain, int t, double xi) {
  const auto& nodes = chain.nodes.at(static_cast<std::size_t>(t));
  std::size_t best = 0;
  double best_dist = std::abs(nodes[0] - xi);
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const double d = std::abs(nodes[i] - xi);
    if (d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

}  // namespace storval
