#include <gtest/gtest.h>

#include <cmath>

#include "storval/markov.hpp"

using namespace storval;

namespace {

/// E[X^k] for X ~ N(0, sigma^2): zero for odd k, sigma^k (k - 1)!! otherwise.
double gaussian_moment(int k, double sigma) {
  if (k % 2 == 1) return 0.0;
  double m = 1.0;
  for (int j = k - 1; j > 1; j -= 2) m *= j;
  return m * std::pow(sigma, k);
}

double rule_moment(const Quadrature& q, int k) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q.weights[i] * std::pow(q.nodes[i], k);
  return s;
}

}  // namespace

TEST(GaussHermite, OnePointRule) {
  const auto q = gauss_hermite(1, 0.7);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q.nodes[0], 0.0);
  EXPECT_EQ(q.weights[0], 1.0);
}

TEST(GaussHermite, TwoAndThreePointRulesMatchMomentEquations) {
  const auto q2 = gauss_hermite(2, 1.0);
  EXPECT_NEAR(q2.nodes[0], -1.0, 1e-14);
  EXPECT_NEAR(q2.nodes[1], 1.0, 1e-14);
  EXPECT_NEAR(q2.weights[0], 0.5, 1e-14);
  EXPECT_NEAR(q2.weights[1], 0.5, 1e-14);

  const auto q3 = gauss_hermite(3, 1.0);
  EXPECT_NEAR(q3.nodes[0], -std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(q3.nodes[1], 0.0, 1e-14);
  EXPECT_NEAR(q3.nodes[2], std::sqrt(3.0), 1e-14);
  EXPECT_NEAR(q3.weights[0], 1.0 / 6.0, 1e-14);
  EXPECT_NEAR(q3.weights[1], 2.0 / 3.0, 1e-14);
  EXPECT_NEAR(q3.weights[2], 1.0 / 6.0, 1e-14);
}

TEST(GaussHermite, ExactForMomentsUpTo2NMinus1) {
  for (double sigma : {0.1, 1.0, 2.5}) {
    for (int n = 1; n <= 8; ++n) {
      const auto q = gauss_hermite(n, sigma);
      for (int k = 0; k <= 2 * n - 1; ++k) {
        const double exact = gaussian_moment(k, sigma);
        const double scale = std::max(std::abs(exact), std::pow(sigma, k));
        EXPECT_LE(std::abs(rule_moment(q, k) - exact), 1e-9 * scale) << "n=" << n << " k=" << k;
      }
    }
  }
}

TEST(GaussHermite, LargeRulesStayAccurate) {
  const auto q = gauss_hermite(64, 1.0);
  ASSERT_EQ(q.size(), 64u);
  for (std::size_t i = 0; i < q.size(); ++i) {
    EXPECT_GT(q.weights[i], 0.0);
    if (i > 0) EXPECT_LT(q.nodes[i - 1], q.nodes[i]);
    EXPECT_NEAR(q.nodes[i], -q.nodes[q.size() - 1 - i], 1e-10);
  }
  for (int k = 0; k <= 10; ++k) EXPECT_NEAR(rule_moment(q, k), gaussian_moment(k, 1.0), 1e-9 * std::max(1.0, gaussian_moment(k, 1.0)));
}

TEST(GaussHermite, RejectsBadArguments) {
  EXPECT_THROW((void)gauss_hermite(0, 1.0), ValidationError);
  EXPECT_THROW((void)gauss_hermite(65, 1.0), ValidationError);
  EXPECT_THROW((void)gauss_hermite(3, 0.0), ValidationError);
}

TEST(ConditionalDensity, Examples) {
  const double peak = 1.0 / (0.1 * std::sqrt(2.0 * M_PI));
  EXPECT_NEAR(conditional_density({0.5, 0.1}, 0.2, 0.1), peak, 1e-12);
  EXPECT_NEAR(conditional_density({0.5, 0.1}, 0.2, 0.1), 3.989422804014327, 1e-12);
  EXPECT_DOUBLE_EQ(conditional_density({1.0, 0.3}, -2.0, 0.4), conditional_density({1.0, 0.3}, 5.0, 0.4));
  const double x = 0.37, mean = (1.0 - 0.4) * 0.2;
  EXPECT_NEAR(conditional_density({0.4, 0.2}, 0.2, x),
              std::exp(-0.5 * std::pow((x - mean) / 0.2, 2)) / (0.2 * std::sqrt(2.0 * M_PI)), 1e-14);
}

TEST(BuildChain, OnePointChainIsDeterministic) {
  const auto c = build_chain({0.3, 0.2}, 1, 5, 0.0);
  EXPECT_EQ(c.horizon(), 5);
  for (int t = 0; t <= 5; ++t) {
    ASSERT_EQ(c.node_count(t), 1u);
    EXPECT_EQ(c.node(t, 0), 0.0);
  }
  for (int t = 0; t < 5; ++t) EXPECT_EQ(c.probability(t, 0, 0), 1.0);
}

TEST(BuildChain, RowsAreStochastic) {
  for (int n : {2, 4, 8, 16, 32}) {
    const auto c = build_chain({0.3, 0.15}, n, 6, 0.1);
    for (int t = 0; t < c.horizon(); ++t) {
      const auto& p = c.transitions[static_cast<std::size_t>(t)];
      EXPECT_EQ(p.cols(), n);
      for (Eigen::Index j = 0; j < p.rows(); ++j) {
        EXPECT_NEAR(p.row(j).sum(), 1.0, 1e-12);
        EXPECT_GE(p.row(j).minCoeff(), 0.0);
      }
    }
    EXPECT_NO_THROW(c.validate());
  }
}

TEST(BuildChain, RawWeightsThenNormalisation) {
  const OUParams params{0.4, 0.2};
  const auto c = build_chain(params, 3, 2, 0.05);
  const auto q = gauss_hermite(3, params.sigma);
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> raw(3);
    double total = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double x = q.nodes[i];
      const double mean = 0.6 * q.nodes[j];
      const double p = std::exp(-0.5 * std::pow((x - mean) / 0.2, 2));
      const double phi = std::exp(-0.5 * std::pow(x / 0.2, 2));
      raw[i] = p / phi * q.weights[i];
      total += raw[i];
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(c.probability(1, j, i), raw[i] / total, 1e-14);
  }
}

TEST(BuildChain, FullReversionGivesIdenticalRows) {
  const auto c = build_chain({1.0, 0.2}, 6, 3, 0.4);
  for (int t = 1; t < c.horizon(); ++t) {
    const auto& p = c.transitions[static_cast<std::size_t>(t)];
    for (Eigen::Index j = 1; j < p.rows(); ++j) EXPECT_LT((p.row(j) - p.row(0)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(BuildChain, ConditionalMeanOfInteriorNodes) {
  const OUParams params{0.5, 0.1};
  const auto c = build_chain(params, 8, 2, 0.0);
  for (std::size_t j = 1; j + 1 < 8; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < 8; ++i) mean += c.probability(1, j, i) * c.node(2, i);
    const double exact = 0.5 * c.node(1, j);
    EXPECT_NEAR(mean, exact, 0.02 * std::abs(exact)) << "node " << j;
  }
}

TEST(BuildChain, StageOneVarianceMatchesSigma) {
  const double sigma = 0.15;
  const auto c = build_chain({0.3, sigma}, 8, 1, 0.0);
  double var = 0;
  for (std::size_t i = 0; i < 8; ++i) var += c.probability(0, 0, i) * c.node(1, i) * c.node(1, i);
  EXPECT_NEAR(var / (sigma * sigma), 1.0, 0.05);
}

TEST(BuildChain, StationarySamplingWidensTheGrid) {
  const OUParams params{0.3, 0.15};
  const auto inno = build_chain(params, 4, 2, 0.0);
  const auto stat = build_chain(params, 4, 2, 0.0, SamplingVariance::Stationary);
  const double ratio = 1.0 / std::sqrt(1.0 - 0.7 * 0.7);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(stat.node(1, i), ratio * inno.node(1, i), 1e-12);
  EXPECT_NO_THROW(stat.validate());
}

TEST(BuildChain, RejectsBadInputs) {
  EXPECT_THROW((void)build_chain({0.3, 0.0}, 4, 2, 0.0), ValidationError);
  EXPECT_THROW((void)build_chain({2.5, 0.1}, 4, 2, 0.0), ValidationError);
  EXPECT_THROW((void)build_chain({0.3, 0.1}, 0, 2, 0.0), ValidationError);
  EXPECT_THROW((void)build_chain({0.3, 0.1}, 4, 0, 0.0), ValidationError);
  // A start far outside the support leaves no mass on the nodes.
  EXPECT_THROW((void)build_chain({0.01, 0.01}, 2, 2, 1e4), NumericalError);
}

TEST(NearestNode, ExactMidpointAndBeyond) {
  const auto c = build_chain({0.3, 1.0}, 3, 1, 0.0);  // nodes -sqrt3, 0, sqrt3
  EXPECT_EQ(nearest_node(c, 1, 0.0), 1u);
  EXPECT_EQ(nearest_node(c, 1, std::sqrt(3.0)), 2u);
  EXPECT_EQ(nearest_node(c, 1, c.node(1, 1) / 2 + c.node(1, 2) / 2), 1u);
  EXPECT_EQ(nearest_node(c, 1, (c.node(1, 0) + c.node(1, 1)) / 2), 0u);
  EXPECT_EQ(nearest_node(c, 1, 100.0), 2u);
  EXPECT_EQ(nearest_node(c, 1, -100.0), 0u);
  EXPECT_EQ(nearest_node(c, 0, 5.0), 0u);
}
