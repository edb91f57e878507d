// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "moesim/error.hpp"
#include "moesim/sparsemax.hpp"
#include "oracles.hpp"

using namespace moesim;

TEST(Sparsemax, Examples) {
  EXPECT_TRUE(sparsemax(Eigen::Vector2d(0, 0)).isApprox(Eigen::Vector2d(0.5, 0.5)));
  EXPECT_EQ(sparsemax(Eigen::Vector2d(10, 0)), Eigen::Vector2d(1, 0));
  const Eigen::VectorXd p = sparsemax(Eigen::Vector3d(0.5, 0.1, 0.05));
  EXPECT_NEAR(p(0), 0.6167, 1e-4);
  EXPECT_NEAR(p(1), 0.2167, 1e-4);
  EXPECT_NEAR(p(2), 0.1667, 1e-4);
}

TEST(Sparsemax, MatchesBruteForceProjection) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(1, 9);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = size(rng);
    const double scale = trial % 3 == 0 ? 0.1 : (trial % 3 == 1 ? 1.0 : 5.0);
    std::vector<double> z(n);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = z[i] = scale * normal(rng);
    const Eigen::VectorXd p = sparsemax(v);
    const std::vector<double> ref = oracle::brute_simplex_projection(z);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      ASSERT_NEAR(p(i), ref[i], 1e-6);
      ASSERT_GE(p(i), 0.0);
      sum += p(i);
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
    ASSERT_EQ(argmax_lowest(p), argmax_lowest(v));
  }
}

TEST(Sparsemax, ArgmaxLowestTieBreak) {
  EXPECT_EQ(argmax_lowest(Eigen::Vector4d(1, 3, 3, 2)), 1);
  EXPECT_EQ(argmax_lowest(Eigen::Vector2d(0, 0)), 0);
}

TEST(Sparsemax, RejectsNonFinite) {
  EXPECT_THROW(sparsemax(Eigen::Vector2d(std::numeric_limits<double>::quiet_NaN(), 0)), NumericError);
  EXPECT_THROW(sparsemax(Eigen::Vector2d(std::numeric_limits<double>::infinity(), 0)), NumericError);
}
