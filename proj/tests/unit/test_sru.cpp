// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "moesim/error.hpp"
#include "moesim/predictor.hpp"
#include "moesim/sru.hpp"
#include "oracles.hpp"

using namespace moesim;

namespace {

SruLayerParams random_layer(int d, std::mt19937_64& rng, double scale = 0.8) {
  std::uniform_real_distribution<double> u(-scale, scale);
  SruLayerParams p{Eigen::MatrixXd(d, d), Eigen::MatrixXd(d, d), Eigen::MatrixXd(d, d), Eigen::VectorXd(d),
                   Eigen::VectorXd(d)};
  for (Eigen::MatrixXd* m : {&p.w, &p.w_f, &p.w_r}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = u(rng);
  }
  for (Eigen::VectorXd* v : {&p.b_f, &p.b_r}) {
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = u(rng);
  }
  return p;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST(SruCell, ZeroInputZeroState) {
  std::mt19937_64 rng(1);
  SruLayerParams p = random_layer(4, rng);
  p.b_f.setZero();
  p.b_r.setZero();
  const SruStep s = sru_cell(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), p);
  EXPECT_EQ(s.h, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(s.c, Eigen::VectorXd::Zero(4));
}

TEST(SruCell, SaturatedForgetGateKeepsState) {
  std::mt19937_64 rng(2);
  SruLayerParams p = random_layer(3, rng);
  p.w_f.setZero();
  p.b_f.setConstant(50.0);
  const Eigen::Vector3d c_prev(0.3, -1.2, 2.0);
  const SruStep s = sru_cell(Eigen::Vector3d(0.4, 0.1, -0.7), c_prev, p);
  EXPECT_TRUE(s.c.isApprox(c_prev, 1e-12));
}

TEST(SruCell, MatchesScalarEquations) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const SruLayerParams p = random_layer(3, rng);
    const Eigen::Vector3d x(n(rng), n(rng), n(rng));
    const Eigen::Vector3d c(n(rng), n(rng), n(rng));
    std::vector<double> h, c_next;
    oracle::scalar_sru_cell(to_vec(x), to_vec(c), p, h, c_next);
    const SruStep s = sru_cell(x, c, p);
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(s.h(i), h[i], 1e-12);
      EXPECT_NEAR(s.c(i), c_next[i], 1e-12);
    }
  }
}

TEST(SruCell, NonFiniteIsNumericError) {
  std::mt19937_64 rng(4);
  const SruLayerParams p = random_layer(2, rng);
  EXPECT_THROW(sru_cell(Eigen::Vector2d(std::numeric_limits<double>::infinity(), 0), Eigen::Vector2d::Zero(), p),
               NumericError);
}

TEST(SruForward, SingleTokenSingleLayerEqualsCell) {
  std::mt19937_64 rng(5);
  const std::vector<SruLayerParams> layers{random_layer(4, rng)};
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(1, 4);
  const SruStep s = sru_cell(x.row(0).transpose(), Eigen::VectorXd::Zero(4), layers[0]);
  EXPECT_TRUE(sru_forward(x, layers).row(0).transpose().isApprox(s.h, 1e-14));
}

TEST(SruForward, ZeroParametersHalveInput) {
  const int d = 5;
  const std::vector<SruLayerParams> layers{{Eigen::MatrixXd::Zero(d, d), Eigen::MatrixXd::Zero(d, d),
                                            Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d),
                                            Eigen::VectorXd::Zero(d)}};
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, d);
  EXPECT_TRUE(sru_forward(x, layers).isApprox(0.5 * x, 1e-15));
}

TEST(SruForward, MatchesUnrolledOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<SruLayerParams> layers{random_layer(4, rng), random_layer(4, rng)};
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
    const auto ref = oracle::scalar_sru_stack(x, layers);
    SruState state;
    const Eigen::MatrixXd h = sru_forward(x, layers, &state);
    ASSERT_EQ(state.c.size(), 2u);
    for (int t = 0; t < 3; ++t)
      for (int j = 0; j < 4; ++j) EXPECT_NEAR(h(t, j), ref[t][j], 1e-12);
  }
}

TEST(SruForward, ShapeMismatch) {
  const SruParams p = init_predictor(4, 1, 3, 2, 1);
  EXPECT_THROW(sru_forward(Eigen::MatrixXd::Zero(2, 5), p), ConfigError);
}

// Central differences against the analytic gradient of the training loss.
TEST(SruGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(2, 4);
  constexpr double kStep = 1e-4;
  for (int instance = 0; instance < 50; ++instance) {
    const int d = dim(rng);
    const int moe_layers = 1 + instance % 2;
    const int experts = dim(rng);
    const int tokens = dim(rng);
    SruParams params = init_predictor(d, moe_layers, experts, 1 + instance % 3, 100 + instance);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd x(tokens, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    LayerRouting labels(moe_layers, std::vector<ExpertId>(tokens));
    std::uniform_int_distribution<int> pick(0, experts - 1);
    for (auto& row : labels)
      for (auto& e : row) e = pick(rng);

    SruParams grad;
    const double loss = batch_loss_and_gradient(params, x, labels, grad);
    ASSERT_NEAR(loss, oracle::scalar_loss(params, x, labels), 1e-10);

    std::vector<double> analytic;
    grad.for_each_tensor([&](const std::string&, const auto& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) analytic.push_back(t.data()[i]);
    });
    std::size_t k = 0;
    params.for_each_tensor([&](const std::string& name, auto& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i, ++k) {
        const double saved = t.data()[i];
        t.data()[i] = saved + kStep;
        const double up = oracle::scalar_loss(params, x, labels);
        t.data()[i] = saved - kStep;
        const double down = oracle::scalar_loss(params, x, labels);
        t.data()[i] = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        const double scale = std::max({std::abs(numeric), std::abs(analytic[k]), 1e-6});
        ASSERT_LE(std::abs(numeric - analytic[k]) / scale, 1e-3)
            << "instance " << instance << " " << name << "[" << i << "] numeric " << numeric << " analytic "
            << analytic[k];
      }
    });
  }
}
