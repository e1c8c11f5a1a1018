#include <gtest/gtest.h>

#include <rap/sensitivity.hpp>

#include "helpers.hpp"

using namespace rap;

TEST(Sensitivity, BiasFormula)
{
  SensitivityParams p{0.9, 0.2, 0.5};
  EXPECT_NEAR(bias_bound(1.5, 0.3, p), -0.5 * 0.3 * 0.2 + 1.5 * 0.1, 1e-15);
  p.rho.reset();
  EXPECT_NEAR(bias_bound(1.5, 0.3, p), 0.3 * 0.2 + 1.5 * 0.1, 1e-15);
  EXPECT_NEAR(max_abs_bias(1.5, 0.3, {1.2, 0.1, std::nullopt}), 0.03 + 0.3, 1e-15);
  EXPECT_EQ(bias_bound(1.3, 0.4, {1.0, 0.0, std::nullopt}), 0.0);
  EXPECT_THROW(bias_bound(1.0, 0.1, {1.0, 0.1, 1.5}), Error);
}

TEST(Sensitivity, BoundCurveBracketsEstimate)
{
  CurveEstimate c;
  c.grid = {0.4, 0.6, 0.8};
  c.est = {1.2, 1.0, 0.8};
  c.sd_x = {0.1, 0.0, 0.05};
  c.r0 = 0.6;
  auto b = bound_curve(c, {{0.95, 0.1, std::nullopt}});
  EXPECT_EQ(b.lo[1], 1.0);
  EXPECT_EQ(b.hi[1], 1.0);
  EXPECT_NEAR(b.hi[0] - b.est[0], 0.01 + 1.2 * 0.05, 1e-14);
  EXPECT_NEAR(b.est[2] - b.lo[2], 0.005 + 0.8 * 0.05, 1e-14);
  EXPECT_THROW(bound_curve(c, {{}, {}}), GridMismatch);
}

TEST(Sensitivity, ContourMonotoneInBothAxes)
{
  auto bc = contour_grid(1.3, 0.2, {0.0, 0.4}, {0.0, 0.4}, 5);
  ASSERT_EQ(bc.cells.size(), 25u);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const auto& c = bc.cells[i * 5 + j];
      if (j + 1 < 5)
        EXPECT_LE(c.max_bias, bc.cells[i * 5 + j + 1].max_bias);
      if (i + 1 < 5)
        EXPECT_LE(c.max_bias, bc.cells[(i + 1) * 5 + j].max_bias);
      EXPECT_EQ(c.explains, c.max_bias >= std::abs(1.3 - 1.0));
    }
  EXPECT_FALSE(bc.cells.front().explains);
  EXPECT_TRUE(bc.cells.back().explains);
}

TEST(Sensitivity, XiIsOneWhenConfounderIsIrrelevant)
{
  const Eigen::Index n = 5000;
  Eigen::MatrixXd base(n, 2);
  base.col(0).setOnes();
  base.col(1) = testutil::randn(n, 1);
  Eigen::VectorXd rv = (testutil::randn(n, 2).array() * 0.1 + 0.5).matrix();
  Eigen::VectorXd y(n);
  auto rng = make_rng(3);
  std::uniform_real_distribution<double> u;
  for (Eigen::Index i = 0; i < n; ++i)
    y(i) = u(rng) < sigmoid(-0.3 + 0.5 * base(i, 1) - 1.0 * rv(i)) ? 1.0 : 0.0;
  auto zero = xi_outcome_ratio(base, rv, y, Eigen::MatrixXd::Zero(n, 0), 0.3, 0.6);
  EXPECT_NEAR(zero.mean, 1.0, 1e-12);
  EXPECT_NEAR(zero.sd, 0.0, 1e-12);
  auto at = xi_outcome_ratio(base, rv, y, testutil::randn(n, 4), 0.6, 0.6);
  EXPECT_EQ(at.mean, 1.0);
}

TEST(Sensitivity, LpWorkedInstance)
{
  auto lo = lp_bounds_closed_form({1, 2, 3}, 2.0, Direction::min);
  EXPECT_NEAR(lo.value, 1.5, 1e-12);
  EXPECT_NEAR(lo.weights[0], 2.0, 1e-12);
  EXPECT_NEAR(lo.weights[1], 0.5, 1e-12);
  EXPECT_NEAR(lo.weights[2], 0.5, 1e-12);
  auto hi = lp_bounds_closed_form({1, 2, 3}, 2.0, Direction::max);
  EXPECT_NEAR(hi.value, 2.5, 1e-12);
}

TEST(Sensitivity, LpMatchesOracle)
{
  auto rng = make_rng(17);
  std::uniform_int_distribution<int> nn(1, 10);
  std::uniform_real_distribution<double> gd(1.01, 10.0), vd(-2.0, 5.0);
  for (int k = 0; k < 60; ++k) {
    std::vector<double> v(static_cast<std::size_t>(nn(rng)));
    for (auto& a : v)
      a = vd(rng);
    double g = gd(rng);
    for (auto dir : {Direction::min, Direction::max}) {
      auto b = lp_bounds_closed_form(v, g, dir);
      EXPECT_NEAR(b.value, lp_bounds_oracle(v, g, dir), 1e-10);
      double s = 0.0;
      for (double w : b.weights) {
        EXPECT_GE(w, 1.0 / g - 1e-12);
        EXPECT_LE(w, g + 1e-12);
        s += w;
      }
      EXPECT_NEAR(s, static_cast<double>(v.size()), 1e-12);
    }
  }
}

TEST(Sensitivity, LpErrors)
{
  EXPECT_THROW(lp_bounds_closed_form({}, 2.0, Direction::min), Error);
  EXPECT_THROW(lp_bounds_closed_form({1.0}, 1.0, Direction::min), Error);
  EXPECT_THROW(lp_bounds_oracle(std::vector<double>(13, 1.0), 2.0, Direction::min), TooLarge);
}

TEST(Sensitivity, MissingConfounder)
{
  EncounterTable t;
  t.y = {0};
  t.m = {1};
  t.d = {1};
  t.precinct = {0};
  t.q = 1;
  t.x = Eigen::MatrixXd::Zero(1, 1);
  t.r = std::vector<double>{0.5};
  EXPECT_THROW(xi_from_confounder(t, CovariateSchema::continuous({"x"}), 0.3, 0.6), MissingConfounder);
}
