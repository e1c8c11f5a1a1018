#include <gtest/gtest.h>

#include <rap/benchmark.hpp>
#include <rap/sim_harness.hpp>

#include "helpers.hpp"

using namespace rap;

namespace {

OutcomeRows twin_rows(std::size_t n, std::uint64_t seed)
{
  DgpSpec s;
  s.name = "benchmark_appH";
  s.n = n;
  s.seed = seed;
  auto sim = generate(s);
  return outcome_rows(sim.table, sim.schema);
}

}  // namespace

TEST(Benchmark, ConfounderHitsTargets)
{
  auto o = twin_rows(40000, 2);
  for (auto [ty, tr] : std::vector<std::pair<double, double>>{{0.1, 0.0}, {0.0, 0.2}, {0.15, 0.1}})
    for (int sy : {1, -1})
      for (int sr : {1, -1}) {
        auto u = construct_confounder(o.base, o.r, o.y, {ty, tr, sy, sr, 1.0}, 5);
        auto [ay, ar] = achieved_r2(o.base, o.r, o.y, u);
        EXPECT_NEAR(ay, ty, 1e-10);
        EXPECT_NEAR(ar, tr, 1e-10);
        Eigen::MatrixXd XR = detail::hcat(o.base, o.r);
        if (ty > 0)
          EXPECT_EQ(detail::corr(ols_residuals(XR, o.y), ols_residuals(XR, u)) > 0, sy > 0);
        if (tr > 0)
          EXPECT_EQ(detail::corr(ols_residuals(o.base, o.r), ols_residuals(o.base, u)) > 0, sr > 0);
      }
}

TEST(Benchmark, PartialR2IsSquaredPartialCorrelation)
{
  const Eigen::Index n = 3000;
  Eigen::MatrixXd ctrl(n, 2);
  ctrl.col(0).setOnes();
  ctrl.col(1) = testutil::randn(n, 1);
  Eigen::VectorXd z = testutil::randn(n, 2) + 0.5 * ctrl.col(1);
  Eigen::VectorXd y = 0.3 * z + ctrl.col(1) + testutil::randn(n, 3);
  double c = detail::corr(ols_residuals(ctrl, y), ols_residuals(ctrl, z));
  EXPECT_NEAR(partial_r2(y, z, ctrl), c * c, 1e-12);
  EXPECT_NEAR(partial_r2(y, Eigen::MatrixXd::Zero(n, 0), ctrl), 0.0, 1e-12);
}

TEST(Benchmark, TargetValidation)
{
  auto o = twin_rows(5000, 3);
  EXPECT_THROW(construct_confounder(o.base, o.r, o.y, {1.0, 0.0, 1, 1, 1.0}, 1), TargetOutOfRange);
  EXPECT_THROW(construct_confounder(o.base, o.r, o.y, {0.1, -0.1, 1, 1, 1.0}, 1), TargetOutOfRange);
  EXPECT_THROW(construct_confounder(o.base.topRows(3), o.r.head(3), o.y.head(3), {0.1, 0.1, 1, 1, 1.0}, 1),
               InsufficientData);
}

TEST(Benchmark, FormalReportSelectsWorstCase)
{
  DgpSpec s;
  s.name = "benchmark_appH";
  s.n = 30000;
  s.seed = 4;
  auto sim = generate(s);
  auto o = outcome_rows(sim.table, sim.schema);
  auto rep = formal_benchmark(o, sim.schema, 0, 1.0, 0.6, 0.0, 9);
  ASSERT_EQ(rep.rows.size(), 4u);
  std::size_t sel = 0;
  double worst = 0.0;
  for (const auto& r : rep.rows) {
    sel += r.selected;
    worst = std::max(worst, std::abs(r.bias));
    EXPECT_NEAR(r.achieved_r2_y, rep.base_r2_y, 1e-8);
    EXPECT_NEAR(r.achieved_r2_r, rep.base_r2_r, 1e-8);
  }
  EXPECT_EQ(sel, 1u);
  for (const auto& r : rep.rows)
    if (r.selected)
      EXPECT_EQ(std::abs(r.bias), worst);
  EXPECT_GT(rep.base_r2_y, 0.0);
  EXPECT_LT(rep.informal.mean, 1.0);
}

TEST(Benchmark, StrengthScalesWithK)
{
  auto o = twin_rows(30000, 6);
  auto s = CovariateSchema::continuous({"x"});
  auto a = formal_benchmark(o, s, 0, 0.5, 0.6, 0.0, 2);
  auto b = formal_benchmark(o, s, 0, 2.0, 0.6, 0.0, 2);
  EXPECT_NEAR(a.rows[0].r2_y * 4.0, b.rows[0].r2_y, 1e-12);
  double sa = 0, sb = 0;
  for (const auto& r : a.rows)
    sa = std::max(sa, r.sd_xi);
  for (const auto& r : b.rows)
    sb = std::max(sb, r.sd_xi);
  EXPECT_LT(sa, sb);
}
