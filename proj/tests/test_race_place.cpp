#include <gtest/gtest.h>

#include <rap/race_place.hpp>
#include <rap/sim_harness.hpp>

#include "helpers.hpp"

using namespace rap;

namespace {

struct Fit {
  SimData sim;
  RapData data;
  RapModels models;
};

Fit fit_scenario(int which, std::size_t n, std::uint64_t seed, RapOptions o = {})
{
  Fit f{testutil::scenario(which, n, seed), {}, {}};
  f.data = prepare_rap_data(f.sim.table.stopped(), f.sim.mobility());
  f.models = fit_rap_models(f.data, f.sim.schema, o);
  return f;
}

Eigen::RowVectorXd level(int x)
{
  Eigen::RowVectorXd v(1);
  v(0) = x - 1;
  return v;
}

}  // namespace

TEST(RacePlace, DefaultGrid)
{
  auto g = default_grid();
  ASSERT_EQ(g.size(), 13u);
  EXPECT_EQ(g.front(), 0.2);
  EXPECT_EQ(g[8], 0.6);
  EXPECT_EQ(g.back(), 0.8);
}

TEST(RacePlace, MarginalCurveIsOneAtBaseline)
{
  RapOptions o;
  o.B = 0;
  auto sim = testutil::scenario(1, 30000, 3);
  auto data = prepare_rap_data(sim.table.stopped(), sim.mobility());
  auto res = estimate_rap(data, sim.schema, o, false);
  auto it = std::find(res.full.grid.begin(), res.full.grid.end(), 0.6);
  ASSERT_NE(it, res.full.grid.end());
  auto g = static_cast<std::size_t>(it - res.full.grid.begin());
  EXPECT_EQ(res.full.est[g], 1.0);
  EXPECT_EQ(res.naive.est[g], 1.0);
}

TEST(RacePlace, RebasingIdentity)
{
  auto f = fit_scenario(1, 30000, 4);
  for (int x = 1; x <= 4; ++x)
    for (double r : {0.35, 0.45, 0.65}) {
      double direct = psi_conditional(f.models, r, 0.6, level(x));
      double rebased = psi_conditional(f.models, r, 0.5, level(x)) / psi_conditional(f.models, 0.6, 0.5, level(x));
      EXPECT_NEAR(direct, rebased, 1e-10);
    }
}

TEST(RacePlace, PopulationDensityIsCompositionWeightedKde)
{
  auto f = fit_scenario(1, 20000, 5);
  const auto& g = f.models.geo;
  Eigen::VectorXd cw = g.C.cwiseProduct(g.pi);
  for (double r : {0.3, 0.5, 0.7})
    EXPECT_NEAR(f_r_given_d1(f.models, r), weighted_kde(g.r, cw, f.models.kernel, r), 1e-12);
}

TEST(RacePlace, ConditionalCurveTracksTruth)
{
  auto f = fit_scenario(1, 100000, 6);
  for (double r : {0.4, 0.5, 0.7}) {
    double truth = psi_truth(2, r, 0.6);
    EXPECT_NEAR(psi_conditional(f.models, r, 0.6, level(2)) / truth, 1.0, 0.08) << "r = " << r;
  }
}

TEST(RacePlace, RangeAndDensityErrors)
{
  auto f = fit_scenario(1, 20000, 7);
  EXPECT_THROW(psi_conditional(f.models, 0.05, 0.6, level(2)), OutOfRange);
  EXPECT_THROW(density_ratio_adjust(0.0, 1.0, 1.0), ZeroDensity);
  EXPECT_DOUBLE_EQ(density_ratio_adjust(2.0, 3.0, 4.0), 1.5);
  auto clipped = clip_grid(default_grid(), f.models);
  EXPECT_LT(clipped.size(), default_grid().size());
  for (double r : clipped) {
    EXPECT_GE(r, f.models.rmin - 1e-12);
    EXPECT_LE(r, f.models.rmax + 1e-12);
  }
}

TEST(RacePlace, DensityModes)
{
  auto sim = testutil::scenario(1, 20000, 8);
  EXPECT_EQ(resolve_density(DensityMode::automatic, sim.schema), DensityMode::kde);
  auto cont = CovariateSchema::continuous({"a", "b"});
  EXPECT_EQ(resolve_density(DensityMode::automatic, cont), DensityMode::beta);
  EXPECT_THROW(resolve_density(DensityMode::kde, cont), Error);

  RapOptions o;
  o.density = DensityMode::beta;
  o.B = 0;
  auto data = prepare_rap_data(sim.table.stopped(), sim.mobility());
  auto res = estimate_rap(data, sim.schema, o, false);
  for (double v : res.full.est)
    EXPECT_TRUE(std::isfinite(v) && v > 0);
}

TEST(RacePlace, SubsampleCap)
{
  auto a = marginal_rows(1000, 100, 3);
  auto b = marginal_rows(1000, 100, 3);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 100u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(marginal_rows(50, 100, 3).size(), 50u);
}

TEST(RacePlace, RowValuesAverageToMarginalCurve)
{
  RapOptions o;
  o.B = 0;
  auto sim = testutil::scenario(2, 20000, 9);
  auto data = prepare_rap_data(sim.table.stopped(), sim.mobility());
  auto res = estimate_rap(data, sim.schema, o, false);
  for (std::size_t g = 0; g < res.full.grid.size(); ++g) {
    auto v = psi_row_values(res.models, res.full.grid[g], 0.6, data, res.rows);
    double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    EXPECT_NEAR(m, res.full.est[g], 1e-12);
  }
}

TEST(RacePlace, BootstrapThreadInvariant)
{
  RapOptions o;
  o.B = 8;
  o.threads = 1;
  auto sim = testutil::scenario(1, 10000, 10);
  auto data = prepare_rap_data(sim.table.stopped(), sim.mobility());
  auto a = estimate_rap(data, sim.schema, o, true);
  o.threads = 3;
  auto b = estimate_rap(data, sim.schema, o, true);
  EXPECT_EQ(a.full.lo, b.full.lo);
  EXPECT_EQ(a.full.hi, b.full.hi);
  EXPECT_EQ(a.naive.hi, b.naive.hi);
}

TEST(RacePlace, MonotoneCheckRelations)
{
  CurveEstimate full, naive;
  full.grid = naive.grid = {0.4, 0.6, 0.8};
  full.est = {1.3, 1.0, 0.7};
  naive.est = {1.2, 1.0, 0.8};
  auto b = monotone_bound_check(full, naive);
  EXPECT_EQ(b.relation, (std::vector<std::string>{"ge", "eq", "le"}));
  EXPECT_EQ(b.violations, 0u);
  full.est = {1.1, 1.0, 0.9};
  b = monotone_bound_check(full, naive);
  EXPECT_EQ(b.violations, 2u);
  naive.grid = {0.4, 0.6};
  EXPECT_THROW(monotone_bound_check(full, naive), GridMismatch);
}
