#include <gtest/gtest.h>

#include <rap/crr.hpp>

#include "helpers.hpp"

using namespace rap;

TEST(Crr, RaceRatioAdjustClamps)
{
  bool clamped = false;
  EXPECT_NEAR(race_ratio_adjust(0.5, 0.3, 0.6, &clamped), 0.25, 1e-15);
  EXPECT_FALSE(clamped);
  EXPECT_EQ(race_ratio_adjust(0.9, 0.9, 0.5, &clamped), 1.0 - 1e-10);
  EXPECT_TRUE(clamped);
}

TEST(Crr, PercentileSkipsNaN)
{
  std::vector<double> v{3, std::nan(""), 1, 2, 4};
  EXPECT_DOUBLE_EQ(percentile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile(v, 0.0), 1.0);
  EXPECT_TRUE(std::isnan(percentile({std::nan("")}, 0.5)));
}

TEST(Crr, IdentityMobilityMakesMobilityEqualCensus)
{
  auto sim = testutil::scenario(1, 40000, 6);
  auto admin = sim.table.stopped();
  admin.r.reset();
  auto mob = sim.mobility();
  for (auto scope : {CrrScope::precinct, CrrScope::citywide}) {
    CrrOptions o;
    o.scope = scope;
    o.B = 5;
    o.variants = {"mobility", "census"};
    auto est = estimate_crr(admin, sim.schema, mob, o);
    ASSERT_FALSE(est.empty());
    for (std::size_t k = 0; k + 1 < est.size(); k += 2) {
      ASSERT_EQ(est[k].precinct, est[k + 1].precinct);
      if (std::isnan(est[k].value)) {
        EXPECT_TRUE(std::isnan(est[k + 1].value));
        continue;
      }
      EXPECT_EQ(est[k].value, est[k + 1].value);
      EXPECT_EQ(est[k].lo, est[k + 1].lo);
      EXPECT_EQ(est[k].hi, est[k + 1].hi);
    }
  }
}

TEST(Crr, CitywideCrrNearOneWithoutRacialBias)
{
  auto sim = testutil::scenario(1, 100000, 7);
  auto admin = sim.table.stopped();
  CrrOptions o;
  o.scope = CrrScope::citywide;
  o.B = 0;
  o.variants = {"mobility"};
  Eigen::RowVectorXd x(1);
  x(0) = 3;
  o.at_x = x;
  auto est = estimate_crr(admin, sim.schema, sim.mobility(), o);
  ASSERT_EQ(est.size(), 1u);
  EXPECT_EQ(est[0].precinct, -1);
  EXPECT_NEAR(est[0].value, 1.0, 0.1);
}

TEST(Crr, NaiveIsOutcomeRatio)
{
  auto sim = testutil::scenario(1, 20000, 8);
  auto admin = sim.table.stopped();
  Encoder enc(sim.schema, admin.x);
  std::vector<std::size_t> rows(admin.n());
  std::iota(rows.begin(), rows.end(), 0);
  auto m = fit_crr_models(admin, enc, rows, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(rows.size())), false,
                          false);
  Eigen::RowVectorXd x(1);
  x(0) = 1;
  auto xe = enc.row(x);
  EXPECT_DOUBLE_EQ(crr_naive(m, x), outcome_prob(m, xe, 1) / outcome_prob(m, xe, 0));
  m.pd = m.pd_m1;
  EXPECT_NEAR(crr_conditional(m, x), crr_naive(m, x), 1e-12);
}

TEST(Crr, MinStopsDropsSmallPrecincts)
{
  auto sim = testutil::scenario(1, 5000, 9);
  auto admin = sim.table.stopped();
  CrrOptions o;
  o.B = 0;
  o.variants = {"naive"};
  o.min_stops = 1000000;
  EXPECT_TRUE(estimate_crr(admin, sim.schema, sim.mobility(), o).empty());
}

TEST(Crr, BlendVariantLabelAndPooledScope)
{
  auto sim = testutil::scenario(1, 30000, 10);
  auto admin = sim.table.stopped();
  CrrOptions o;
  o.scope = CrrScope::pooled;
  o.B = 0;
  o.alpha = 0.75;
  o.variants = {"blend"};
  auto est = estimate_crr(admin, sim.schema, sim.mobility(), o);
  ASSERT_FALSE(est.empty());
  EXPECT_EQ(est[0].variant, "blend(0.75)");
  std::size_t finite = 0;
  for (const auto& e : est)
    finite += std::isfinite(e.value);
  EXPECT_GT(finite, est.size() / 2);
}

TEST(Crr, BootstrapIsThreadCountInvariant)
{
  auto sim = testutil::scenario(2, 20000, 12);
  auto admin = sim.table.stopped();
  CrrOptions o;
  o.scope = CrrScope::citywide;
  o.B = 16;
  o.threads = 1;
  auto a = estimate_crr(admin, sim.schema, sim.mobility(), o);
  o.threads = 4;
  auto b = estimate_crr(admin, sim.schema, sim.mobility(), o);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].lo, b[k].lo);
    EXPECT_EQ(a[k].hi, b[k].hi);
  }
}
