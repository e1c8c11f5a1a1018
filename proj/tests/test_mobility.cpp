#include <gtest/gtest.h>

#include <rap/mobility.hpp>

#include "helpers.hpp"

using namespace rap;

namespace {

FlowCounts toy()
{
  FlowCounts f;
  f.N.resize(3, 3);
  f.N << 80, 15, 5, 10, 60, 30, 0, 20, 80;
  return f;
}

}  // namespace

TEST(Mobility, TransitionRowsSumToOne)
{
  auto T = build_transition(toy());
  for (Eigen::Index i = 0; i < 3; ++i)
    EXPECT_NEAR(T.row(i).sum(), 1.0, 1e-15);
  FlowCounts z = toy();
  z.N.row(1).setZero();
  EXPECT_THROW(build_transition(z), ZeroRow);
}

TEST(Mobility, CompositionIsTimeWeightedResidentialShare)
{
  auto f = toy();
  Eigen::Vector3d p(0.1, 0.5, 0.9);
  auto pi = adjust_composition(f, p);
  EXPECT_NEAR(pi(0), (80 * 0.1 + 10 * 0.5) / 90.0, 1e-15);
  EXPECT_NEAR(pi(2), (5 * 0.1 + 30 * 0.5 + 80 * 0.9) / 115.0, 1e-15);
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_GE(pi(j), p.minCoeff());
    EXPECT_LE(pi(j), p.maxCoeff());
  }
}

TEST(Mobility, IdentityFlowsReturnResidentialShares)
{
  Eigen::Vector3d pop(100, 250, 40), p(0.2, 0.45, 0.7);
  auto m = MobilityModel::stay_home(pop, p);
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_EQ(m.pi(j), p(j));
    EXPECT_EQ(m.pi_product(j), p(j));
  }
  EXPECT_EQ(m.marginal_share(), m.census_share());
}

TEST(Mobility, BlendTransition)
{
  auto T = blend_transition(4, 0.9);
  EXPECT_NEAR(T(0, 0), 0.9 + 0.1 / 4, 1e-15);
  EXPECT_NEAR(T(0, 1), 0.1 / 4, 1e-15);
  EXPECT_NEAR(T.row(2).sum(), 1.0, 1e-15);
  EXPECT_THROW(blend_transition(3, 1.5), Error);
  Eigen::Vector4d p(0.1, 0.2, 0.3, 0.4);
  auto pi = adjust_composition_product(blend_transition(4, 1.0), p);
  EXPECT_TRUE(pi == Eigen::VectorXd(p));
}

TEST(Mobility, EmptyDestinationIsNaN)
{
  FlowCounts f;
  f.N.resize(2, 2);
  f.N << 5, 0, 3, 0;
  auto pi = adjust_composition(f, Eigen::Vector2d(0.5, 0.5));
  EXPECT_TRUE(std::isnan(pi(1)));
}

TEST(Mobility, LoadsFlowsAndResidentialCsv)
{
  auto d = testutil::temp_dir("mob");
  testutil::spit(d / "f.csv", "origin,dest,value\n0,0,5\n0,1,2\n1,1,4\n0,1,1\n");
  testutil::spit(d / "p.csv", "precinct,p\n0,0.3\n1,0.6\n");
  auto f = load_flows((d / "f.csv").string(), 2);
  EXPECT_EQ(f.N(0, 1), 3.0);
  EXPECT_EQ(f.N(1, 0), 0.0);
  auto p = load_residential((d / "p.csv").string(), 2);
  EXPECT_EQ(p(1), 0.6);
  testutil::spit(d / "bad.csv", "origin,dest,value\n0,0,-1\n");
  EXPECT_THROW(load_flows((d / "bad.csv").string(), 1), Error);
}
