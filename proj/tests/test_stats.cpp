#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kpzlab/stats.hpp"

using namespace kpzlab;

namespace {

ExperimentConfig base(double beta, double horizon, std::int64_t samples) {
  ExperimentConfig c;
  c.beta = beta;
  c.horizon = horizon;
  c.samples = samples;
  return c;
}

template <int D>
std::vector<CovarianceRecord<D>> synthetic(double amplitude, double slope) {
  std::vector<CovarianceRecord<D>> out;
  for (double r : {1.0, 1.5, 2.0, 3.0, 4.0}) {
    CovarianceRecord<D> rec;
    rec.x = axis_point<D>(r);
    const double c = amplitude * std::pow(r, slope);
    rec.overlap = MeanSE{c, 0.01 * c, 100};
    out.push_back(rec);
  }
  return out;
}

}  // namespace

TEST(Covariance, ZeroCouplingIsZero) {
  const ExperimentConfig c = base(0.0, 5.0, 8);
  const auto p = covariance_pair<3>(c, axis_point<3>(1.0), 4);
  EXPECT_EQ(p.pair->mean, 0.0);
  EXPECT_EQ(p.pair->se, 0.0);
  EXPECT_EQ(covariance_overlap<3>(c, axis_point<3>(1.0), 5.0).overlap->mean, 0.0);
}

TEST(Covariance, PairMatchesOverlapOracle) {
  ExperimentConfig c = base(0.5, 5.0, 32);
  const auto p = covariance_pair<3>(c, axis_point<3>(1.0), 150);
  c.samples = 20000;
  const auto o = covariance_overlap<3>(c, axis_point<3>(1.0), 5.0);
  EXPECT_GT(o.overlap->mean, 0.0);
  EXPECT_LE(std::fabs(p.pair->mean - o.overlap->mean), 3.0 * std::hypot(p.pair->se, o.overlap->se));
}

TEST(Covariance, DistantPointsUncorrelated) {
  const ExperimentConfig c = base(0.5, 1.0, 16);
  const auto p = covariance_pair<3>(c, axis_point<3>(6.0), 100);
  EXPECT_LE(std::fabs(p.pair->mean), 3.0 * p.pair->se);
  EXPECT_EQ(covariance_overlap<3>(c, axis_point<3>(6.0), 1.0).overlap->mean, 0.0);
}

TEST(PowerLaw, RecoversSyntheticSlopes) {
  const PowerLawFit f3 = powerlaw_fit<3>(synthetic<3>(0.3, -1.0));
  EXPECT_NEAR(f3.slope, -1.0, 1e-10);
  EXPECT_EQ(f3.used, 5u);
  EXPECT_TRUE(f3.warnings.empty());
  const PowerLawFit f4 = powerlaw_fit<4>(synthetic<4>(0.1, -2.0));
  EXPECT_NEAR(f4.slope, -2.0, 1e-10);
  EXPECT_LE(f4.ci.lo, -2.0);
  EXPECT_GE(f4.ci.hi, -2.0);
}

TEST(PowerLaw, NonpositiveValuesExcludedWithWarning) {
  auto recs = synthetic<3>(0.3, -1.0);
  recs[4].overlap->mean = -0.001;
  const PowerLawFit f = powerlaw_fit<3>(recs);
  EXPECT_EQ(f.used, 4u);
  ASSERT_EQ(f.warnings.size(), 1u);
  EXPECT_NEAR(f.slope, -1.0, 1e-10);
}

TEST(Sigma2, ZeroCouplingIsKernelMass) {
  // int V(sqrt2 y) dy = 2^{-3/2} int V = 2^{-3/2}.
  const Sigma2Estimate s = sigma2_relative<3>(base(0.0, 5.0, 4), 5.0);
  EXPECT_NEAR(s.value.mean, std::pow(2.0, -1.5), 2e-4);
  EXPECT_EQ(s.value.se, 0.0);
  EXPECT_FALSE(s.diverging);
}

TEST(Sigma2, IncreasesWithCoupling) {
  double prev = 0.0;
  for (double beta : {0.0, 0.3, 0.6}) {
    const Sigma2Estimate s = sigma2_relative<3>(base(beta, 2.0, 50), 2.0);
    EXPECT_GT(s.value.mean, prev);
    EXPECT_GE(s.doubled.mean, s.value.mean);
    prev = s.value.mean;
  }
}

TEST(Plateau, ZeroCouplingAndShape) {
  const auto z = martingale_plateau<3>(base(0.0, 4.0, 8), {1.0, 2.0, 4.0}, 4);
  for (const auto& m : z.second_moment) EXPECT_EQ(m.mean, 1.0);
  for (const auto& m : z.increment) EXPECT_EQ(m.mean, 0.0);
  const auto t = martingale_plateau<3>(base(0.5, 4.0, 16), {1.0, 2.0, 4.0}, 60);
  ASSERT_EQ(t.second_moment.size(), 3u);
  ASSERT_EQ(t.increment.size(), 2u);
  for (const auto& m : t.increment) EXPECT_GE(m.mean, -3.0 * m.se);
  EXPECT_THROW((void)martingale_plateau<3>(base(0.5, 4.0, 16), {2.0, 1.0}, 4), Error);
}

TEST(GapStudy, ZeroCouplingFlatGapIsExact) {
  GapSetup<3> s;
  s.seeds = 2;
  const GapRecord r = theorem1_gap<3>(base(0.0, 1.0, 4), s);
  ASSERT_EQ(r.rows.size(), 3u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.mean.mean, 0.0);
    EXPECT_TRUE(row.wrap_ok);
  }
}

TEST(GapStudy, GeneralNeedsHeight) {
  GapSetup<3> s;
  s.variant = InitialVariant::general;
  EXPECT_THROW((void)theorem1_gap<3>(base(0.0, 1.0, 4), s), Error);
  EXPECT_EQ(parse_variant("droplet"), InitialVariant::droplet);
  try {
    (void)parse_variant("wedge");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config_error);
  }
}

TEST(GapStudy, DropletKernelError) {
  EXPECT_LT(std::fabs(droplet_kernel_error<3>(1.0, 2.0, zero_point<3>(), zero_point<3>())), 1e-2);
}

TEST(NarrowWedge, ZeroCouplingIsHeatKernel) {
  ExperimentConfig c = base(0.0, 1.0, 4);
  c.eps = 0.5;
  c.dt = 0.0625;
  const Point<3> x{0.5, 0.0, 0.0};
  const NarrowWedge w = narrow_wedge_mean<3>(c, 1.0, x, zero_point<3>(), 3);
  EXPECT_EQ(w.factor.mean, 1.0);
  EXPECT_DOUBLE_EQ(w.u.mean, heat_kernel<3>(1.0, x));
}

TEST(Tails, ZeroCouplingHasNoExceedances) {
  const auto recs = tail_study<3>(base(0.0, 2.0, 4), {1.0, 2.0}, {0.0, 0.5}, 10);
  ASSERT_EQ(recs.size(), 4u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.exceedances[1], 0u);
    EXPECT_EQ(r.inverse_moment.mean, 1.0);
    EXPECT_TRUE(r.monotone);
  }
}

TEST(Tails, RecordFitsGaussianTail) {
  // log Z = -|N(0, s^2)| has P(log Z <= -theta) = 2 Pbar(theta / s).
  std::vector<double> lz;
  const std::size_t n = 200000;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    lz.push_back(-std::fabs(0.5 * normal_quantile(u)));
  }
  const TailRecord r = detail::tail_record(lz, {0.0, 0.25, 0.5, 0.75, 1.0}, 1.0, 1);
  EXPECT_TRUE(r.monotone);
  EXPECT_EQ(r.exceedances[0], n);
  // theta = 0.5 is one standard deviation: 2 * 0.158655.
  EXPECT_NEAR(r.probability[2], 0.317311, 1e-4);
  EXPECT_GT(r.c_hat, 0.0);
  EXPECT_GE(r.fitted, 2u);
}

TEST(Split, ZeroCoupling) {
  const SplitRow row = decorrelation_split<3>(base(0.0, 8.0, 4), 8.0, 2.0, 20);
  EXPECT_EQ(row.l1_gap.mean, 0.0);
  EXPECT_EQ(row.bridge.mean, 1.0);
  EXPECT_EQ(row.product.mean, 1.0);
  EXPECT_GT(row.middle_occupation.mean, 0.0);
}

TEST(Split, LongWindowRejected) {
  EXPECT_THROW((void)decorrelation_split<3>(base(0.2, 8.0, 4), 8.0, 2.5, 4), Error);
}
