#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kpzlab/core/counter_rng.hpp"
#include "kpzlab/core/estimators.hpp"
#include "kpzlab/core/parallel.hpp"

using namespace kpzlab;

TEST(Estimators, MeanAndStandardError) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  const MeanSE m = mean_se(xs);
  EXPECT_DOUBLE_EQ(m.mean, 3.0);
  EXPECT_NEAR(m.se, std::sqrt(2.5 / 5.0), 1e-15);
  EXPECT_EQ(m.n, 5u);
}

TEST(Estimators, VarianceEstimatorIsUnbiasedForm) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(variance_se(xs).mean, 2.5);
}

TEST(Estimators, LogMeanExpMatchesDirectSum) {
  const std::vector<double> lw{-1.0, 0.5, 2.0, -3.0};
  double s = 0.0;
  for (double v : lw) s += std::exp(v);
  const LogMean r = log_mean_exp(lw);
  EXPECT_NEAR(r.mean, s / 4.0, 1e-14);
  EXPECT_EQ(r.argmax, 2u);
}

TEST(Estimators, LogMeanExpSurvivesLargeShifts) {
  const std::vector<double> lw{700.0, 700.0};
  EXPECT_NEAR(log_mean_exp(lw).log_mean, 700.0, 1e-12);
}

TEST(Estimators, PairProductMeanEqualsOrderedPairAverage) {
  const std::vector<double> w{0.5, 1.5, 2.0, 0.25};
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j)
      if (i != j) {
        s += w[i] * w[j];
        ++n;
      }
  EXPECT_NEAR(pair_product_mean(w), s / n, 1e-15);
}

TEST(Estimators, WilsonIntervalKnownValue) {
  // 5 of 10 at z = 1.96: centre 0.5, half width 0.2634.
  const Interval iv = wilson_interval(5, 10);
  EXPECT_NEAR(iv.lo, 0.236593, 1e-5);
  EXPECT_NEAR(iv.hi, 0.763407, 1e-5);
  EXPECT_NEAR(wilson_interval(0, 100).lo, 0.0, 1e-15);
}

TEST(Estimators, WeightedFitRecoversExactLine) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, -1, -3, -5}, s{1, 2, 1, 3};
  const LinearFit f = weighted_line_fit(x, y, s);
  EXPECT_NEAR(f.slope, -2.0, 1e-13);
  EXPECT_NEAR(f.intercept, 1.0, 1e-13);
}

TEST(Parallel, MapIsIndexOrderedForAnyWorkerCount) {
  auto fn = [](std::size_t i) {
    PathRng r(stream_seed(7, tag::paths, i));
    return r.normal();
  };
  const auto a = parallel_map<double>(1000, 1, fn);
  const auto b = parallel_map<double>(1000, 3, fn);
  EXPECT_EQ(a, b);
}

TEST(CounterRng, StreamsDependOnEveryArgument) {
  EXPECT_NE(stream_seed(1, tag::paths, 0), stream_seed(2, tag::paths, 0));
  EXPECT_NE(stream_seed(1, tag::paths, 0), stream_seed(1, tag::paths_b, 0));
  EXPECT_NE(stream_seed(1, tag::paths, 0), stream_seed(1, tag::paths, 1));
}

TEST(CounterRng, NormalQuantileSymmetricAndAccurate) {
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_quantile(0.025), -1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_quantile(1e-10), -6.361340902404056, 1e-9);
}
