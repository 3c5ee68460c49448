#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kpzlab/core/error.hpp"
#include "kpzlab/polymer.hpp"

using namespace kpzlab;

namespace {

ExperimentConfig small_config(double horizon = 5.0, std::int64_t samples = 16) {
  ExperimentConfig c;
  c.horizon = horizon;
  c.samples = samples;
  return c;
}

// Green-kernel values for the module mollifier, from an independent radial
// quadrature of V(sqrt2 y) against g(y) = 1 / (2 pi |y|).
constexpr double kGreen0 = 0.257204;
constexpr double kGreen1 = 0.056270;
constexpr double kBetaK = 1.971793;

}  // namespace

TEST(Paths, SingleIncrementWhenStepEqualsHorizon) {
  std::vector<double> end;
  for (std::size_t i = 0; i < 10000; ++i) {
    PathRng r(stream_seed(1, tag::paths, i));
    const auto p = sample_path<3>(2.0, 1, zero_point<3>(), r);
    ASSERT_EQ(p.pos.size(), 2u);
    end.push_back(p.pos[1][1]);
  }
  const MeanSE v = variance_se(end);
  EXPECT_LE(std::fabs(v.mean - 2.0), 3.0 * v.se);
}

TEST(Paths, EndpointMeanAndVariance) {
  const Point<3> x{1.0, -2.0, 0.5};
  std::vector<double> e0, e2;
  for (std::size_t i = 0; i < 10000; ++i) {
    PathRng r(stream_seed(2, tag::paths, i));
    const auto p = sample_path<3>(0.05, 40, x, r);
    e0.push_back(p.pos.back()[0]);
    e2.push_back(p.pos.back()[2]);
  }
  const MeanSE m = mean_se(e0);
  EXPECT_LE(std::fabs(m.mean - 1.0), 3.0 * m.se);
  const MeanSE v = variance_se(e2);
  EXPECT_LE(std::fabs(v.mean - 2.0), 3.0 * v.se);
}

TEST(Bridges, EndpointExactAndMoments) {
  const Point<3> x{0.0, 0.0, 0.0}, y{2.0, -1.0, 0.0};
  std::vector<double> mid, var_at;
  for (std::size_t i = 0; i < 10000; ++i) {
    PathRng r(stream_seed(3, tag::paths, i));
    const auto p = sample_bridge<3>(0.05, 80, x, y, r);
    ASSERT_EQ(p.pos.back(), y);
    mid.push_back(p.pos[40][0]);
    var_at.push_back(p.pos[20][1]);
  }
  const MeanSE m = mean_se(mid);
  EXPECT_LE(std::fabs(m.mean - 1.0), 3.0 * m.se);
  // s = 1, T_b = 4: s (T_b - s) / T_b = 0.75.
  const MeanSE v = variance_se(var_at);
  EXPECT_LE(std::fabs(v.mean - 0.75), 3.0 * v.se);
}

TEST(Action, ZeroCouplingGivesZero) {
  PathRng r(4);
  const auto p = sample_path<3>(0.05, 20, zero_point<3>(), r);
  const NoiseField<3> f(1, 0.05, 0.25);
  EXPECT_EQ(field_action<3>(p, NoiseView<3>::plain(f), 0.0), 0.0);
  EXPECT_EQ(discrete_compensator<3>(p, NoiseView<3>::plain(f), 0.0), 0.0);
}

TEST(Action, DistantCellsDoNotContribute) {
  PathRng r(5);
  const auto p = sample_path<3>(0.05, 40, zero_point<3>(), r);
  NoiseField<3> f(8, 0.05, 0.25);
  const double before = field_action<3>(p, NoiseView<3>::plain(f), 0.3);
  f.set_mask(
      [&](std::int64_t k, const Index<3>& j) {
        if (k < 0 || k >= 40) return false;
        Point<3> y;
        for (int i = 0; i < 3; ++i) y[i] = f.cell_center(j[i]);
        return norm<3>(y - p.pos[static_cast<std::size_t>(k)]) < 0.5;
      },
      77);
  EXPECT_EQ(field_action<3>(p, NoiseView<3>::plain(f), 0.3), before);
}

TEST(Action, ConditionalVarianceIsTwiceCompensator) {
  PathRng r(6);
  const auto p = sample_path<3>(0.05, 40, zero_point<3>(), r);
  const double beta = 0.2;
  std::vector<double> g;
  double c = 0.0;
  for (std::size_t s = 0; s < 1000; ++s) {
    const NoiseField<3> f(stream_seed(9, tag::noise, s), 0.05, 0.25);
    g.push_back(field_action<3>(p, NoiseView<3>::plain(f), beta));
    c = discrete_compensator<3>(p, NoiseView<3>::plain(f), beta);
  }
  const MeanSE v = variance_se(g);
  EXPECT_LE(std::fabs(v.mean - 2.0 * c), 3.0 * v.se);
}

TEST(Compensator, ContinuumConstant) {
  const double target = 0.5 * 0.04 * 20.0 * default_kernel<3>().at_origin();
  EXPECT_NEAR(target, 1.5806414982612, 1e-8);
  const NoiseField<3> f(1, 0.05, 0.25);
  ExperimentConfig c = small_config(20.0, 2);
  EXPECT_NEAR(partition_function<3>(c, NoiseView<3>::plain(f)).continuum_compensator, target, 1e-12);
}

TEST(Compensator, RefinementConvergesToContinuum) {
  // The cell offset of a Brownian path is effectively uniform, so the mean ratio
  // is close to 1 at every a; the per-path spread shrinks as a decreases.
  const double beta = 0.2, horizon = 5.0;
  const double target = 0.5 * beta * beta * horizon * default_kernel<3>().at_origin();
  double prev_spread = INFINITY;
  for (double a : {0.5, 0.25, 0.125}) {
    std::vector<double> ratio;
    for (std::size_t i = 0; i < 200; ++i) {
      PathRng r(stream_seed(10, tag::paths, i));
      const auto p = sample_path<3>(0.05, 100, zero_point<3>(), r);
      const NoiseField<3> f(1, 0.05, a);
      ratio.push_back(discrete_compensator<3>(p, NoiseView<3>::plain(f), beta) / target);
    }
    const MeanSE m = mean_se(ratio);
    const double spread = std::sqrt(variance_se(ratio).mean);
    EXPECT_NEAR(m.mean, 1.0, 0.02) << "a=" << a;
    EXPECT_LT(spread, prev_spread) << "a=" << a;
    prev_spread = spread;
  }
  EXPECT_LT(prev_spread, 0.01);
}

TEST(Partition, ZeroCouplingIsExactlyOne) {
  ExperimentConfig c = small_config();
  c.beta = 0.0;
  const NoiseField<3> f(1, 0.05, 0.25);
  const PartitionEstimate e = partition_function<3>(c, NoiseView<3>::plain(f));
  EXPECT_EQ(e.value, 1.0);
  EXPECT_EQ(e.se, 0.0);
}

TEST(Partition, UnbiasedOverSeeds) {
  ExperimentConfig c = small_config(5.0, 16);
  std::vector<double> z;
  for (std::size_t s = 0; s < 100; ++s) {
    const NoiseField<3> f(stream_seed(3, tag::noise, s), c.dt, c.cell);
    ExperimentConfig cs = c;
    cs.seed = s + 1;
    z.push_back(partition_function<3>(cs, NoiseView<3>::plain(f)).value);
  }
  const MeanSE m = mean_se(z);
  EXPECT_LE(std::fabs(m.mean - 1.0), 3.0 * m.se);
}

TEST(Partition, CheckpointWeightsMatchFullHorizon) {
  ExperimentConfig c = small_config(2.0, 4);
  const NoiseField<3> f(4, c.dt, c.cell);
  const ActionKernel<3> k(NoiseView<3>::plain(f), c.dt);
  const std::vector<double> cp = checkpoint_log_weights<3>(c, k, {}, 3, {10, 40});
  EXPECT_EQ(cp.back(), log_weight<3>(c, k, {}, 3));
}

TEST(Partition, WorkerCountInvariant) {
  ExperimentConfig c = small_config(2.0, 64);
  const NoiseField<3> f(4, c.dt, c.cell);
  const auto a = partition_function<3>(c, NoiseView<3>::plain(f));
  c.workers = 3;
  const auto b = partition_function<3>(c, NoiseView<3>::plain(f));
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.se, b.se);
}

TEST(Partition, OverflowNamesSample) {
  const std::vector<double> lw{0.0, 800.0};
  try {
    (void)log_mean_exp(lw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric_overflow);
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos);
  }
}

TEST(Partition, WrongDimensionRejected) {
  ExperimentConfig c = small_config();
  c.dimension = 4;
  const NoiseField<3> f(1, 0.05, 0.25);
  try {
    (void)partition_function<3>(c, NoiseView<3>::plain(f));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_dimension);
  }
}

TEST(Overlap, BoundedByHorizonTimesPeak) {
  ExperimentConfig c = small_config(10.0, 200);
  const auto& v = default_kernel<3>();
  const OverlapEstimate o = overlap_functional<3>(c, v, zero_point<3>(), 10.0);
  EXPECT_LE(o.integral.mean, 10.0 * v.at_origin());
  EXPECT_GT(o.integral.mean, 0.0);
  c.beta = 0.0;
  const OverlapEstimate z = overlap_functional<3>(c, v, zero_point<3>(), 10.0);
  EXPECT_EQ(z.moment.mean, 1.0);
  EXPECT_EQ(z.moment.se, 0.0);
}

TEST(Overlap, DistantStartWithShortHorizonIsZero) {
  ExperimentConfig c = small_config(1.0, 200);
  const OverlapEstimate o = overlap_functional<3>(c, default_kernel<3>(), axis_point<3>(6.0), 1.0);
  EXPECT_EQ(o.integral.mean, 0.0);
}

TEST(Green, FrozenValues) {
  const auto& v = default_kernel<3>();
  EXPECT_NEAR(green_potential<3>(v, 0.0), kGreen0, 2e-6);
  EXPECT_NEAR(green_potential<3>(v, 1.0), kGreen1, 2e-6);
  EXPECT_NEAR(khasminskii_bound<3>(v).beta, kBetaK, 2e-5);
  EXPECT_GT(khasminskii_bound<3>(v).beta, 0.0);
}

TEST(Green, SupremumAtOrigin) {
  const auto& v = default_kernel<3>();
  const double g0 = green_potential<3>(v, 0.0);
  for (double r = 0.05; r < 3.0; r += 0.05) EXPECT_LT(green_potential<3>(v, r), g0);
}

TEST(Green, OccupationMonteCarloOracle) {
  // Started outside the interaction range so the left-point rule has no
  // start-up bias. E_z int_0^200 V(sqrt2 W) = G(|z|) minus the tail beyond 200,
  // where the heat kernel is flat over the support: 2^{-3/2} (2 pi)^{-3/2} 2 / sqrt(200).
  ExperimentConfig c = small_config(200.0, 4000);
  const auto& v = default_kernel<3>();
  const OverlapEstimate o = overlap_functional<3>(c, v, axis_point<3>(1.0), 200.0);
  const double tail = std::pow(2.0, -1.5) * std::pow(2.0 * pi, -1.5) * 2.0 / std::sqrt(200.0);
  const double expected = green_potential<3>(v, 1.0) - tail;
  EXPECT_LE(std::fabs(o.integral.mean - expected), 3.0 * o.integral.se);
}

TEST(Green, LowDimensionRejected) {
  try {
    (void)khasminskii_bound<2>(CovarianceKernel<2>(std::vector<double>{1.0, 0.0}, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_dimension);
  }
}
