#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "kpzlab/tiling.hpp"

using namespace kpzlab;

namespace {

BrownianPath<3> path_for(std::uint64_t seed, double dt = 0.0625, std::int64_t steps = 64) {
  PathRng r(seed);
  return sample_path<3>(dt, steps, zero_point<3>(), r);
}

// Draws a uniform point of a level-n cube and checks the bound against phi_W there.
int sandwich_failures(const PathKernelLowerBound<3>& bound, const BrownianPath<3>& path, int n, int draws,
                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = std::ldexp(1.0, -n);
  int bad = 0;
  for (int d = 0; d < draws; ++d) {
    Cube<3> c;
    c.i = static_cast<std::int64_t>(u(rng) * path.horizon() / h);
    const Point<3> w = path_position<3>(path, (static_cast<double>(c.i) + 0.5) * h);
    for (int k = 0; k < 3; ++k) c.x[k] = static_cast<std::int64_t>(std::floor((w[k] + (u(rng) - 0.5)) / h));
    const double lower = bound.value(n, c);
    if (lower < 0.0) ++bad;
    for (int s = 0; s < 8; ++s) {
      const double t = (static_cast<double>(c.i) + u(rng)) * h;
      Point<3> y;
      for (int k = 0; k < 3; ++k) y[k] = (static_cast<double>(c.x[k]) + u(rng)) * h;
      if (lower > phi_w<3>(path, t, y) + 1e-12) ++bad;
    }
  }
  return bad;
}

double total_bound(const PathKernelLowerBound<3>& bound, const BrownianPath<3>& path, int n) {
  double s = 0.0;
  detail::for_each_positive_cube<3>(bound, path, n, [&](const Cube<3>&, double v) { s += v; });
  return s;
}

}  // namespace

TEST(Tiling, ChildrenAndParent) {
  const DyadicTiling<3> t(2);
  for (const Cube<3>& c : {Cube<3>{3, {1, -2, 0}}, Cube<3>{0, {-1, -1, -1}}}) {
    const auto kids = t.children(c);
    ASSERT_EQ(kids.size(), 16u);
    for (const auto& k : kids) EXPECT_EQ(DyadicTiling<3>::parent(k), c);
    for (std::size_t a = 0; a < kids.size(); ++a)
      for (std::size_t b = a + 1; b < kids.size(); ++b) EXPECT_FALSE(kids[a] == kids[b]);
  }
}

TEST(Tiling, VolumeAndDomain) {
  const DyadicTiling<3> t(3);
  EXPECT_DOUBLE_EQ(t.volume(), std::ldexp(1.0, -12));
  EXPECT_TRUE(t.in_domain({0, {-64, 0, 63}}));
  EXPECT_FALSE(t.in_domain({64, {0, 0, 0}}));
  EXPECT_FALSE(t.in_domain({0, {64, 0, 0}}));
  EXPECT_FALSE(t.in_domain({-1, {0, 0, 0}}));
  const Cube<3> c = t.cube_of(0.3, Point<3>{-0.01, 0.125, 0.99});
  EXPECT_EQ(c.i, 2);
  EXPECT_EQ(c.x, (Index<3>{-1, 1, 7}));
}

TEST(Tiling, InvalidLevels) {
  EXPECT_THROW(DyadicTiling<3>(-1), Error);
  EXPECT_THROW(DyadicTiling<3>(31), Error);
  const auto p = path_for(1);
  const PathKernelLowerBound<3> b(p, 2, InfMode::lipschitz);
  try {
    (void)b.value(3, Cube<3>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_level);
  }
}

TEST(PathKernel, InterpolatesBetweenVertices) {
  const auto p = path_for(2);
  const Point<3> y{0.1, 0.0, -0.1};
  EXPECT_EQ(phi_w<3>(p, 0.125, y), default_mollifier<3>()(p.pos[2] - y));
  const Point<3> mid = 0.5 * (p.pos[2] + p.pos[3]);
  EXPECT_NEAR(phi_w<3>(p, 0.15625, y), default_mollifier<3>()(mid - y), 1e-12);
}

TEST(PathKernel, ExactBoundIsSandwiched) {
  for (int n = 0; n <= 3; ++n) {
    const auto p = path_for(10 + n);
    const PathKernelLowerBound<3> b(p, n);
    EXPECT_EQ(sandwich_failures(b, p, n, 200, 7), 0) << "n=" << n;
  }
}

TEST(PathKernel, LipschitzBoundIsSandwichedAndTightens) {
  const auto p = path_for(3);
  const int n = 3;
  const PathKernelLowerBound<3> exact(p, n);
  const double ceiling = total_bound(exact, p, n);
  EXPECT_GT(ceiling, 0.0);
  double prev = 0.0;
  for (int base : {3, 4, 5, 6}) {
    const PathKernelLowerBound<3> b(p, base, InfMode::lipschitz);
    EXPECT_EQ(sandwich_failures(b, p, n, 100, 8), 0) << "base=" << base;
    const double s = total_bound(b, p, n);
    EXPECT_GE(s, prev) << "base=" << base;
    EXPECT_LE(s, ceiling * (1.0 + 1e-12));
    prev = s;
  }
  EXPECT_GT(prev, 0.5 * ceiling);
}

TEST(PathKernel, ZeroAtCoarseLevelsForShortHorizons) {
  // A unit cube in time cannot fit inside a half-unit path.
  const auto p = path_for(4, 0.0625, 8);
  const PathKernelLowerBound<3> b(p, 0);
  EXPECT_EQ(total_bound(b, p, 0), 0.0);
}

TEST(TiledAction, MatchesCellByCellSum) {
  const auto p = path_for(5, 0.0625, 32);
  const NoiseField<3> f(6, 0.0625, 0.125);
  const int n = 3;
  const PathKernelLowerBound<3> b(p, n);
  const ActionTerms t = tiled_action<3>(b, p, f, n);
  // Direct sum over noise cells near the path.
  double action = 0.0, variance = 0.0;
  const double root = std::sqrt(f.cell_volume());
  for (std::int64_t k = 0; k < 32; ++k) {
    Index<3> lo, hi;
    for (int d = 0; d < 3; ++d) {
      lo[d] = static_cast<std::int64_t>(std::floor((p.pos[static_cast<std::size_t>(k)][d] - 1.0) / 0.125));
      hi[d] = lo[d] + 16;
    }
    for_each_index<3>(lo, hi, [&](const Index<3>& j) {
      Cube<3> c;
      c.i = k / 2;
      for (int d = 0; d < 3; ++d) c.x[d] = j[d];
      const double v = b.value(n, c);
      action += root * v * f.standard(k, j);
      variance += f.cell_volume() * v * v;
    });
  }
  EXPECT_NEAR(t.action, action, 1e-10);
  EXPECT_NEAR(t.variance, variance, 1e-12);
  EXPECT_GT(t.variance, 0.0);
}

TEST(DiscretePartition, ZeroCouplingAndAlignment) {
  ExperimentConfig c;
  c.beta = 0.0;
  c.horizon = 4.0;
  c.dt = 0.0625;
  c.cell = 0.125;
  c.samples = 8;
  const NoiseField<3> f(1, 0.0625, 0.125);
  const auto e = discrete_partition<3>(c, f, 2);
  EXPECT_EQ(e.value, 1.0);
  EXPECT_EQ(e.se, 0.0);
  const NoiseField<3> coarse(1, 0.0625, 0.25);
  EXPECT_THROW((void)discrete_partition<3>(c, coarse, 3), Error);
}

TEST(DiscretePartition, UnbiasedAtLevelTwo) {
  ExperimentConfig c;
  c.beta = 0.5;
  c.horizon = 4.0;
  c.dt = 0.0625;
  c.cell = 0.125;
  c.samples = 8;
  std::vector<double> z;
  for (std::uint64_t s = 0; s < 150; ++s) {
    const NoiseField<3> f(stream_seed(2, tag::noise, s), c.dt, c.cell);
    ExperimentConfig cs = c;
    cs.seed = s + 100;
    z.push_back(discrete_partition<3>(cs, f, 2).value);
  }
  const MeanSE m = mean_se(z);
  EXPECT_LE(std::fabs(m.mean - 1.0), 3.0 * m.se);
  EXPECT_GT(m.se, 0.0);
}

TEST(L2Gap, ZeroCouplingAndOrdering) {
  ExperimentConfig c;
  c.horizon = 4.0;
  c.dt = 0.0625;
  c.cell = 0.125;
  c.beta = 0.0;
  const GapEstimate z = l2_gap<3>(c, 2, 20);
  EXPECT_EQ(z.gap.mean, 0.0);
  c.beta = 0.5;
  const GapEstimate g = l2_gap<3>(c, 2, 300);
  EXPECT_LE(g.tiled.mean, g.cross.mean);
  EXPECT_LE(g.cross.mean, g.full.mean);
  EXPECT_GE(g.gap.mean, -3.0 * g.gap.se);
}
