#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kpzlab/lattice_she.hpp"

using namespace kpzlab;

namespace {

SheParams params(double spacing, double box, double beta = 0.0) {
  SheParams p;
  p.spacing = spacing;
  p.box = box;
  p.dt = spacing * spacing / 8.0;
  p.beta = beta;
  return p;
}

template <class Fn>
void expect_error(ErrorKind kind, Fn&& fn) {
  try {
    fn();
    ADD_FAILURE() << "no error thrown";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

}  // namespace

TEST(Stencil, NormalizedMass) {
  const SHEGrid<3> g(params(0.125, 2.5));
  double s = 0.0;
  for (const auto& [m, w] : g.stencil()) s += w;
  EXPECT_NEAR(s * std::pow(0.125, 3), 1.0, 1e-12);
  EXPECT_GT(g.raw_stencil_mass(), 0.9);
  EXPECT_LT(g.raw_stencil_mass(), 1.1);
}

TEST(Lattice, FlatWithoutNoiseStaysFlat) {
  SHEGrid<3> g(params(0.25, 2.5));
  const auto f = lattice_noise<3>(g, 1);
  const SheSnapshot s = run_to<3>(g, 0.25, InitialCondition<3>::flat(), f);
  for (double u : s.u) EXPECT_EQ(u, 1.0);
  for (double h : s.h) EXPECT_EQ(h, 0.0);
}

TEST(Lattice, DropletMassIsConserved) {
  SHEGrid<3> g(params(0.125, 4.0));
  const auto f = lattice_noise<3>(g, 1);
  g.set_initial(InitialCondition<3>::droplet(Point<3>{2.0625, 2.0625, 2.0625}));
  EXPECT_NEAR(g.mass(), 1.0, 1e-12);
  (void)run_to<3>(g, 0.25, InitialCondition<3>::droplet(Point<3>{2.0625, 2.0625, 2.0625}), f, false);
  EXPECT_NEAR(g.mass(), 1.0, 1e-10);
}

TEST(Lattice, DropletMatchesHeatKernel) {
  SheParams p = params(0.125, 6.0);
  p.dt = 0.001953125;
  SHEGrid<3> g(p);
  const auto f = lattice_noise<3>(g, 1);
  const Point<3> x0{3.0625, 3.0625, 3.0625};
  (void)run_to<3>(g, 1.0, InitialCondition<3>::droplet(x0), f, false);
  EXPECT_LT(std::fabs(g.at(x0) / heat_kernel<3>(1.0, zero_point<3>()) - 1.0), 1e-2);
  const Point<3> x1 = x0 + Point<3>{0.5, 0.0, 0.0};
  EXPECT_LT(std::fabs(g.at(x1) / heat_kernel<3>(1.0, x1 - x0) - 1.0), 1e-2);
}

TEST(Lattice, BumpMatchesHeatSolve) {
  SheParams p = params(0.125, 6.0);
  p.dt = 0.001953125;
  SHEGrid<3> g(p);
  const auto f = lattice_noise<3>(g, 1);
  const Point<3> c{3.0625, 3.0625, 3.0625};
  auto u0 = [c](const Point<3>& y) { return 1.0 + std::exp(-norm2<3>(y - c) / 0.5); };
  const SheSnapshot s =
      run_to<3>(g, 0.25, InitialCondition<3>::general([u0](const Point<3>& y) { return std::log(u0(y)); }), f);
  HeatState<3> st;
  st.initial = u0;
  for (double dx : {0.0, 0.25, 0.5}) {
    const Point<3> x = c + Point<3>{dx, 0.0, 0.0};
    EXPECT_NEAR(g.at(x), heat_solve<3>(st, 0.25, x), 1e-3) << "dx=" << dx;
  }
  EXPECT_TRUE(s.wrap_ok);
}

TEST(Lattice, MollifiedSlabCovariance) {
  // Same-site variance equals vol/dt * sum w^2, close to V(0)/dt; sites more
  // than one unit apart share no cells.
  const SheParams p = params(0.125, 2.5, 0.2);
  const SHEGrid<3> g(p);
  const auto f = lattice_noise<3>(g, 3);
  double w2 = 0.0;
  for (const auto& [m, w] : g.stencil()) w2 += w * w;
  const double vol = std::pow(p.spacing, 3);
  const double expected = vol * w2 / p.dt;
  const std::size_t a = g.flat_index({0, 0, 0}), b = g.flat_index({10, 0, 0});
  std::vector<double> same, cross;
  for (std::int64_t k = 0; k < 1500; ++k) {
    const auto s = g.mollified_slab(f, k);
    same.push_back(s[a] * s[a] * p.dt);
    cross.push_back(s[a] * s[b] * p.dt);
  }
  const MeanSE ms = mean_se(same), mc = mean_se(cross);
  EXPECT_LE(std::fabs(ms.mean - expected * p.dt), 3.0 * ms.se);
  EXPECT_NEAR(expected * p.dt / default_kernel<3>().at_origin(), 1.0, 0.15);
  EXPECT_LE(std::fabs(mc.mean), 3.0 * mc.se);
}

TEST(Lattice, Deterministic) {
  const SheParams p = params(0.25, 2.5, 0.5);
  SHEGrid<3> g1(p), g2(p);
  const auto f = lattice_noise<3>(g1, 9);
  const auto s1 = run_to<3>(g1, 0.5, InitialCondition<3>::flat(), f);
  const auto s2 = run_to<3>(g2, 0.5, InitialCondition<3>::flat(), f);
  EXPECT_EQ(s1.u, s2.u);
}

TEST(Lattice, UnitMeanOverSeeds) {
  const SheParams p = params(0.25, 2.5, 0.5);
  std::vector<double> means;
  for (std::uint64_t s = 0; s < 200; ++s) {
    SHEGrid<3> g(p);
    const auto f = lattice_noise<3>(g, stream_seed(5, tag::noise, s));
    const auto snap = run_to<3>(g, 0.5, InitialCondition<3>::flat(), f, false);
    double m = 0.0;
    for (double u : snap.u) m += u;
    means.push_back(m / static_cast<double>(snap.u.size()));
  }
  const MeanSE m = mean_se(means);
  EXPECT_LE(std::fabs(m.mean - 1.0), 3.0 * m.se);
}

TEST(Lattice, HopfCole) {
  SHEGrid<3> g(params(0.25, 2.5));
  g.set_initial(InitialCondition<3>::general([](const Point<3>& y) { return y[0]; }));
  const auto h = hopf_cole(g);
  EXPECT_NEAR(h[g.flat_index({2, 0, 0})], 0.625, 1e-12);
  g.values()[3] = 0.0;
  expect_error(ErrorKind::positivity_loss, [&] { (void)hopf_cole(g); });
}

TEST(Lattice, PositivityLossReported) {
  SHEGrid<3> g(params(0.25, 2.5, 1e4));
  const auto f = lattice_noise<3>(g, 2);
  try {
    (void)run_to<3>(g, 0.5, InitialCondition<3>::flat(), f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::positivity_loss);
    EXPECT_NE(std::string(e.what()).find("after step"), std::string::npos);
  }
}

TEST(Lattice, InvalidParameters) {
  SheParams p = params(0.125, 2.5);
  p.dt = p.spacing * p.spacing;
  expect_error(ErrorKind::invalid_configuration, [&] { SHEGrid<3> g(p); });
  expect_error(ErrorKind::invalid_configuration, [&] { SHEGrid<3> g(params(0.125, 1.0)); });
  expect_error(ErrorKind::invalid_configuration, [&] { SHEGrid<3> g(params(0.125, 2.3)); });
  SHEGrid<3> g(params(0.25, 2.5));
  const NoiseField<3> wrong(1, 0.01, 0.25, 10);
  expect_error(ErrorKind::invalid_configuration, [&] { (void)g.mollified_slab(wrong, 0); });
}
