#pragma once

// Dyadic space-time tiling and the inf-over-cube path kernel.
//
// A level-n cube is [i h, (i+1) h) x prod [x_k h, (x_k+1) h) with h = 2^-n,
// inside the domain [0, 2^n] x [-2^n, 2^n]^D. Paths are piecewise linear
// between grid vertices.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kpzlab/core/counter_rng.hpp"
#include "kpzlab/core/error.hpp"
#include "kpzlab/core/estimators.hpp"
#include "kpzlab/core/parallel.hpp"
#include "kpzlab/core/point.hpp"
#include "kpzlab/mollifier.hpp"
#include "kpzlab/noise.hpp"
#include "kpzlab/polymer.hpp"

namespace kpzlab {

template <int D>
struct Cube {
  std::int64_t i = 0;
  Index<D> x{};

  friend bool operator==(const Cube&, const Cube&) = default;
};

template <int D>
class DyadicTiling {
 public:
  explicit DyadicTiling(int level) : level_(level) {
    require(level >= 0 && level <= 30, ErrorKind::invalid_level, "tiling level must lie in [0, 30]");
    side_ = std::ldexp(1.0, -level);
    extent_ = std::ldexp(1.0, level);
  }

  [[nodiscard]] int level() const { return level_; }
  [[nodiscard]] double side() const { return side_; }
  [[nodiscard]] double extent() const { return extent_; }
  [[nodiscard]] double volume() const { return std::pow(side_, D + 1); }

  [[nodiscard]] Cube<D> cube_of(double s, const Point<D>& y) const {
    Cube<D> c;
    c.i = static_cast<std::int64_t>(std::floor(s / side_));
    for (int k = 0; k < D; ++k) c.x[k] = static_cast<std::int64_t>(std::floor(y[k] / side_));
    return c;
  }

  /// True when the cube lies inside [0, 2^n] x [-2^n, 2^n]^D.
  [[nodiscard]] bool in_domain(const Cube<D>& c) const {
    const auto cells = static_cast<std::int64_t>(std::llround(extent_ / side_));
    if (c.i < 0 || c.i >= cells) return false;
    for (int k = 0; k < D; ++k)
      if (c.x[k] < -cells || c.x[k] >= cells) return false;
    return true;
  }

  [[nodiscard]] std::vector<Cube<D>> children(const Cube<D>& c) const {
    std::vector<Cube<D>> out;
    out.reserve(std::size_t{1} << (D + 1));
    for (unsigned bits = 0; bits < (1U << (D + 1)); ++bits) {
      Cube<D> ch;
      ch.i = 2 * c.i + (bits & 1U);
      for (int k = 0; k < D; ++k) ch.x[k] = 2 * c.x[k] + ((bits >> (k + 1)) & 1U);
      out.push_back(ch);
    }
    return out;
  }

  static Cube<D> parent(const Cube<D>& c) {
    auto half = [](std::int64_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); };
    Cube<D> p;
    p.i = half(c.i);
    for (int k = 0; k < D; ++k) p.x[k] = half(c.x[k]);
    return p;
  }

 private:
  int level_;
  double side_;
  double extent_;
};

/// phi_W(s, y) = phi(W_s - y) with W linearly interpolated between vertices.
template <int D>
Point<D> path_position(const BrownianPath<D>& path, double s) {
  const double u = s / path.dt;
  const auto last = static_cast<double>(path.steps());
  if (u <= 0.0) return path.pos.front();
  if (u >= last) return path.pos.back();
  const auto i = static_cast<std::size_t>(u);
  const double f = u - static_cast<double>(i);
  if (f == 0.0) return path.pos[i];
  return path.pos[i] + f * (path.pos[i + 1] - path.pos[i]);
}

template <int D>
double phi_w(const BrownianPath<D>& path, double s, const Point<D>& y,
             const Mollifier<D>& phi = default_mollifier<D>()) {
  return phi(path_position<D>(path, s) - y);
}

enum class InfMode {
  /// inf of phi over the cube for the piecewise-linear path, exactly.
  exact,
  /// sampled value at base-level cube centres minus a Lipschitz margin,
  /// aggregated by a min-tree.
  lipschitz,
};

/// Lower bound phi_W^(n) of phi_W on each level-n cube.
template <int D>
class PathKernelLowerBound {
 public:
  PathKernelLowerBound(const BrownianPath<D>& path, int n_base, InfMode mode = InfMode::exact,
                       const Mollifier<D>& phi = default_mollifier<D>())
      : path_(&path), n_base_(n_base), mode_(mode), phi_(&phi) {
    require(n_base >= 0, ErrorKind::invalid_level, "base level must be nonnegative");
  }

  [[nodiscard]] int base_level() const { return n_base_; }
  [[nodiscard]] InfMode mode() const { return mode_; }

  /// phi_W^(n) on `cube`; zero outside the level-n domain and beyond the path horizon.
  [[nodiscard]] double value(int n, const Cube<D>& cube) const {
    require(n >= 0, ErrorKind::invalid_level, "negative level");
    require(mode_ == InfMode::exact || n <= n_base_, ErrorKind::invalid_level,
            "level " + std::to_string(n) + " exceeds base level " + std::to_string(n_base_));
    const DyadicTiling<D> tiling(n);
    if (!tiling.in_domain(cube)) return 0.0;
    const double h = tiling.side();
    const double t0 = static_cast<double>(cube.i) * h;
    if (t0 + h > path_->horizon() * (1.0 + 1e-12)) return 0.0;
    if (mode_ == InfMode::exact) return exact_inf(cube, h);
    // Min over the base-level descendants.
    const int depth = n_base_ - n;
    const std::int64_t per = std::int64_t{1} << depth;
    Index<D> lo, hi;
    for (int k = 0; k < D; ++k) {
      lo[k] = cube.x[k] * per;
      hi[k] = lo[k] + per - 1;
    }
    const double hb = std::ldexp(1.0, -n_base_);
    double best = std::numeric_limits<double>::infinity();
    for (std::int64_t ii = cube.i * per; ii < (cube.i + 1) * per && best > 0.0; ++ii) {
      for_each_index<D>(lo, hi, [&](const Index<D>& xb) {
        if (best > 0.0) best = std::min(best, base_bound(ii, xb, hb));
      });
    }
    return best;
  }

  /// Largest distance from a path point in the window to a point of the cube,
  /// squared. phi is radially decreasing, so inf_cube phi_W = phi(sqrt of this).
  [[nodiscard]] double farthest_distance2(const Cube<D>& cube, double h) const {
    const double t0 = static_cast<double>(cube.i) * h;
    const double t1 = t0 + h;
    double worst = 0.0;
    auto visit = [&](const Point<D>& p) {
      double d2 = 0.0;
      for (int k = 0; k < D; ++k) {
        const double lo = static_cast<double>(cube.x[k]) * h;
        const double hi = lo + h;
        const double a = p[k] - lo, b = p[k] - hi;
        d2 += std::max(a * a, b * b);
      }
      worst = std::max(worst, d2);
    };
    // Vertices inside the window plus the interpolated window endpoints.
    visit(path_position<D>(*path_, t0));
    visit(path_position<D>(*path_, t1));
    const auto first = static_cast<std::size_t>(std::ceil(t0 / path_->dt));
    for (std::size_t v = first; v < path_->pos.size() && static_cast<double>(v) * path_->dt <= t1; ++v)
      visit(path_->pos[v]);
    return worst;
  }

 private:
  [[nodiscard]] double exact_inf(const Cube<D>& cube, double h) const {
    return phi_->from_norm2(farthest_distance2(cube, h));
  }

  /// phi_W at the base cube centre minus L_phi times the largest possible
  /// displacement of W_s - y inside the cube.
  [[nodiscard]] double base_bound(std::int64_t i, const Index<D>& x, double hb) const {
    const double t0 = static_cast<double>(i) * hb;
    const double t1 = t0 + hb;
    if (t1 > path_->horizon() * (1.0 + 1e-12)) return 0.0;
    const double tc = t0 + 0.5 * hb;
    Point<D> yc;
    for (int k = 0; k < D; ++k) yc[k] = (static_cast<double>(x[k]) + 0.5) * hb;
    const Point<D> wc = path_position<D>(*path_, tc);
    double osc = std::max(norm<D>(path_position<D>(*path_, t0) - wc), norm<D>(path_position<D>(*path_, t1) - wc));
    const auto first = static_cast<std::size_t>(std::ceil(t0 / path_->dt));
    for (std::size_t v = first; v < path_->pos.size() && static_cast<double>(v) * path_->dt <= t1; ++v)
      osc = std::max(osc, norm<D>(path_->pos[v] - wc));
    const double margin = phi_->lipschitz() * (osc + 0.5 * std::sqrt(static_cast<double>(D)) * hb);
    return std::max(0.0, (*phi_)(wc - yc) - margin);
  }

  const BrownianPath<D>* path_;
  int n_base_;
  InfMode mode_;
  const Mollifier<D>* phi_;
};

/// phi_W^(n) at a cube, as a free function.
template <int D>
double phi_w_n(const PathKernelLowerBound<D>& bound, int n, const Cube<D>& cube) {
  return bound.value(n, cube);
}

namespace detail {

/// Checks that noise cells nest inside level-n cubes.
template <int D>
void check_tiling_alignment(const NoiseField<D>& field, int n) {
  const double h = std::ldexp(1.0, -n);
  require(detail::is_multiple(h, field.slab()) && detail::is_multiple(h, field.cell()) &&
              detail::is_short_dyadic(field.slab()) && detail::is_short_dyadic(field.cell()),
          ErrorKind::invalid_configuration,
          "noise cells do not nest inside level-" + std::to_string(n) + " cubes");
}

/// Calls fn(cube, value) for every level-n cube with positive phi_W^(n)
/// over the path horizon.
template <int D, class Fn>
void for_each_positive_cube(const PathKernelLowerBound<D>& bound, const BrownianPath<D>& path, int n, Fn&& fn) {
  const double h = std::ldexp(1.0, -n);
  const auto slices = static_cast<std::int64_t>(std::floor(path.horizon() / h + 1e-9));
  for (std::int64_t i = 0; i < slices; ++i) {
    const Point<D> p = path_position<D>(path, static_cast<double>(i) * h);
    Index<D> lo, hi;
    for (int k = 0; k < D; ++k) {
      lo[k] = static_cast<std::int64_t>(std::floor((p[k] - 0.5) / h));
      hi[k] = static_cast<std::int64_t>(std::floor((p[k] + 0.5) / h));
    }
    for_each_index<D>(lo, hi, [&](const Index<D>& x) {
      const Cube<D> c{i, x};
      const double v = bound.value(n, c);
      if (v > 0.0) fn(c, v);
    });
  }
}

}  // namespace detail

/// Integral of the noise over a cube: the sum of vol * xi over the cells it contains.
template <int D>
double cube_noise(const NoiseField<D>& field, int n, const Cube<D>& c) {
  const double h = std::ldexp(1.0, -n);
  const auto kt = std::llround(h / field.slab());
  const auto kx = std::llround(h / field.cell());
  Index<D> lo, hi;
  for (int k = 0; k < D; ++k) {
    lo[k] = c.x[k] * kx;
    hi[k] = lo[k] + kx - 1;
  }
  double s = 0.0;
  for (std::int64_t k = c.i * kt; k < (c.i + 1) * kt; ++k)
    for_each_index<D>(lo, hi, [&](const Index<D>& j) { s += field.standard(k, j); });
  return std::sqrt(field.cell_volume()) * s;
}

/// G_n / beta and ||phi_W^(n)||^2 for one path, summing cube by cube.
template <int D>
ActionTerms tiled_action(const PathKernelLowerBound<D>& bound, const BrownianPath<D>& path, const NoiseField<D>& field,
                         int n, bool with_noise = true) {
  ActionTerms t;
  const double vol = std::ldexp(1.0, -(D + 1) * n);
  detail::for_each_positive_cube<D>(bound, path, n, [&](const Cube<D>& c, double v) {
    t.variance += vol * v * v;
    if (with_noise) t.action += v * cube_noise<D>(field, n, c);
  });
  return t;
}

/// Z_T^(n) = mean of exp(beta G_n - beta^2/2 ||phi_W^(n)||^2) over cfg.samples paths.
template <int D>
PartitionEstimate discrete_partition(const ExperimentConfig& cfg, const NoiseField<D>& field, int n,
                                     InfMode mode = InfMode::exact, int n_base = -1) {
  check_dimension<D>(cfg);
  detail::check_tiling_alignment<D>(field, n);
  require(std::fabs(field.slab() - cfg.dt) < 1e-15 || detail::is_multiple(cfg.dt, field.slab()),
          ErrorKind::invalid_configuration, "path step is not on the noise grid");
  require(cfg.samples >= 2, ErrorKind::invalid_argument, "need M >= 2");
  PartitionEstimate est;
  est.samples = cfg.samples;
  est.config = cfg;
  const auto m = static_cast<std::size_t>(cfg.samples);
  if (cfg.beta == 0.0) return est;
  std::vector<double> lw = parallel_map<double>(m, cfg.workers, [&](std::size_t i) {
    PathRng rng(stream_seed(cfg.seed, tag::paths, i));
    const BrownianPath<D> path = sample_path<D>(cfg, zero_point<D>(), rng);
    const PathKernelLowerBound<D> bound(path, n_base < 0 ? n : n_base, mode);
    const ActionTerms t = tiled_action<D>(bound, path, field, n);
    return cfg.beta * t.action - 0.5 * cfg.beta * cfg.beta * t.variance;
  });
  const LogMean lm = log_mean_exp(lw);
  est.value = lm.mean;
  est.se = lm.se;
  return est;
}

struct GapEstimate {
  int level = 0;
  MeanSE gap;
  MeanSE full;
  MeanSE cross;
  MeanSE tiled;
  std::int64_t pairs = 0;
};

/// E[(Z_T - Z_T^(n))^2] = E[e^{b2 <phi1, phi2>}] - 2 E[e^{b2 <phi1^(n), phi2>}] + E[e^{b2 <phi1^(n), phi2^(n)>}]
/// with b2 = beta^2 and inner products on the noise-cell grid (cfg.dt, cfg.cell),
/// paths at slab left endpoints as in the discrete polymer.
template <int D>
GapEstimate l2_gap(const ExperimentConfig& cfg, int n, std::int64_t pairs,
                   const Mollifier<D>& phi = default_mollifier<D>()) {
  check_dimension<D>(cfg);
  require(pairs >= 2, ErrorKind::invalid_argument, "need at least two path pairs");
  const NoiseField<D> geometry(0, cfg.dt, cfg.cell);
  detail::check_tiling_alignment<D>(geometry, n);
  const auto m = static_cast<std::size_t>(pairs);
  const double b2 = cfg.beta * cfg.beta;
  const double vol = geometry.cell_volume();
  const double h = std::ldexp(1.0, -n);
  const auto per_cube_t = std::llround(h / cfg.dt);
  const auto per_cube_x = std::llround(h / cfg.cell);
  std::vector<double> full(m), cross(m), tiled(m), gap(m);
  parallel_for(m, cfg.workers, [&](std::size_t p) {
    PathRng r1(stream_seed(cfg.seed, tag::paths, p));
    PathRng r2(stream_seed(cfg.seed, tag::paths_b, p));
    const BrownianPath<D> w1 = sample_path<D>(cfg, zero_point<D>(), r1);
    const BrownianPath<D> w2 = sample_path<D>(cfg, zero_point<D>(), r2);
    const PathKernelLowerBound<D> b1(w1, n), bb2(w2, n);
    double a = 0.0, b = 0.0, c = 0.0;
    for (std::size_t k = 0; k < w1.steps(); ++k) {
      const Point<D>& p1 = w1.pos[k];
      const Point<D>& p2 = w2.pos[k];
      Index<D> lo, hi;
      for (int d = 0; d < D; ++d) detail::index_range(p1[d] - 0.5, p1[d] + 0.5, cfg.cell, lo[d], hi[d]);
      const auto ki = static_cast<std::int64_t>(k);
      for_each_index<D>(lo, hi, [&](const Index<D>& j) {
        Point<D> y;
        for (int d = 0; d < D; ++d) y[d] = geometry.cell_center(j[d]);
        const double f1 = phi(p1 - y);
        if (f1 == 0.0) return;
        const double f2 = phi(p2 - y);
        Cube<D> cube;
        cube.i = ki >= 0 ? ki / per_cube_t : -((-ki + per_cube_t - 1) / per_cube_t);
        for (int d = 0; d < D; ++d) {
          const auto q = j[d];
          cube.x[d] = q >= 0 ? q / per_cube_x : -((-q + per_cube_x - 1) / per_cube_x);
        }
        const double g1 = b1.value(n, cube);
        a += vol * f1 * f2;
        if (g1 == 0.0) return;
        b += vol * g1 * f2;
        if (f2 == 0.0) return;
        c += vol * g1 * bb2.value(n, cube);
      });
    }
    full[p] = std::exp(b2 * a);
    cross[p] = std::exp(b2 * b);
    tiled[p] = std::exp(b2 * c);
    gap[p] = std::expm1(b2 * a) - 2.0 * std::expm1(b2 * b) + std::expm1(b2 * c);
  });
  GapEstimate g;
  g.level = n;
  g.gap = mean_se(gap);
  g.full = mean_se(full);
  g.cross = mean_se(cross);
  g.tiled = mean_se(tiled);
  g.pairs = pairs;
  return g;
}

}  // namespace kpzlab
