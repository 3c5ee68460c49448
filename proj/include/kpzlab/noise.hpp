#pragma once

// Discrete space-time white noise on a cell grid, generated on demand from a
// counter-based hash, plus the diffusive rescaling transforms. Transforms act
// on test functions: <T xi, f> is evaluated as a pairing of the base field
// with a remapped f, so no noise is ever stored or interpolated.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kpzlab/core/counter_rng.hpp"
#include "kpzlab/core/error.hpp"
#include "kpzlab/core/estimators.hpp"
#include "kpzlab/core/parallel.hpp"
#include "kpzlab/core/point.hpp"
#include "kpzlab/mollifier.hpp"

namespace kpzlab {

/// Time slab k covers [k*slab, (k+1)*slab); spatial cell j covers prod [j_i a, (j_i+1) a).
/// Cell values are independent N(0, 1/(slab * a^D)), a pure function of (seed, k, j).
template <int D>
class NoiseField {
 public:
  using Mask = std::function<bool(std::int64_t, const Index<D>&)>;

  NoiseField(std::uint64_t seed, double slab, double cell, std::int64_t period = 0)
      : seed_(seed),
        key_(mix64(seed ^ 0xA0761D6478BD642FULL)),
        key_tail_(mix64(key_ ^ 0x5851F42D4C957F2DULL)),
        slab_(slab),
        cell_(cell),
        period_(period) {
    require(slab > 0.0 && cell > 0.0, ErrorKind::invalid_configuration, "noise slab and cell must be positive");
    require(period >= 0, ErrorKind::invalid_configuration, "negative spatial period");
    volume_ = slab * std::pow(cell, D);
    inv_sqrt_volume_ = 1.0 / std::sqrt(volume_);
  }

  /// Unit-variance value of cell (k, j).
  [[nodiscard]] double standard(std::int64_t k, const Index<D>& j) const {
    if (mask_ && !mask_(k, j)) return raw(masked_key_, k, j);
    return raw(key_, k, j);
  }

  [[nodiscard]] double sample_cell(std::int64_t k, const Index<D>& j) const { return standard(k, j) * inv_sqrt_volume_; }

  /// Cells for which `keep` is false are redrawn from an independent stream.
  void set_mask(Mask keep, std::uint64_t alternate_seed) {
    mask_ = std::move(keep);
    masked_key_ = mix64(alternate_seed ^ 0xE7037ED1A0B428DBULL);
  }

  /// Spatial periodicity applies only to slabs k >= first; earlier slabs are
  /// whole-space noise. Lets a periodic lattice run on [0, t] share cells with
  /// polymer views that also reach back before time 0.
  void set_periodic_from(std::int64_t first) { periodic_from_ = first; }

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] double slab() const { return slab_; }
  [[nodiscard]] double cell() const { return cell_; }
  [[nodiscard]] double cell_volume() const { return volume_; }
  [[nodiscard]] std::int64_t period() const { return period_; }
  [[nodiscard]] double slab_center(std::int64_t k) const { return (static_cast<double>(k) + 0.5) * slab_; }
  [[nodiscard]] double cell_center(std::int64_t j) const { return (static_cast<double>(j) + 0.5) * cell_; }

 private:
  // Weyl-style combination of the indices followed by two splitmix rounds;
  // each axis walk is a SplitMix sequence, and the second round decorrelates
  // keys.
  [[nodiscard]] double raw(std::uint64_t key, std::int64_t k, const Index<D>& j) const {
    static constexpr std::uint64_t mult[4] = {0xD1B54A32D192ED03ULL, 0xABC98388FB8FAC03ULL, 0x8CB92BA72F3D8DD7ULL,
                                              0xF1357AEA2E62A9C5ULL};
    std::uint64_t u = key + static_cast<std::uint64_t>(k) * 0x9E3779B97F4A7C15ULL;
    for (int i = 0; i < D; ++i) {
      std::int64_t ji = j[i];
      if (period_ > 0 && k >= periodic_from_) {
        ji %= period_;
        if (ji < 0) ji += period_;
      }
      u += static_cast<std::uint64_t>(ji) * (mult[i % 4] + 2ULL * static_cast<std::uint64_t>(i / 4));
    }
    return bits_to_normal(mix64(mix64(u) ^ key_tail_));
  }

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t key_tail_;
  std::uint64_t masked_key_ = 0;
  double slab_;
  double cell_;
  std::int64_t period_;
  std::int64_t periodic_from_ = std::numeric_limits<std::int64_t>::min();
  double volume_ = 1.0;
  double inv_sqrt_volume_ = 1.0;
  Mask mask_;
};

enum class TransformMode {
  identity,
  /// xi^(eps,t,x): base (sigma, y) = (t - eps^2 s, x + eps z)
  diffusive_reversal,
  /// xi_(eps,x0): base (sigma, y) = (eps^2 s, x0 + eps z)
  anchored_scaling,
};

/// Affine space-time change of variables between a view's local coordinates
/// (s, z) and base-noise coordinates (sigma, y).
template <int D>
struct NoiseTransform {
  TransformMode mode = TransformMode::identity;
  double eps = 1.0;
  double time_anchor = 0.0;
  Point<D> space_anchor = zero_point<D>();

  static NoiseTransform identity() { return {}; }
  static NoiseTransform reversal(double eps, double t, const Point<D>& x) {
    return {TransformMode::diffusive_reversal, eps, t, x};
  }
  static NoiseTransform anchored(double eps, const Point<D>& x0) {
    return {TransformMode::anchored_scaling, eps, 0.0, x0};
  }

  [[nodiscard]] double scale() const { return mode == TransformMode::identity ? 1.0 : eps; }
  /// Multiplier on base noise values: eps^{(D+2)/2}.
  [[nodiscard]] double noise_amplitude() const { return std::pow(scale(), 0.5 * (D + 2)); }
  /// Multiplier on remapped test functions: eps^{-(D+2)/2}.
  [[nodiscard]] double test_amplitude() const { return std::pow(scale(), -0.5 * (D + 2)); }
  [[nodiscard]] int time_direction() const { return mode == TransformMode::diffusive_reversal ? -1 : 1; }

  [[nodiscard]] double base_time(double s) const {
    const double e2 = scale() * scale();
    return mode == TransformMode::diffusive_reversal ? time_anchor - e2 * s : time_anchor + e2 * s;
  }
  [[nodiscard]] double local_time(double sigma) const {
    const double e2 = scale() * scale();
    return mode == TransformMode::diffusive_reversal ? (time_anchor - sigma) / e2 : (sigma - time_anchor) / e2;
  }
  [[nodiscard]] Point<D> base_space(const Point<D>& z) const { return space_anchor + scale() * z; }
  [[nodiscard]] Point<D> local_space(const Point<D>& y) const { return (1.0 / scale()) * (y - space_anchor); }
};

namespace detail {

inline bool is_power_of_two(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) return false;
  int e = 0;
  return std::frexp(x, &e) == 0.5;
}

/// True when x = m / 2^p with p <= 40 and |m| < 2^24.
inline bool is_short_dyadic(double x) {
  if (!std::isfinite(x)) return false;
  double scaled = x;
  for (int p = 0; p <= 40; ++p, scaled *= 2.0) {
    if (std::fabs(scaled) >= 16777216.0) return false;
    if (scaled == std::floor(scaled)) return true;
  }
  return false;
}

inline bool is_multiple(double x, double unit) {
  const double q = x / unit;
  return std::fabs(q - std::round(q)) <= 1e-9 * std::max(1.0, std::fabs(q));
}

}  // namespace detail

/// Enforces the nesting contract between a transform and the base grid.
template <int D>
void check_alignment(const NoiseField<D>& field, const NoiseTransform<D>& tr) {
  if (tr.mode == TransformMode::identity) return;
  require(detail::is_power_of_two(tr.eps), ErrorKind::invalid_configuration,
          "scale eps=" + std::to_string(tr.eps) + " is not a power of two");
  require(tr.eps == 1.0 || (detail::is_short_dyadic(field.slab()) && detail::is_short_dyadic(field.cell())),
          ErrorKind::invalid_configuration, "rescaled pairings need dyadic slab and cell sizes");
  require(detail::is_multiple(tr.time_anchor, field.slab()), ErrorKind::invalid_configuration,
          "time anchor is not a multiple of the slab length");
  for (int i = 0; i < D; ++i)
    require(detail::is_multiple(tr.space_anchor[i], 0.5 * field.cell()), ErrorKind::invalid_configuration,
            "space anchor is not a multiple of half a cell");
}

/// A base field seen through a transform. Pairings with a view are pairings
/// of the base field with the remapped test function.
template <int D>
struct NoiseView {
  const NoiseField<D>* field = nullptr;
  NoiseTransform<D> transform{};

  static NoiseView plain(const NoiseField<D>& f) { return {&f, NoiseTransform<D>::identity()}; }
};

/// Test function with a bounded support box, in the local coordinates of
/// whatever it is paired with.
template <int D>
struct TestFunction {
  std::function<double(double, const Point<D>&)> value;
  double t0 = 0.0;
  double t1 = 0.0;
  Point<D> lo = zero_point<D>();
  Point<D> hi = zero_point<D>();
};

struct PairResult {
  double value = 0.0;
  /// Sum of cell_volume * f^2: the exact variance of `value` over seeds.
  double variance = 0.0;
  std::size_t cells = 0;
};

namespace detail {

inline void index_range(double a, double b, double unit, std::int64_t& lo, std::int64_t& hi) {
  // Cells whose centers (j + 1/2) * unit lie in [a, b].
  lo = static_cast<std::int64_t>(std::ceil(a / unit - 0.5));
  hi = static_cast<std::int64_t>(std::floor(b / unit - 0.5));
}

}  // namespace detail

/// Midpoint pairing sum_cells vol * g(center) * xi(cell) with g the remapped,
/// amplitude-scaled test function. When `with_noise` is false only the
/// variance is accumulated.
template <int D>
PairResult pair_view(const NoiseView<D>& view, const TestFunction<D>& f, bool with_noise = true) {
  const NoiseField<D>& field = *view.field;
  const NoiseTransform<D>& tr = view.transform;
  check_alignment(field, tr);
  bool finite = std::isfinite(f.t0) && std::isfinite(f.t1);
  for (int i = 0; i < D; ++i) finite = finite && std::isfinite(f.lo[i]) && std::isfinite(f.hi[i]);
  require(finite && static_cast<bool>(f.value), ErrorKind::invalid_input, "test function support must be bounded");

  double sa = tr.base_time(f.t0), sb = tr.base_time(f.t1);
  if (sa > sb) std::swap(sa, sb);
  std::int64_t k0, k1;
  detail::index_range(sa, sb, field.slab(), k0, k1);
  Index<D> jlo, jhi;
  const Point<D> ya = tr.base_space(f.lo), yb = tr.base_space(f.hi);
  double count = std::max<double>(0.0, static_cast<double>(k1 - k0 + 1));
  for (int i = 0; i < D; ++i) {
    detail::index_range(std::min(ya[i], yb[i]), std::max(ya[i], yb[i]), field.cell(), jlo[i], jhi[i]);
    count *= std::max<double>(0.0, static_cast<double>(jhi[i] - jlo[i] + 1));
  }
  require(count <= 4e9, ErrorKind::invalid_input, "test function support covers too many cells");

  const double amp = tr.test_amplitude();
  const double vol = field.cell_volume();
  const double root_vol = std::sqrt(vol);
  PairResult out;
  Point<D> y;
  for (std::int64_t k = k0; k <= k1; ++k) {
    const double s = tr.local_time(field.slab_center(k));
    for_each_index<D>(jlo, jhi, [&](const Index<D>& j) {
      for (int i = 0; i < D; ++i) y[i] = field.cell_center(j[i]);
      const double g = amp * f.value(s, tr.local_space(y));
      if (g == 0.0) return;
      ++out.cells;
      out.variance += vol * g * g;
      if (with_noise) out.value += root_vol * g * field.standard(k, j);
    });
  }
  return out;
}

/// <xi, f> on the plain field.
template <int D>
PairResult pair(const NoiseField<D>& field, const TestFunction<D>& f) {
  return pair_view<D>(NoiseView<D>::plain(field), f);
}

/// <T xi, f> for a rescaling / translation / time-reversal transform T.
template <int D>
PairResult transform_pair(const NoiseField<D>& field, const NoiseTransform<D>& tr, const TestFunction<D>& f) {
  return pair_view<D>(NoiseView<D>{&field, tr}, f);
}

/// Smooth space-time bump used by the scaling diagnostic: a time bump on
/// [0, duration] times a radial bump of radius `radius`.
template <int D>
TestFunction<D> space_time_bump(double duration, double radius) {
  TestFunction<D> f;
  f.value = [duration, radius](double s, const Point<D>& y) {
    const double u = 2.0 * s / duration - 1.0;
    const double r2 = norm2<D>(y) / (radius * radius);
    if (std::fabs(u) >= 1.0 || r2 >= 1.0) return 0.0;
    return std::exp(-1.0 / (1.0 - u * u)) * std::exp(-1.0 / (1.0 - r2));
  };
  f.t0 = 0.0;
  f.t1 = duration;
  f.lo.fill(-radius);
  f.hi.fill(radius);
  return f;
}

/// Continuum L2 norm squared of space_time_bump.
template <int D>
double space_time_bump_norm2(double duration, double radius) {
  const double time_part = detail::integrate(
      [](double u) {
        const double v = 1.0 - u * u;
        return v > 0.0 ? std::exp(-2.0 / v) : 0.0;
      },
      -1.0, 1.0, 1e-14);
  const double space_part = detail::integrate(
      [](double r) {
        const double v = 1.0 - r * r;
        return v > 0.0 ? unit_sphere_area(D) * std::pow(r, D - 1) * std::exp(-2.0 / v) : 0.0;
      },
      0.0, 1.0, 1e-14);
  return 0.5 * duration * time_part * std::pow(radius, D) * space_part;
}

/// Theta^lambda_0 f: (s, y) -> lambda^{-(D+2)} f(-s / lambda^2, y / lambda).
template <int D>
TestFunction<D> rescaled(const TestFunction<D>& f, double lambda) {
  TestFunction<D> g;
  const double amp = std::pow(lambda, -(D + 2.0));
  g.value = [f, lambda, amp](double s, const Point<D>& y) {
    return amp * f.value(-s / (lambda * lambda), (1.0 / lambda) * y);
  };
  g.t0 = -lambda * lambda * f.t1;
  g.t1 = -lambda * lambda * f.t0;
  g.lo = lambda * f.lo;
  g.hi = lambda * f.hi;
  return g;
}

struct ScalingRow {
  double lambda = 0.0;
  MeanSE variance;
  double discrete_variance = 0.0;
  double continuum_variance = 0.0;
};

struct ScalingTable {
  std::vector<ScalingRow> rows;
  LinearFit fit;
};

/// Monte Carlo variance of <xi, Theta^lambda_0 f> over independent seeds, for
/// each lambda, with the log-log slope against lambda. The test function is a
/// space_time_bump(duration, radius); each lambda must resolve it with at least
/// four cells per radius and four slabs per duration.
template <int D>
ScalingTable besov_scaling_check(double slab, double cell, double duration, double radius,
                                 const std::vector<double>& lambdas, std::size_t seeds, std::uint64_t master_seed,
                                 int workers = 1) {
  require(!lambdas.empty() && seeds >= 2, ErrorKind::invalid_argument, "need lambdas and at least two seeds");
  const TestFunction<D> base = space_time_bump<D>(duration, radius);
  const double norm = space_time_bump_norm2<D>(duration, radius);
  ScalingTable table;
  for (double lambda : lambdas) {
    require(lambda > 0.0 && lambda * radius >= 4.0 * cell - 1e-12 &&
                lambda * lambda * duration >= 4.0 * slab - 1e-12,
            ErrorKind::invalid_scale,
            "lambda=" + std::to_string(lambda) + " is below the grid resolution");
    const TestFunction<D> g = rescaled<D>(base, lambda);
    // The cell weights do not depend on the seed; collect them once.
    const NoiseField<D> geometry(0, slab, cell);
    struct Weighted {
      std::int64_t k;
      Index<D> j;
      double w;
    };
    std::vector<Weighted> cells;
    double discrete = 0.0;
    {
      std::int64_t k0, k1;
      detail::index_range(g.t0, g.t1, slab, k0, k1);
      Index<D> jlo, jhi;
      for (int i = 0; i < D; ++i) detail::index_range(g.lo[i], g.hi[i], cell, jlo[i], jhi[i]);
      const double root_vol = std::sqrt(geometry.cell_volume());
      Point<D> y;
      for (std::int64_t k = k0; k <= k1; ++k) {
        const double s = geometry.slab_center(k);
        for_each_index<D>(jlo, jhi, [&](const Index<D>& j) {
          for (int i = 0; i < D; ++i) y[i] = geometry.cell_center(j[i]);
          const double v = g.value(s, y);
          if (v == 0.0) return;
          cells.push_back({k, j, root_vol * v});
          discrete += geometry.cell_volume() * v * v;
        });
      }
    }
    const std::vector<double> values = parallel_map<double>(seeds, workers, [&](std::size_t i) {
      const NoiseField<D> field(stream_seed(master_seed, tag::noise, i), slab, cell);
      double acc = 0.0;
      for (const auto& c : cells) acc += c.w * field.standard(c.k, c.j);
      return acc;
    });
    table.rows.push_back({lambda, variance_se(values), discrete, std::pow(lambda, -(D + 2.0)) * norm});
  }
  if (table.rows.size() >= 2) {
    std::vector<double> x, y, s;
    for (const auto& r : table.rows) {
      x.push_back(std::log(r.lambda));
      y.push_back(std::log(r.variance.mean));
      s.push_back(r.variance.se / r.variance.mean);
    }
    table.fit = weighted_line_fit(x, y, s);
  }
  return table;
}

}  // namespace kpzlab
