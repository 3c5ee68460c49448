#pragma once

// Verification statistics: covariance estimators, sigma^2 integrand, the
// martingale plateau, small-eps gap statistics, tails of log Z and the
// decorrelation split. All batch loops write by index and reduce in order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "kpzlab/config.hpp"
#include "kpzlab/core/counter_rng.hpp"
#include "kpzlab/core/error.hpp"
#include "kpzlab/core/estimators.hpp"
#include "kpzlab/core/parallel.hpp"
#include "kpzlab/core/point.hpp"
#include "kpzlab/lattice_she.hpp"
#include "kpzlab/mollifier.hpp"
#include "kpzlab/noise.hpp"
#include "kpzlab/polymer.hpp"

namespace kpzlab {

namespace detail {

/// Seed of batch b's noise field and of its path family.
inline std::uint64_t batch_noise_seed(std::uint64_t master, std::size_t b) {
  return stream_seed(master, tag::noise, b);
}
inline std::uint64_t batch_path_seed(std::uint64_t master, std::size_t b) {
  return stream_seed(master, tag::pairs, b);
}

inline std::int64_t steps_of(double horizon, double dt, const char* what) {
  require(horizon > 0.0 && is_multiple(horizon, dt), ErrorKind::invalid_configuration,
          std::string(what) + " is not a positive multiple of dt");
  return std::llround(horizon / dt);
}

inline double mean_of_exp(const std::vector<double>& lw) {
  double s = 0.0;
  for (double v : lw) s += std::exp(v);
  return s / static_cast<double>(lw.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Covariance

template <int D>
struct CovarianceRecord {
  Point<D> x = zero_point<D>();
  double horizon = 0.0;
  double beta = 0.0;
  std::optional<MeanSE> pair;
  std::optional<MeanSE> overlap;
  /// Occupation-tail diagnostic of the overlap estimator.
  double tail_fraction = 0.0;
  bool tail_ok = true;
};

/// Cov(Z_T(0), Z_T(x)) from `batches` noise fields. Within a batch both
/// estimates read the same field but independent path streams, so the mean of
/// (Z_hat(0) - 1)(Z_hat(x) - 1) is unbiased for the covariance, including x = 0.
template <int D>
CovarianceRecord<D> covariance_pair(const ExperimentConfig& cfg, const Point<D>& x, std::size_t batches) {
  check_dimension<D>(cfg);
  require(batches >= 2, ErrorKind::invalid_argument, "covariance_pair needs at least two batches");
  CovarianceRecord<D> rec;
  rec.x = x;
  rec.horizon = cfg.horizon;
  rec.beta = cfg.beta;
  ExperimentConfig inner = cfg;
  inner.workers = 1;
  std::vector<double> prod = parallel_map<double>(batches, cfg.workers, [&](std::size_t b) {
    const NoiseField<D> field(detail::batch_noise_seed(cfg.seed, b), cfg.dt, cfg.cell);
    const auto view = NoiseView<D>::plain(field);
    ExperimentConfig c = inner;
    c.seed = detail::batch_path_seed(cfg.seed, b);
    PartitionRequest<D> r0, rx;
    rx.start = x;
    rx.stream = tag::paths_b;
    const double z0 = partition_function<D>(c, view, r0).value;
    const double zx = partition_function<D>(c, view, rx).value;
    return (z0 - 1.0) * (zx - 1.0);
  });
  rec.pair = mean_se(prod);
  return rec;
}

/// E_{x/sqrt2}[exp(beta^2 int_0^T V(sqrt2 W_s) ds)] - 1 with cfg.samples paths.
template <int D>
CovarianceRecord<D> covariance_overlap(const ExperimentConfig& cfg, const Point<D>& x, double horizon,
                                       const CovarianceKernel<D>& v = default_kernel<D>()) {
  CovarianceRecord<D> rec;
  rec.x = x;
  rec.horizon = horizon;
  rec.beta = cfg.beta;
  if (cfg.beta == 0.0) {
    rec.overlap = MeanSE{0.0, 0.0, static_cast<std::size_t>(cfg.samples)};
    return rec;
  }
  const OverlapEstimate o = overlap_functional<D>(cfg, v, (1.0 / std::sqrt(2.0)) * x, horizon);
  rec.overlap = o.excess;
  rec.tail_fraction = o.tail_fraction;
  rec.tail_ok = o.tail_ok;
  return rec;
}

struct PowerLawFit {
  double slope = 0.0;
  double slope_se = 0.0;
  double intercept = 0.0;
  Interval ci;
  std::size_t used = 0;
  std::vector<std::string> warnings;
};

/// Weighted least squares of log C(x) on log |x|, sigma = SE / C.
template <int D>
PowerLawFit powerlaw_fit(const std::vector<CovarianceRecord<D>>& records) {
  std::vector<double> lx, ly, sy;
  PowerLawFit fit;
  for (const auto& r : records) {
    require(r.overlap.has_value(), ErrorKind::invalid_argument, "power-law fit needs overlap estimates");
    const MeanSE& c = *r.overlap;
    const double dist = norm<D>(r.x);
    if (!(c.mean > 0.0) || !(dist > 0.0)) {
      fit.warnings.push_back("excluded |x|=" + std::to_string(dist) + ": nonpositive value " + std::to_string(c.mean));
      continue;
    }
    lx.push_back(std::log(dist));
    ly.push_back(std::log(c.mean));
    sy.push_back(c.se > 0.0 ? c.se / c.mean : 1e-12);
  }
  require(lx.size() >= 2, ErrorKind::invalid_argument, "power-law fit needs at least two positive records");
  const LinearFit f = weighted_line_fit(lx, ly, sy);
  fit.slope = f.slope;
  fit.slope_se = f.slope_se;
  fit.intercept = f.intercept;
  fit.ci = {f.slope - z95 * f.slope_se, f.slope + z95 * f.slope_se};
  fit.used = lx.size();
  return fit;
}

// ---------------------------------------------------------------------------
// sigma^2(beta) up to its constant

/// V(sqrt2 y) E_y[exp(beta^2 int_0^T V(sqrt2 W))].
template <int D>
MeanSE sigma2_integrand(const ExperimentConfig& cfg, const Point<D>& y, double horizon,
                        const CovarianceKernel<D>& v = default_kernel<D>()) {
  const double vy = v.radial(std::sqrt(2.0) * norm<D>(y));
  if (cfg.beta == 0.0 || vy == 0.0) return {vy, 0.0, static_cast<std::size_t>(cfg.samples)};
  const MeanSE m = overlap_functional<D>(cfg, v, y, horizon).moment;
  return {vy * m.mean, vy * m.se, m.n};
}

struct Sigma2Estimate {
  double beta = 0.0;
  MeanSE value;
  /// Same integral at twice the horizon, sharing paths.
  MeanSE doubled;
  bool diverging = false;
};

/// int dy V(sqrt2 y) E_y[...] over |y| <= 1/sqrt2 by radial Gauss-Legendre
/// nodes, each node an independent Monte Carlo estimate.
template <int D>
Sigma2Estimate sigma2_relative(const ExperimentConfig& cfg, double horizon,
                               const CovarianceKernel<D>& v = default_kernel<D>()) {
  using rule = boost::math::quadrature::gauss<double, 20>;
  const double reach = 1.0 / std::sqrt(2.0);
  const double area = unit_sphere_area(D);
  const auto& xs = rule::abscissa();
  const auto& ws = rule::weights();
  std::vector<double> nodes, weights;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (int s : {-1, 1}) {
      if (k == 0 && xs[k] == 0.0 && s < 0) continue;
      const double u = 0.5 * reach * (1.0 + s * xs[k]);
      nodes.push_back(u);
      weights.push_back(0.5 * reach * ws[k] * area * std::pow(u, D - 1));
    }
  }
  Sigma2Estimate out;
  out.beta = cfg.beta;
  double m1 = 0.0, v1 = 0.0, m2 = 0.0, v2 = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    ExperimentConfig c = cfg;
    c.seed = stream_seed(cfg.seed, tag::pairs, k);
    const Point<D> y = axis_point<D>(nodes[k]);
    const MeanSE a = sigma2_integrand<D>(c, y, horizon, v);
    const MeanSE b = sigma2_integrand<D>(c, y, 2.0 * horizon, v);
    m1 += weights[k] * a.mean;
    v1 += weights[k] * weights[k] * a.se * a.se;
    m2 += weights[k] * b.mean;
    v2 += weights[k] * weights[k] * b.se * b.se;
  }
  out.value = {m1, std::sqrt(v1), static_cast<std::size_t>(cfg.samples)};
  out.doubled = {m2, std::sqrt(v2), static_cast<std::size_t>(cfg.samples)};
  // Paths are shared, so the difference is at least as precise as either term.
  out.diverging = (m2 - m1) > z95 * std::hypot(out.value.se, out.doubled.se);
  return out;
}

// ---------------------------------------------------------------------------
// Martingale plateau

struct PlateauTable {
  std::vector<double> horizons;
  /// E[Z_T^2] at each horizon.
  std::vector<MeanSE> second_moment;
  /// E[(Z_{T_{k+1}} - Z_{T_k})^2] for consecutive horizons.
  std::vector<MeanSE> increment;
};

/// Both quantities use U-statistics over the M paths of each batch, so
/// inner Monte Carlo noise does not bias them.
template <int D>
PlateauTable martingale_plateau(const ExperimentConfig& cfg, const std::vector<double>& horizons,
                                std::size_t batches) {
  check_dimension<D>(cfg);
  require(!horizons.empty() && std::is_sorted(horizons.begin(), horizons.end()), ErrorKind::invalid_argument,
          "plateau horizons must be nonempty and increasing");
  require(batches >= 2 && cfg.samples >= 2, ErrorKind::invalid_argument, "plateau needs >= 2 batches and M >= 2");
  std::vector<std::int64_t> cps;
  for (double t : horizons) cps.push_back(detail::steps_of(t, cfg.dt, "plateau horizon"));
  const std::size_t h = horizons.size();
  PlateauTable tab;
  tab.horizons = horizons;
  if (cfg.beta == 0.0) {
    tab.second_moment.assign(h, MeanSE{1.0, 0.0, batches});
    tab.increment.assign(h - 1, MeanSE{0.0, 0.0, batches});
    return tab;
  }
  const auto m = static_cast<std::size_t>(cfg.samples);
  std::vector<std::vector<double>> sm(h, std::vector<double>(batches)), inc(h > 1 ? h - 1 : 0, std::vector<double>(batches));
  parallel_for(batches, cfg.workers, [&](std::size_t b) {
    const NoiseField<D> field(detail::batch_noise_seed(cfg.seed, b), cfg.dt, cfg.cell);
    const ActionKernel<D> kernel(NoiseView<D>::plain(field), cfg.dt);
    ExperimentConfig c = cfg;
    c.seed = detail::batch_path_seed(cfg.seed, b);
    std::vector<std::vector<double>> w(h, std::vector<double>(m));
    for (std::size_t i = 0; i < m; ++i) {
      const std::vector<double> lw = checkpoint_log_weights<D>(c, kernel, {}, i, cps);
      for (std::size_t k = 0; k < h; ++k) w[k][i] = std::exp(lw[k]);
    }
    for (std::size_t k = 0; k < h; ++k) sm[k][b] = pair_product_mean(w[k]);
    std::vector<double> d(m);
    for (std::size_t k = 0; k + 1 < h; ++k) {
      for (std::size_t i = 0; i < m; ++i) d[i] = w[k + 1][i] - w[k][i];
      inc[k][b] = pair_product_mean(d);
    }
  });
  for (auto& v : sm) tab.second_moment.push_back(mean_se(v));
  for (auto& v : inc) tab.increment.push_back(mean_se(v));
  return tab;
}

// ---------------------------------------------------------------------------
// Small-eps gap statistics

enum class InitialVariant { flat, general, droplet };

inline const char* to_string(InitialVariant v) {
  switch (v) {
    case InitialVariant::flat: return "flat";
    case InitialVariant::general: return "general";
    case InitialVariant::droplet: return "droplet";
  }
  return "unknown";
}

inline InitialVariant parse_variant(const std::string& s) {
  if (s == "flat") return InitialVariant::flat;
  if (s == "general") return InitialVariant::general;
  if (s == "droplet") return InitialVariant::droplet;
  fail(ErrorKind::config_error, "unknown initial-condition variant '" + s + "'");
}

template <int D>
struct GapSetup {
  InitialVariant variant = InitialVariant::flat;
  double t = 1.0 / 64.0;
  Point<D> x = zero_point<D>();
  Point<D> x0 = zero_point<D>();
  std::vector<double> eps{1.0, 0.5, 0.25};
  /// Local horizon of the log Z proxy.
  double t_max = 1.0;
  std::size_t seeds = 200;
  /// Lattice spacing and step in units of eps and eps^2.
  double spacing_ratio = 0.25;
  double dt_ratio = 1.0 / 128.0;
  /// Initial height for the general variant.
  std::function<double(const Point<D>&)> h0;
};

struct GapRow {
  double eps = 1.0;
  MeanSE mean;
  MeanSE variance;
  double reference = 0.0;
  /// Lattice box side and whether it clears the wrap diagnostic.
  double box = 0.0;
  bool wrap_ok = true;
};

struct GapRecord {
  InitialVariant variant = InitialVariant::flat;
  std::vector<GapRow> rows;
};

namespace detail {

/// Smallest even number of lattice cells covering 8 sqrt(t) + eps.
inline double lattice_box(double t, double eps, double spacing) {
  const double need = 8.0 * std::sqrt(t) + eps;
  auto cells = static_cast<std::int64_t>(std::ceil(need / spacing - 1e-9));
  if (cells % 2) ++cells;
  return static_cast<double>(cells) * spacing;
}

}  // namespace detail

/// Per eps: h_eps(t, x) from the lattice minus log Z_hat_{t_max} on the reversed
/// view (eps, t, x), minus log Z_hat_{t_max} on the anchored view (eps, x0) for
/// droplets, minus the noiseless reference. Both views read the lattice's own
/// noise field; the lattice point x is the centre of the site containing x.
template <int D>
GapRecord theorem1_gap(const ExperimentConfig& cfg, const GapSetup<D>& s) {
  check_dimension<D>(cfg);
  require(!s.eps.empty() && s.seeds >= 2, ErrorKind::invalid_argument, "gap needs eps values and >= 2 seeds");
  require(s.variant != InitialVariant::general || static_cast<bool>(s.h0), ErrorKind::invalid_input,
          "general variant needs h0");
  GapRecord rec;
  rec.variant = s.variant;
  for (double eps : s.eps) {
    SheParams p;
    p.eps = eps;
    p.beta = cfg.beta;
    p.spacing = s.spacing_ratio * eps;
    p.dt = s.dt_ratio * eps * eps;
    p.box = detail::lattice_box(s.t, eps, p.spacing);
    p.seed = cfg.seed;
    const SHEGrid<D> proto(p);
    const Point<D> xs = proto.site_position(proto.site_of(s.x));
    const Point<D> x0s = proto.site_position(proto.site_of(s.x0));
    InitialCondition<D> ic = InitialCondition<D>::flat();
    double reference = 0.0;
    if (s.variant == InitialVariant::general) {
      ic = InitialCondition<D>::general(s.h0);
      HeatState<D> st;
      st.initial = [&](const Point<D>& y) { return std::exp(s.h0(y)); };
      reference = std::log(heat_solve<D>(st, s.t, xs));
    } else if (s.variant == InitialVariant::droplet) {
      ic = InitialCondition<D>::droplet(s.x0);
      reference = std::log(heat_kernel<D>(s.t, xs - x0s));
    }
    ExperimentConfig pc = cfg;
    pc.eps = eps;
    pc.dt = p.dt / (eps * eps);
    pc.cell = p.spacing / eps;
    pc.horizon = s.t_max;
    pc.workers = 1;
    std::vector<double> gaps(s.seeds);
    bool wrap_ok = true;
    parallel_for(s.seeds, cfg.workers, [&](std::size_t b) {
      SHEGrid<D> grid(proto);
      const NoiseField<D> field = lattice_noise<D>(grid, detail::batch_noise_seed(cfg.seed, b));
      const SheSnapshot snap = run_to<D>(grid, s.t, ic, field, false);
      if (b == 0) wrap_ok = snap.wrap_ok;
      const double u = grid.at(xs);
      if (!(u > 0.0)) fail(ErrorKind::positivity_loss, "lattice solution is not positive at x");
      ExperimentConfig c = pc;
      c.seed = detail::batch_path_seed(cfg.seed, b);
      const NoiseView<D> rev{&field, NoiseTransform<D>::reversal(eps, s.t, xs)};
      double g = std::log(u) - std::log(partition_function<D>(c, rev).value) - reference;
      if (s.variant == InitialVariant::droplet) {
        const NoiseView<D> anc{&field, NoiseTransform<D>::anchored(eps, x0s)};
        PartitionRequest<D> req;
        req.stream = tag::paths_b;
        g -= std::log(partition_function<D>(c, anc, req).value);
      }
      gaps[b] = g;
    });
    GapRow row;
    row.eps = eps;
    row.mean = mean_se(gaps);
    row.variance = variance_se(gaps);
    row.reference = reference;
    row.box = p.box;
    row.wrap_ok = wrap_ok;
    rec.rows.push_back(row);
  }
  return rec;
}

/// Noiseless droplet: relative error of the lattice kernel at x against rho(t, x - x0).
template <int D>
double droplet_kernel_error(double eps, double t, const Point<D>& x, const Point<D>& x0, double spacing_ratio = 0.25,
                            double dt_ratio = 1.0 / 128.0) {
  SheParams p;
  p.eps = eps;
  p.beta = 0.0;
  p.spacing = spacing_ratio * eps;
  p.dt = dt_ratio * eps * eps;
  p.box = detail::lattice_box(t, eps, p.spacing);
  SHEGrid<D> grid(p);
  const NoiseField<D> field = lattice_noise<D>(grid, 0);
  run_to<D>(grid, t, InitialCondition<D>::droplet(x0), field, false);
  const Point<D> xs = grid.site_position(grid.site_of(x));
  const Point<D> x0s = grid.site_position(grid.site_of(x0));
  return grid.at(xs) / heat_kernel<D>(t, xs - x0s) - 1.0;
}

struct NarrowWedge {
  double rho = 0.0;
  /// Seed-level means of the bridge factor and of rho times it.
  MeanSE factor;
  MeanSE u;
  bool factor_ok = false;
  bool u_ok = false;
};

/// u_eps(t, x) = rho(t, x - x0) E^{t/eps^2, (x - x0)/eps}_{0,0}[...]: Brownian
/// bridges in local units (cfg.dt, cfg.cell) on the anchored view (eps, x0) of a
/// base field with slab eps^2 cfg.dt and cell eps cfg.cell; one field per seed.
template <int D>
NarrowWedge narrow_wedge_mean(const ExperimentConfig& cfg, double t, const Point<D>& x, const Point<D>& x0,
                              std::size_t seeds) {
  check_dimension<D>(cfg);
  require(seeds >= 2, ErrorKind::invalid_argument, "narrow wedge needs >= 2 seeds");
  const double eps = cfg.eps;
  NarrowWedge out;
  out.rho = heat_kernel<D>(t, x - x0);
  ExperimentConfig c = cfg;
  c.horizon = t / (eps * eps);
  c.workers = 1;
  detail::steps_of(c.horizon, c.dt, "bridge horizon");
  std::vector<double> f(seeds);
  parallel_for(seeds, cfg.workers, [&](std::size_t b) {
    const NoiseField<D> field(detail::batch_noise_seed(cfg.seed, b), eps * eps * cfg.dt, eps * cfg.cell);
    const NoiseView<D> view{&field, NoiseTransform<D>::anchored(eps, x0)};
    ExperimentConfig cb = c;
    cb.seed = detail::batch_path_seed(cfg.seed, b);
    PartitionRequest<D> req;
    req.bridge_end = (1.0 / eps) * (x - x0);
    f[b] = partition_function<D>(cb, view, req).value;
  });
  out.factor = mean_se(f);
  out.u = {out.rho * out.factor.mean, out.rho * out.factor.se, out.factor.n};
  out.factor_ok = std::fabs(out.factor.mean - 1.0) <= 3.0 * out.factor.se;
  out.u_ok = std::fabs(out.u.mean - out.rho) <= 3.0 * out.u.se;
  return out;
}

// ---------------------------------------------------------------------------
// Tails and negative moments of log Z_hat

struct TailRecord {
  double horizon = 0.0;
  /// Paths per realization of Z_hat.
  std::int64_t inner = 0;
  std::size_t samples = 0;
  std::vector<double> thetas;
  std::vector<std::size_t> exceedances;
  std::vector<double> probability;
  std::vector<Interval> wilson;
  bool monotone = true;
  /// log P ~ log C - theta^2 / c_hat over theta with >= 10 exceedances;
  /// c_hat is NaN when fewer than two such theta exist or the slope is not negative.
  double c_hat = std::numeric_limits<double>::quiet_NaN();
  double c_hat_se = std::numeric_limits<double>::quiet_NaN();
  /// Smallest C with P <= C exp(-theta^2 / c_hat) on every fitted theta.
  double envelope_c = std::numeric_limits<double>::quiet_NaN();
  std::size_t fitted = 0;
  MeanSE inverse_moment;
  MeanSE inverse_square_moment;
};

namespace detail {

inline TailRecord tail_record(const std::vector<double>& log_z, const std::vector<double>& thetas, double horizon,
                              std::int64_t inner) {
  TailRecord r;
  r.horizon = horizon;
  r.inner = inner;
  r.samples = log_z.size();
  r.thetas = thetas;
  std::vector<double> sorted = log_z;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> fx, fy;
  for (double th : thetas) {
    const auto k = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), -th) - sorted.begin());
    r.exceedances.push_back(k);
    const double p = static_cast<double>(k) / static_cast<double>(sorted.size());
    if (!r.probability.empty() && p > r.probability.back()) r.monotone = false;
    r.probability.push_back(p);
    r.wilson.push_back(wilson_interval(k, sorted.size()));
    if (k >= 10 && th > 0.0) {
      fx.push_back(th * th);
      fy.push_back(std::log(p));
    }
  }
  r.fitted = fx.size();
  if (fx.size() >= 2) {
    const LinearFit f = line_fit(fx, fy);
    if (f.slope < 0.0) {
      r.c_hat = -1.0 / f.slope;
      r.c_hat_se = f.slope_se / (f.slope * f.slope);
      double c = 0.0;
      for (std::size_t i = 0; i < fx.size(); ++i) c = std::max(c, std::exp(fy[i] + fx[i] / r.c_hat));
      r.envelope_c = c;
    }
  }
  std::vector<double> m1(log_z.size()), m2(log_z.size());
  for (std::size_t i = 0; i < log_z.size(); ++i) {
    m1[i] = std::exp(-log_z[i]);
    m2[i] = std::exp(-2.0 * log_z[i]);
  }
  r.inverse_moment = mean_se(m1);
  r.inverse_square_moment = mean_se(m2);
  return r;
}

}  // namespace detail

/// N realizations of log Z_hat, each an independent noise field with M = cfg.samples
/// paths; every horizon reuses the same paths and noise. Records come out per
/// horizon for M paths and, to expose the inner-M bias, for the first path alone.
template <int D>
std::vector<TailRecord> tail_study(const ExperimentConfig& cfg, const std::vector<double>& horizons,
                                   const std::vector<double>& thetas, std::size_t realizations) {
  check_dimension<D>(cfg);
  require(!horizons.empty() && std::is_sorted(horizons.begin(), horizons.end()), ErrorKind::invalid_argument,
          "tail horizons must be nonempty and increasing");
  require(std::is_sorted(thetas.begin(), thetas.end()), ErrorKind::invalid_argument, "theta grid must increase");
  require(realizations >= 2 && cfg.samples >= 1, ErrorKind::invalid_argument, "tail study needs N >= 2, M >= 1");
  std::vector<std::int64_t> cps;
  for (double t : horizons) cps.push_back(detail::steps_of(t, cfg.dt, "tail horizon"));
  const std::size_t h = horizons.size();
  const auto m = static_cast<std::size_t>(cfg.samples);
  std::vector<std::vector<double>> full(h, std::vector<double>(realizations)), single(full);
  if (cfg.beta != 0.0) {
    parallel_for(realizations, cfg.workers, [&](std::size_t r) {
      const NoiseField<D> field(detail::batch_noise_seed(cfg.seed, r), cfg.dt, cfg.cell);
      const ActionKernel<D> kernel(NoiseView<D>::plain(field), cfg.dt);
      ExperimentConfig c = cfg;
      c.seed = detail::batch_path_seed(cfg.seed, r);
      std::vector<std::vector<double>> lw(h, std::vector<double>(m));
      for (std::size_t i = 0; i < m; ++i) {
        const std::vector<double> v = checkpoint_log_weights<D>(c, kernel, {}, i, cps);
        for (std::size_t k = 0; k < h; ++k) lw[k][i] = v[k];
      }
      for (std::size_t k = 0; k < h; ++k) {
        full[k][r] = log_mean_exp(lw[k]).log_mean;
        single[k][r] = lw[k][0];
      }
    });
  }
  std::vector<TailRecord> out;
  for (std::size_t k = 0; k < h; ++k) {
    out.push_back(detail::tail_record(full[k], thetas, horizons[k], cfg.samples));
    if (m > 1) out.push_back(detail::tail_record(single[k], thetas, horizons[k], 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decorrelation split

struct SplitRow {
  double horizon = 0.0;
  double m = 0.0;
  /// E|Z_hat_bridge - Z_hat_m Z_hat'_m|, including inner Monte Carlo noise.
  MeanSE l1_gap;
  /// Unbiased E[(Z_bridge - Z_m Z'_m)^2] from paired per-path differences.
  MeanSE l2_gap;
  MeanSE bridge;
  MeanSE product;
  /// Bridge occupation int_m^{T-m} V(sqrt2 B_s) ds of a 0 -> 0 bridge.
  MeanSE middle_occupation;
};

/// Bridge partition function from (0, 0) to (T, X) against the product of the
/// forward partition function over [0, m] and the one started at (T, X) running
/// backwards over [T - m, T] on the same field.
template <int D>
SplitRow decorrelation_split(const ExperimentConfig& cfg, double horizon, double m, std::size_t seeds,
                             const Point<D>& end = zero_point<D>(),
                             const CovarianceKernel<D>& v = default_kernel<D>()) {
  check_dimension<D>(cfg);
  require(m > 0.0 && m <= 0.25 * horizon * (1.0 + 1e-12), ErrorKind::invalid_argument, "split needs 0 < m <= T/4");
  require(seeds >= 2 && cfg.samples >= 2, ErrorKind::invalid_argument, "split needs >= 2 seeds and M >= 2");
  const std::int64_t n = detail::steps_of(horizon, cfg.dt, "split horizon");
  const std::int64_t nm = detail::steps_of(m, cfg.dt, "split m");
  SplitRow row;
  row.horizon = horizon;
  row.m = m;
  const auto mm = static_cast<std::size_t>(cfg.samples);
  std::vector<double> l1(seeds), l2(seeds), zb(seeds), zp(seeds), occ(seeds);
  parallel_for(seeds, cfg.workers, [&](std::size_t b) {
    PathRng orng(stream_seed(cfg.seed, tag::paths_b, b));
    const BrownianPath<D> ob = sample_bridge<D>(cfg.dt, n, zero_point<D>(), zero_point<D>(), orng);
    double acc = 0.0;
    for (std::int64_t k = nm; k < n - nm; ++k)
      acc += v.radial(std::sqrt(2.0) * norm<D>(ob.pos[static_cast<std::size_t>(k)]));
    occ[b] = cfg.dt * acc;
    if (cfg.beta == 0.0) {
      zb[b] = zp[b] = 1.0;
      return;
    }
    const NoiseField<D> field(detail::batch_noise_seed(cfg.seed, b), cfg.dt, cfg.cell);
    const ActionKernel<D> fwd(NoiseView<D>::plain(field), cfg.dt);
    const ActionKernel<D> back(NoiseView<D>{&field, NoiseTransform<D>::reversal(1.0, horizon, end)}, cfg.dt);
    const std::uint64_t ps = detail::batch_path_seed(cfg.seed, b);
    const double b2 = cfg.beta * cfg.beta;
    std::vector<double> wb(mm), w1(mm), w2(mm), d(mm);
    for (std::size_t i = 0; i < mm; ++i) {
      PathRng r0(stream_seed(ps, tag::paths, i)), r1(stream_seed(ps, tag::pairs, i)),
          r2(stream_seed(ps, tag::paths_b, i));
      const BrownianPath<D> pb = sample_bridge<D>(cfg.dt, n, zero_point<D>(), end, r0);
      const BrownianPath<D> p1 = sample_path<D>(cfg.dt, nm, zero_point<D>(), r1);
      const BrownianPath<D> p2 = sample_path<D>(cfg.dt, nm, zero_point<D>(), r2);
      const ActionTerms tb = fwd.evaluate(pb, true), t1 = fwd.evaluate(p1, true), t2 = back.evaluate(p2, true);
      wb[i] = std::exp(cfg.beta * tb.action - 0.5 * b2 * tb.variance);
      w1[i] = std::exp(cfg.beta * t1.action - 0.5 * b2 * t1.variance);
      w2[i] = std::exp(cfg.beta * t2.action - 0.5 * b2 * t2.variance);
      d[i] = wb[i] - w1[i] * w2[i];
    }
    double sb = 0.0, s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < mm; ++i) {
      sb += wb[i];
      s1 += w1[i];
      s2 += w2[i];
    }
    const double fm = static_cast<double>(mm);
    zb[b] = sb / fm;
    zp[b] = (s1 / fm) * (s2 / fm);
    l1[b] = std::fabs(zb[b] - zp[b]);
    l2[b] = pair_product_mean(d);
  });
  row.l1_gap = mean_se(l1);
  row.l2_gap = mean_se(l2);
  row.bridge = mean_se(zb);
  row.product = mean_se(zp);
  row.middle_occupation = mean_se(occ);
  return row;
}

}  // namespace kpzlab
