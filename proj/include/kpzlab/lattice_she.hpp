#pragma once

// Explicit Euler-Maruyama (Ito) integration of the mollified stochastic heat
// equation on a periodic lattice, with Hopf-Cole output.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
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

struct SheParams {
  double eps = 1.0;
  double beta = 0.2;
  double spacing = 0.125;
  double dt = 0.001953125;
  double box = 4.0;
  std::uint64_t seed = 1;
};

/// Initial data. Sites sit at ((j + 1/2) a_L)_i, j in [0, n)^D.
template <int D>
struct InitialCondition {
  struct Flat {};
  struct General {
    std::function<double(const Point<D>&)> h0;
  };
  struct Droplet {
    Point<D> x0;
  };
  std::variant<Flat, General, Droplet> kind = Flat{};

  static InitialCondition flat() { return {Flat{}}; }
  static InitialCondition general(std::function<double(const Point<D>&)> h0) { return {General{std::move(h0)}}; }
  static InitialCondition droplet(const Point<D>& x0) { return {Droplet{x0}}; }
};

/// Periodic lattice state plus the mollifier stencil used to smooth noise slabs.
template <int D>
class SHEGrid {
 public:
  explicit SHEGrid(const SheParams& p, const Mollifier<D>& phi = default_mollifier<D>()) : p_(p) {
    require(p.spacing > 0.0 && p.dt > 0.0 && p.box > 0.0 && p.eps > 0.0, ErrorKind::invalid_configuration,
            "lattice parameters must be positive");
    const double q = p.box / p.spacing;
    n_ = std::llround(q);
    require(n_ >= 2 && std::fabs(q - static_cast<double>(n_)) < 1e-9 * q, ErrorKind::invalid_configuration,
            "box side is not a whole number of lattice spacings");
    require(p.dt <= p.spacing * p.spacing / (2.0 * D) * (1.0 + 1e-12), ErrorKind::invalid_configuration,
            "dt exceeds the stability bound a_L^2/(2d)");
    sites_ = 1;
    for (int i = 0; i < D; ++i) sites_ *= static_cast<std::size_t>(n_);
    build_stencil(phi);
    require(2 * reach_ < n_, ErrorKind::invalid_configuration, "mollifier stencil is wider than half the box");
    u_.assign(sites_, 1.0);
  }

  [[nodiscard]] const SheParams& params() const { return p_; }
  [[nodiscard]] std::int64_t side() const { return n_; }
  [[nodiscard]] std::size_t sites() const { return sites_; }
  [[nodiscard]] double time() const { return time_; }
  [[nodiscard]] std::int64_t step_count() const { return steps_; }
  [[nodiscard]] const std::vector<double>& values() const { return u_; }
  [[nodiscard]] std::vector<double>& values() { return u_; }
  /// Stencil weights phi_eps(m a_L), rescaled so that sum a_L^D w = 1.
  [[nodiscard]] const std::vector<std::pair<Index<D>, double>>& stencil() const { return stencil_; }
  /// sum a_L^D phi_eps(m a_L) before rescaling.
  [[nodiscard]] double raw_stencil_mass() const { return raw_mass_; }
  [[nodiscard]] std::int64_t stencil_reach() const { return reach_; }

  [[nodiscard]] Point<D> site_position(const Index<D>& j) const {
    Point<D> x;
    for (int i = 0; i < D; ++i) x[i] = (static_cast<double>(j[i]) + 0.5) * p_.spacing;
    return x;
  }

  [[nodiscard]] std::size_t flat_index(const Index<D>& j) const {
    std::size_t f = 0;
    for (int i = 0; i < D; ++i) {
      std::int64_t v = j[i] % n_;
      if (v < 0) v += n_;
      f = f * static_cast<std::size_t>(n_) + static_cast<std::size_t>(v);
    }
    return f;
  }

  /// Site whose cell contains x (periodically wrapped).
  [[nodiscard]] Index<D> site_of(const Point<D>& x) const {
    Index<D> j;
    for (int i = 0; i < D; ++i) j[i] = static_cast<std::int64_t>(std::floor(x[i] / p_.spacing));
    return j;
  }

  [[nodiscard]] double at(const Point<D>& x) const { return u_[flat_index(site_of(x))]; }

  void set_initial(const InitialCondition<D>& ic) {
    time_ = 0.0;
    steps_ = 0;
    if (std::holds_alternative<typename InitialCondition<D>::Flat>(ic.kind)) {
      u_.assign(sites_, 1.0);
    } else if (const auto* g = std::get_if<typename InitialCondition<D>::General>(&ic.kind)) {
      require(static_cast<bool>(g->h0), ErrorKind::invalid_input, "missing h0");
      Index<D> lo{}, hi;
      hi.fill(n_ - 1);
      for_each_index<D>(lo, hi, [&](const Index<D>& j) {
        const double h = g->h0(site_position(j));
        require(std::isfinite(h) || h == -std::numeric_limits<double>::infinity(), ErrorKind::invalid_input,
                "h0 is not bounded above on the lattice");
        u_[flat_index(j)] = std::exp(h);
      });
    } else {
      const auto& dr = std::get<typename InitialCondition<D>::Droplet>(ic.kind);
      u_.assign(sites_, 0.0);
      u_[flat_index(site_of(dr.x0))] = std::pow(p_.spacing, -D);
    }
  }

  /// Lattice field xi_eps on slab k: sum_m a_L^D w_m xi(k, j - m).
  [[nodiscard]] std::vector<double> mollified_slab(const NoiseField<D>& field, std::int64_t k) const {
    check_field(field);
    const std::int64_t r = reach_;
    const std::int64_t w = n_ + 2 * r;
    std::size_t padded_size = 1;
    for (int i = 0; i < D; ++i) padded_size *= static_cast<std::size_t>(w);
    // Noise on the padded box, wrapped periodically.
    std::vector<double> padded(padded_size);
    {
      std::vector<double> base(sites_);
      Index<D> lo{}, hi;
      hi.fill(n_ - 1);
      std::size_t f = 0;
      for_each_index<D>(lo, hi, [&](const Index<D>& j) { base[f++] = field.sample_cell(k, j); });
      Index<D> plo, phi;
      plo.fill(-r);
      phi.fill(n_ + r - 1);
      std::size_t g = 0;
      for_each_index<D>(plo, phi, [&](const Index<D>& j) { padded[g++] = base[flat_index(j)]; });
    }
    std::vector<double> out(sites_, 0.0);
    const double vol = std::pow(p_.spacing, D);
    std::array<std::size_t, D> stride;
    stride[D - 1] = 1;
    for (int i = D - 2; i >= 0; --i) stride[i] = stride[i + 1] * static_cast<std::size_t>(w);
    // out(j) = sum_m vol w_m padded(j - m + r); innermost axis is contiguous.
    for (const auto& [m, wm] : stencil_) {
      const double c = vol * wm;
      std::size_t shift = 0;
      for (int i = 0; i < D; ++i) shift += static_cast<std::size_t>(r - m[i]) * stride[i];
      Index<D> lo{}, hi;
      hi.fill(n_ - 1);
      hi[D - 1] = 0;
      std::size_t f = 0;
      for_each_index<D>(lo, hi, [&](const Index<D>& j) {
        std::size_t base = shift;
        for (int i = 0; i < D - 1; ++i) base += static_cast<std::size_t>(j[i]) * stride[i];
        const double* src = padded.data() + base;
        double* dst = out.data() + f;
        for (std::int64_t t = 0; t < n_; ++t) dst[t] += c * src[t];
        f += static_cast<std::size_t>(n_);
      });
    }
    return out;
  }

  /// u' = u + dt (1/2) Lap u + beta eps^{(D-2)/2} u xi_eps dt.
  void step_ito(const std::vector<double>& slab) {
    require(slab.size() == sites_, ErrorKind::invalid_argument, "slab size does not match the lattice");
    const double coupling = p_.beta * std::pow(p_.eps, 0.5 * (D - 2)) * p_.dt;
    const double diff = 0.5 * p_.dt / (p_.spacing * p_.spacing);
    std::vector<double> next(sites_);
    Index<D> lo{}, hi;
    hi.fill(n_ - 1);
    std::size_t f = 0;
    std::array<std::size_t, D> stride;
    stride[D - 1] = 1;
    for (int i = D - 2; i >= 0; --i) stride[i] = stride[i + 1] * static_cast<std::size_t>(n_);
    const auto n = static_cast<std::size_t>(n_);
    for_each_index<D>(lo, hi, [&](const Index<D>& j) {
      const double u = u_[f];
      double lap = -2.0 * D * u;
      for (int i = 0; i < D; ++i) {
        const auto ji = static_cast<std::size_t>(j[i]);
        lap += u_[ji + 1 == n ? f - (n - 1) * stride[i] : f + stride[i]];
        lap += u_[ji == 0 ? f + (n - 1) * stride[i] : f - stride[i]];
      }
      const double v = u + diff * lap + coupling * u * slab[f];
      if (v < 0.0 || (v == 0.0 && u > 0.0))
        fail(ErrorKind::positivity_loss, "u <= 0 at site " + std::to_string(f) + " after step " +
                                             std::to_string(steps_ + 1) + " (t=" + std::to_string(time_ + p_.dt) +
                                             ")");
      next[f] = v;
      ++f;
    });
    u_.swap(next);
    time_ += p_.dt;
    ++steps_;
  }

  /// Advances one step with slab k of `field`.
  void advance(const NoiseField<D>& field) {
    if (p_.beta == 0.0) {
      step_ito(std::vector<double>(sites_, 0.0));
      return;
    }
    step_ito(mollified_slab(field, steps_));
  }

  [[nodiscard]] double mass() const {
    double s = 0.0;
    for (double v : u_) s += v;
    return s * std::pow(p_.spacing, D);
  }

 private:
  void check_field(const NoiseField<D>& field) const {
    require(std::fabs(field.slab() - p_.dt) <= 1e-15 * p_.dt && std::fabs(field.cell() - p_.spacing) <= 1e-15 &&
                field.period() == n_,
            ErrorKind::invalid_configuration, "noise field does not match the lattice (slab, cell, period)");
  }

  void build_stencil(const Mollifier<D>& phi) {
    const double e = p_.eps;
    reach_ = static_cast<std::int64_t>(std::ceil(Mollifier<D>::support_radius * e / p_.spacing));
    Index<D> lo, hi;
    lo.fill(-reach_);
    hi.fill(reach_);
    const double vol = std::pow(p_.spacing, D);
    const double scale = std::pow(e, -D);
    double mass = 0.0;
    for_each_index<D>(lo, hi, [&](const Index<D>& m) {
      double r2 = 0.0;
      for (int i = 0; i < D; ++i) r2 += std::pow(static_cast<double>(m[i]) * p_.spacing / e, 2);
      const double w = scale * phi.from_norm2(r2);
      if (w > 0.0) {
        stencil_.emplace_back(m, w);
        mass += vol * w;
      }
    });
    require(mass > 0.0, ErrorKind::invalid_configuration, "lattice too coarse to resolve the mollifier");
    raw_mass_ = mass;
    for (auto& s : stencil_) s.second /= mass;
  }

  SheParams p_;
  std::int64_t n_ = 0;
  std::size_t sites_ = 0;
  std::int64_t reach_ = 0;
  double raw_mass_ = 1.0;
  std::vector<std::pair<Index<D>, double>> stencil_;
  std::vector<double> u_;
  double time_ = 0.0;
  std::int64_t steps_ = 0;
};

/// Base noise for a lattice run: slabs of length dt, cells = lattice sites, periodic
/// from slab 0 onward.
template <int D>
NoiseField<D> lattice_noise(const SHEGrid<D>& grid, std::uint64_t seed) {
  NoiseField<D> f(seed, grid.params().dt, grid.params().spacing, grid.side());
  f.set_periodic_from(0);
  return f;
}

/// h = log u; requires u > 0 everywhere.
template <int D>
std::vector<double> hopf_cole(const SHEGrid<D>& grid) {
  std::vector<double> h(grid.sites());
  const auto& u = grid.values();
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0)) fail(ErrorKind::positivity_loss, "Hopf-Cole needs u > 0; site " + std::to_string(i));
    h[i] = std::log(u[i]);
  }
  return h;
}

struct SheSnapshot {
  std::vector<double> u;
  std::vector<double> h;
  double time = 0.0;
  std::uint64_t seed = 0;
  /// Box side against 8 sqrt(t) + eps; the wrap diagnostic passes when the box is larger.
  double wrap_required = 0.0;
  bool wrap_ok = true;
};

/// Runs from the initial condition to time t with the given base noise.
template <int D>
SheSnapshot run_to(SHEGrid<D>& grid, double t, const InitialCondition<D>& ic, const NoiseField<D>& field,
                   bool with_log = true) {
  const double q = t / grid.params().dt;
  const std::int64_t steps = std::llround(q);
  require(steps >= 0 && std::fabs(q - static_cast<double>(steps)) <= 1e-9 * std::max(1.0, q),
          ErrorKind::invalid_configuration, "t is not a multiple of the lattice dt");
  grid.set_initial(ic);
  for (std::int64_t s = 0; s < steps; ++s) grid.advance(field);
  SheSnapshot snap;
  snap.u = grid.values();
  if (with_log) snap.h = hopf_cole(grid);
  snap.time = grid.time();
  snap.seed = field.seed();
  snap.wrap_required = 8.0 * std::sqrt(t) + grid.params().eps;
  snap.wrap_ok = grid.params().box >= snap.wrap_required;
  return snap;
}

struct SheComparison {
  MeanSE lattice_mean;
  MeanSE lattice_variance;
  MeanSE polymer_mean;
  MeanSE polymer_variance;
  bool lattice_mean_ok = false;
  bool polymer_mean_ok = false;
  bool variances_agree = false;
};

/// Polymer side of the distributional comparison: paths live in local units
/// (step `path_dt`, cells `path_cell`) on the time-reversed view of a base
/// field with slab eps^2 path_dt and cell eps path_cell.
struct PolymerSide {
  double path_dt = 0.0625;
  double path_cell = 0.25;
  std::int64_t paths = 16;
  std::size_t seeds = 1000;
  /// Start points per seed along a line, `spacing` apart (local units).
  std::size_t points = 8;
  double spacing = 3.0;
};

/// Lattice u_eps(t, x) against Z_{t/eps^2}(xi^(eps,t); x/eps) in law, for flat
/// initial data. Lattice statistics pool every site of each run (all sites are
/// identically distributed on the periodic box); polymer statistics pool the
/// start points of each seed. Variances use the known mean 1.
template <int D>
SheComparison she_vs_polymer(const SheParams& lat, double t, std::size_t lattice_runs, const PolymerSide& pol,
                             int workers = 1) {
  SheComparison out;
  {
    SHEGrid<D> proto(lat);
    std::vector<double> means(lattice_runs), vars(lattice_runs);
    parallel_for(lattice_runs, workers, [&](std::size_t r) {
      SHEGrid<D> grid(proto);
      const NoiseField<D> field = lattice_noise<D>(grid, stream_seed(lat.seed, tag::noise, r));
      const SheSnapshot snap = run_to<D>(grid, t, InitialCondition<D>::flat(), field, false);
      double m = 0.0, v = 0.0;
      for (double u : snap.u) {
        m += u;
        v += (u - 1.0) * (u - 1.0);
      }
      means[r] = m / static_cast<double>(snap.u.size());
      vars[r] = v / static_cast<double>(snap.u.size());
    });
    out.lattice_mean = mean_se(means);
    out.lattice_variance = mean_se(vars);
  }
  {
    ExperimentConfig cfg;
    cfg.dimension = D;
    cfg.beta = lat.beta;
    cfg.eps = lat.eps;
    cfg.dt = pol.path_dt;
    cfg.cell = pol.path_cell;
    cfg.horizon = t / (lat.eps * lat.eps);
    cfg.samples = pol.paths;
    cfg.workers = 1;
    std::vector<double> means(pol.seeds), vars(pol.seeds);
    parallel_for(pol.seeds, workers, [&](std::size_t b) {
      const NoiseField<D> base(stream_seed(lat.seed ^ 0x706F6CULL, tag::noise, b), lat.eps * lat.eps * pol.path_dt,
                               lat.eps * pol.path_cell);
      const NoiseView<D> view{&base, NoiseTransform<D>::reversal(lat.eps, t, zero_point<D>())};
      double m = 0.0, v = 0.0;
      for (std::size_t q = 0; q < pol.points; ++q) {
        ExperimentConfig c = cfg;
        c.seed = stream_seed(lat.seed, tag::paths, b * pol.points + q);
        PartitionRequest<D> req;
        req.start = axis_point<D>(pol.spacing * static_cast<double>(q));
        const PartitionEstimate e = partition_function<D>(c, view, req);
        m += e.value;
        v += e.pair_mean - 1.0;
      }
      means[b] = m / static_cast<double>(pol.points);
      vars[b] = v / static_cast<double>(pol.points);
    });
    out.polymer_mean = mean_se(means);
    out.polymer_variance = mean_se(vars);
  }
  out.lattice_mean_ok = std::fabs(out.lattice_mean.mean - 1.0) <= 3.0 * out.lattice_mean.se;
  out.polymer_mean_ok = std::fabs(out.polymer_mean.mean - 1.0) <= 3.0 * out.polymer_mean.se;
  out.variances_agree = agree_within(out.lattice_variance, out.polymer_variance, z95);
  return out;
}

}  // namespace kpzlab
