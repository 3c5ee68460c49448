#pragma once

// Feynman-Kac Monte Carlo for the normalized partition function
//   Z_T(x) = E_x exp( beta <xi, phi(W - .)> - c(W) ),
// with the exact discrete compensator c(W) = beta^2/2 * sum_cells vol * g^2,
// so every weight has conditional mean one given its path.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kpzlab/config.hpp"
#include "kpzlab/core/counter_rng.hpp"
#include "kpzlab/core/error.hpp"
#include "kpzlab/core/estimators.hpp"
#include "kpzlab/core/parallel.hpp"
#include "kpzlab/core/point.hpp"
#include "kpzlab/mollifier.hpp"
#include "kpzlab/noise.hpp"

namespace kpzlab {

/// Positions on the grid 0, dt, 2 dt, ..., steps * dt.
template <int D>
struct BrownianPath {
  double dt = 0.0;
  std::vector<Point<D>> pos;
  bool bridge = false;

  [[nodiscard]] std::size_t steps() const { return pos.empty() ? 0 : pos.size() - 1; }
  [[nodiscard]] double horizon() const { return dt * static_cast<double>(steps()); }
  [[nodiscard]] const Point<D>& start() const { return pos.front(); }
};

template <int D>
BrownianPath<D> sample_path(double dt, std::int64_t steps, const Point<D>& x, PathRng& rng) {
  require(dt > 0.0 && steps >= 0, ErrorKind::invalid_argument, "path needs dt > 0 and steps >= 0");
  BrownianPath<D> p;
  p.dt = dt;
  p.pos.resize(static_cast<std::size_t>(steps) + 1);
  p.pos[0] = x;
  const double sd = std::sqrt(dt);
  for (std::size_t i = 1; i < p.pos.size(); ++i)
    for (int c = 0; c < D; ++c) p.pos[i][c] = p.pos[i - 1][c] + sd * rng.normal();
  return p;
}

template <int D>
BrownianPath<D> sample_path(const ExperimentConfig& cfg, const Point<D>& x, PathRng& rng) {
  return sample_path<D>(cfg.dt, cfg.steps(), x, rng);
}

/// W_s = x + B_s - (s / T_b) (B_{T_b} - (y - x)) on the grid; W_{T_b} = y exactly.
template <int D>
BrownianPath<D> sample_bridge(double dt, std::int64_t steps, const Point<D>& x, const Point<D>& y, PathRng& rng) {
  require(steps >= 1, ErrorKind::invalid_argument, "bridge needs at least one step");
  BrownianPath<D> p = sample_path<D>(dt, steps, zero_point<D>(), rng);
  const Point<D> b_end = p.pos.back();
  const double n = static_cast<double>(steps);
  for (std::size_t i = 0; i < p.pos.size(); ++i) {
    const double f = static_cast<double>(i) / n;
    for (int c = 0; c < D; ++c) p.pos[i][c] = x[c] + p.pos[i][c] - f * (b_end[c] - (y[c] - x[c]));
  }
  p.pos.back() = y;
  p.bridge = true;
  return p;
}

template <int D>
BrownianPath<D> sample_bridge(const ExperimentConfig& cfg, const Point<D>& x, const Point<D>& y, double horizon,
                              PathRng& rng) {
  require(detail::is_multiple(horizon, cfg.dt), ErrorKind::invalid_configuration,
          "bridge horizon is not a multiple of dt");
  return sample_bridge<D>(cfg.dt, std::llround(horizon / cfg.dt), x, y, rng);
}

/// Noise part and variance part of one path's action:
///   action   = sum_cells sqrt(vol) g Z   (so G = beta * action)
///   variance = sum_cells vol g^2         (so c = beta^2 / 2 * variance)
struct ActionTerms {
  double action = 0.0;
  double variance = 0.0;
};

/// Evaluates path actions against a (possibly transformed) noise view. Path
/// step i sits at its left endpoint and covers `ratio` base slabs.
template <int D>
class ActionKernel {
 public:
  ActionKernel(const NoiseView<D>& view, double path_dt, const Mollifier<D>& phi = default_mollifier<D>())
      : view_(view), phi_(&phi), path_dt_(path_dt) {
    const NoiseField<D>& f = *view.field;
    const NoiseTransform<D>& tr = view.transform;
    check_alignment(f, tr);
    const double e = tr.scale();
    const double q = e * e * path_dt / f.slab();
    ratio_ = std::llround(q);
    require(ratio_ >= 1 && std::fabs(q - static_cast<double>(ratio_)) <= 1e-9 * q, ErrorKind::invalid_configuration,
            "path step " + std::to_string(path_dt) + " does not cover a whole number of noise slabs");
    const double origin = tr.base_time(0.0) / f.slab();
    origin_ = std::llround(origin);
    require(std::fabs(origin - static_cast<double>(origin_)) <= 1e-9 * std::max(1.0, std::fabs(origin)),
            ErrorKind::invalid_configuration, "time anchor is not on the slab grid");
    reversed_ = tr.time_direction() < 0;
    amp_ = tr.test_amplitude();
    radius_ = Mollifier<D>::support_radius * e;
    inv_e2_ = 1.0 / (e * e);
  }

  /// First base slab of path step i.
  [[nodiscard]] std::int64_t first_slab(std::size_t i) const {
    const auto s = static_cast<std::int64_t>(i) * ratio_;
    return reversed_ ? origin_ - s - ratio_ : origin_ + s;
  }

  [[nodiscard]] std::int64_t ratio() const { return ratio_; }
  [[nodiscard]] double path_dt() const { return path_dt_; }
  [[nodiscard]] const NoiseView<D>& view() const { return view_; }

  /// Sum over path steps [begin, end).
  ActionTerms evaluate(const BrownianPath<D>& path, bool with_noise, std::size_t begin = 0,
                       std::size_t end = std::numeric_limits<std::size_t>::max()) const {
    require(std::fabs(path.dt - path_dt_) <= 1e-12 * path_dt_, ErrorKind::invalid_configuration,
            "path grid does not match the noise grid");
    end = std::min(end, path.steps());
    ActionTerms t;
    std::vector<std::pair<Index<D>, double>> weights;
    for (std::size_t i = begin; i < end; ++i) step_terms(path.pos[i], i, with_noise, weights, t);
    return t;
  }

  /// Contribution of a single step with its path position at `w`.
  void step_terms(const Point<D>& w, std::size_t i, bool with_noise, std::vector<std::pair<Index<D>, double>>& weights,
                  ActionTerms& t) const {
    const NoiseField<D>& f = *view_.field;
    const Point<D> c = view_.transform.base_space(w);
    Index<D> lo, hi;
    for (int d = 0; d < D; ++d) detail::index_range(c[d] - radius_, c[d] + radius_, f.cell(), lo[d], hi[d]);
    weights.clear();
    double sum_g2 = 0.0;
    // Squared offsets per axis, in units of the local scale.
    std::array<std::array<double, 64>, D> sq;
    for (int d = 0; d < D; ++d) {
      require(hi[d] - lo[d] < 64, ErrorKind::invalid_configuration, "noise cells too small for the mollifier");
      for (std::int64_t jj = lo[d]; jj <= hi[d]; ++jj) {
        const double u = f.cell_center(jj) - c[d];
        sq[d][static_cast<std::size_t>(jj - lo[d])] = u * u * inv_e2_;
      }
    }
    constexpr double r2max = Mollifier<D>::support_radius * Mollifier<D>::support_radius;
    for_each_index<D>(lo, hi, [&](const Index<D>& j) {
      double d2 = 0.0;
      for (int d = 0; d < D; ++d) d2 += sq[d][static_cast<std::size_t>(j[d] - lo[d])];
      if (d2 >= r2max) return;
      const double g = amp_ * phi_->from_norm2(d2);
      if (g > 0.0) {
        weights.emplace_back(j, g);
        sum_g2 += g * g;
      }
    });
    t.variance += static_cast<double>(ratio_) * f.cell_volume() * sum_g2;
    if (!with_noise) return;
    const double root_vol = std::sqrt(f.cell_volume());
    const std::int64_t k0 = first_slab(i);
    double acc = 0.0;
    for (std::int64_t k = k0; k < k0 + ratio_; ++k)
      for (const auto& [j, g] : weights) acc += g * f.standard(k, j);
    t.action += root_vol * acc;
  }

 private:
  NoiseView<D> view_;
  const Mollifier<D>* phi_;
  double path_dt_;
  std::int64_t ratio_ = 1;
  std::int64_t origin_ = 0;
  bool reversed_ = false;
  double amp_ = 1.0;
  double radius_ = 0.5;
  double inv_e2_ = 1.0;
};

/// G = beta * sum vol * g * xi over the cells touched by the path.
template <int D>
double field_action(const BrownianPath<D>& path, const NoiseView<D>& view, double beta) {
  if (beta == 0.0) return 0.0;
  return beta * ActionKernel<D>(view, path.dt).evaluate(path, true).action;
}

/// c(W) = beta^2 / 2 * sum vol * g^2: half the conditional variance of field_action.
template <int D>
double discrete_compensator(const BrownianPath<D>& path, const NoiseView<D>& view, double beta) {
  if (beta == 0.0) return 0.0;
  return 0.5 * beta * beta * ActionKernel<D>(view, path.dt).evaluate(path, false).variance;
}

template <int D>
struct PartitionRequest {
  Point<D> start = zero_point<D>();
  /// Bridge endpoint at the horizon; free paths when empty.
  std::optional<Point<D>> bridge_end;
  std::uint64_t stream = tag::paths;
  bool keep_log_weights = false;
};

struct PartitionEstimate {
  double value = 1.0;
  double se = 0.0;
  std::int64_t samples = 0;
  /// Unbiased estimate of Z^2 for this noise: mean of w_i w_j over i != j.
  double pair_mean = 1.0;
  /// Mean of the per-path compensators and the continuum constant beta^2 T V(0) / 2.
  double mean_compensator = 0.0;
  double continuum_compensator = 0.0;
  std::vector<double> log_weights;
  ExperimentConfig config;
};

template <int D>
void check_dimension(const ExperimentConfig& cfg) {
  require(cfg.dimension == D, ErrorKind::invalid_dimension,
          "config dimension " + std::to_string(cfg.dimension) + " does not match the build dimension " +
              std::to_string(D));
}

/// Log-weight of sample i, shared by every partition-type estimator.
template <int D>
double log_weight(const ExperimentConfig& cfg, const ActionKernel<D>& kernel, const PartitionRequest<D>& req,
                  std::size_t i, double* compensator = nullptr) {
  PathRng rng(stream_seed(cfg.seed, req.stream, i));
  const BrownianPath<D> path = req.bridge_end ? sample_bridge<D>(cfg.dt, cfg.steps(), req.start, *req.bridge_end, rng)
                                              : sample_path<D>(cfg.dt, cfg.steps(), req.start, rng);
  const ActionTerms t = kernel.evaluate(path, true);
  const double c = 0.5 * cfg.beta * cfg.beta * t.variance;
  if (compensator) *compensator = c;
  return cfg.beta * t.action - c;
}

/// Z_hat = (1/M) sum exp(G_i - c_i), reduced in log space. Paths come from
/// stream_seed(cfg.seed, req.stream, i); the noise comes from `view`.
template <int D>
PartitionEstimate partition_function(const ExperimentConfig& cfg, const NoiseView<D>& view,
                                     const PartitionRequest<D>& req = {}) {
  check_dimension<D>(cfg);
  require(cfg.samples >= 2, ErrorKind::invalid_argument, "partition function needs M >= 2");
  require(detail::is_multiple(cfg.horizon, cfg.dt), ErrorKind::invalid_configuration,
          "horizon is not a multiple of dt");
  PartitionEstimate est;
  est.samples = cfg.samples;
  est.config = cfg;
  est.continuum_compensator = 0.5 * cfg.beta * cfg.beta * cfg.horizon * default_kernel<D>().at_origin();
  const auto m = static_cast<std::size_t>(cfg.samples);
  if (cfg.beta == 0.0) {
    if (req.keep_log_weights) est.log_weights.assign(m, 0.0);
    return est;
  }
  const ActionKernel<D> kernel(view, cfg.dt);
  std::vector<double> comp(m);
  std::vector<double> lw = parallel_map<double>(m, cfg.workers, [&](std::size_t i) {
    return log_weight<D>(cfg, kernel, req, i, &comp[i]);
  });
  const double cap = std::log(std::numeric_limits<double>::max());
  for (std::size_t i = 0; i < m; ++i)
    if (!(lw[i] < cap))
      fail(ErrorKind::numeric_overflow, "weight of sample " + std::to_string(i) + " overflows");
  const LogMean lm = log_mean_exp(lw);
  est.value = lm.mean;
  est.se = lm.se;
  std::vector<double> w(m);
  for (std::size_t i = 0; i < m; ++i) w[i] = std::exp(lw[i]);
  est.pair_mean = pair_product_mean(w);
  double cs = 0.0;
  for (double c : comp) cs += c;
  est.mean_compensator = cs / static_cast<double>(m);
  if (req.keep_log_weights) est.log_weights = std::move(lw);
  return est;
}

/// Log-weights of sample i at each checkpoint (in path steps, increasing),
/// accumulated along one path so that every horizon shares paths and noise.
template <int D>
std::vector<double> checkpoint_log_weights(const ExperimentConfig& cfg, const ActionKernel<D>& kernel,
                                           const PartitionRequest<D>& req, std::size_t i,
                                           const std::vector<std::int64_t>& checkpoints) {
  require(!checkpoints.empty(), ErrorKind::invalid_argument, "no checkpoints");
  PathRng rng(stream_seed(cfg.seed, req.stream, i));
  const std::int64_t last = checkpoints.back();
  const BrownianPath<D> path = sample_path<D>(cfg.dt, last, req.start, rng);
  std::vector<double> out;
  out.reserve(checkpoints.size());
  ActionTerms t;
  std::vector<std::pair<Index<D>, double>> scratch;
  std::size_t step = 0;
  for (std::int64_t cp : checkpoints) {
    for (; static_cast<std::int64_t>(step) < cp; ++step) kernel.step_terms(path.pos[step], step, true, scratch, t);
    out.push_back(cfg.beta * t.action - 0.5 * cfg.beta * cfg.beta * t.variance);
  }
  return out;
}

struct OverlapEstimate {
  /// Per-path integral delta * sum_k V(sqrt2 W_k), k = 0 .. N-1.
  MeanSE integral;
  /// exp(beta^2 * integral), and exp(...) - 1 computed with expm1.
  MeanSE moment;
  MeanSE excess;
  /// Share of the occupation of the interaction range that falls in the last
  /// tenth of the horizon, pooled over paths.
  double tail_fraction = 0.0;
  bool tail_ok = true;
  std::int64_t samples = 0;
};

namespace detail {

template <int D>
OverlapEstimate finish_overlap(const std::vector<double>& integrals, double beta, double occ_tail, double occ_total,
                               std::int64_t samples) {
  OverlapEstimate r;
  std::vector<double> mom(integrals.size()), exc(integrals.size());
  for (std::size_t i = 0; i < integrals.size(); ++i) {
    exc[i] = std::expm1(beta * beta * integrals[i]);
    mom[i] = 1.0 + exc[i];
  }
  r.integral = mean_se(integrals);
  r.moment = mean_se(mom);
  r.excess = mean_se(exc);
  r.tail_fraction = occ_total > 0.0 ? occ_tail / occ_total : 0.0;
  r.tail_ok = r.tail_fraction < 0.01;
  r.samples = samples;
  return r;
}

}  // namespace detail

/// Single-path form of the two-replica overlap: paths start at z and the
/// integrand is V(sqrt2 W_s). Uses cfg.dt, cfg.samples, cfg.seed, cfg.beta.
template <int D>
OverlapEstimate overlap_functional(const ExperimentConfig& cfg, const CovarianceKernel<D>& v, const Point<D>& z,
                                   double horizon, std::uint64_t stream = tag::pairs) {
  check_dimension<D>(cfg);
  const std::int64_t n = std::llround(horizon / cfg.dt);
  require(n >= 1 && detail::is_multiple(horizon, cfg.dt), ErrorKind::invalid_configuration,
          "overlap horizon is not a multiple of dt");
  const auto m = static_cast<std::size_t>(cfg.samples);
  const std::int64_t tail_start = n - n / 10;
  std::vector<double> integrals(m), tail(m), total(m);
  parallel_for(m, cfg.workers, [&](std::size_t i) {
    PathRng rng(stream_seed(cfg.seed, stream, i));
    Point<D> w = z;
    const double sd = std::sqrt(cfg.dt);
    double acc = 0.0, occ = 0.0, occ_tail = 0.0;
    for (std::int64_t k = 0; k < n; ++k) {
      const double r = std::sqrt(2.0 * norm2<D>(w));
      if (r < 1.0) {
        acc += v.radial(r);
        occ += 1.0;
        if (k >= tail_start) occ_tail += 1.0;
      }
      for (int c = 0; c < D; ++c) w[c] += sd * rng.normal();
    }
    integrals[i] = cfg.dt * acc;
    tail[i] = occ_tail;
    total[i] = occ;
  });
  double st = 0.0, so = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    st += tail[i];
    so += total[i];
  }
  return detail::finish_overlap<D>(integrals, cfg.beta, st, so, cfg.samples);
}

/// Two independent paths from x1 and x2 with the integrand V(W1 - W2): the
/// second-moment oracle E[Z(x1) Z(x2)] of the continuum polymer.
template <int D>
OverlapEstimate paired_overlap(const ExperimentConfig& cfg, const CovarianceKernel<D>& v, const Point<D>& x1,
                               const Point<D>& x2, double horizon, std::uint64_t stream = tag::pairs) {
  check_dimension<D>(cfg);
  const std::int64_t n = std::llround(horizon / cfg.dt);
  require(n >= 1 && detail::is_multiple(horizon, cfg.dt), ErrorKind::invalid_configuration,
          "overlap horizon is not a multiple of dt");
  const auto m = static_cast<std::size_t>(cfg.samples);
  const std::int64_t tail_start = n - n / 10;
  std::vector<double> integrals(m), tail(m), total(m);
  parallel_for(m, cfg.workers, [&](std::size_t i) {
    PathRng rng(stream_seed(cfg.seed, stream, i));
    Point<D> a = x1, b = x2;
    const double sd = std::sqrt(cfg.dt);
    double acc = 0.0, occ = 0.0, occ_tail = 0.0;
    for (std::int64_t k = 0; k < n; ++k) {
      const double r = norm<D>(a - b);
      if (r < 1.0) {
        acc += v.radial(r);
        occ += 1.0;
        if (k >= tail_start) occ_tail += 1.0;
      }
      for (int c = 0; c < D; ++c) a[c] += sd * rng.normal();
      for (int c = 0; c < D; ++c) b[c] += sd * rng.normal();
    }
    integrals[i] = cfg.dt * acc;
    tail[i] = occ_tail;
    total[i] = occ;
  });
  double st = 0.0, so = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    st += tail[i];
    so += total[i];
  }
  return detail::finish_overlap<D>(integrals, cfg.beta, st, so, cfg.samples);
}

/// E_x int_0^inf V(sqrt2 W_s) ds at |x| = r, from the Green kernel of (1/2) Laplacian,
/// g(x) = Gamma(D/2 - 1) / (2 pi^{D/2}) |x|^{2-D}, and Newton's shell theorem.
template <int D>
double green_potential(const CovarianceKernel<D>& v, double r) {
  require(D >= 3, ErrorKind::invalid_dimension, "Green kernel diverges for d < 3");
  const double cg = std::tgamma(0.5 * D - 1.0) / (2.0 * std::pow(pi, 0.5 * D));
  const double area = unit_sphere_area(D);
  const double reach = 1.0 / std::sqrt(2.0);
  auto f = [&](double rho) { return v.radial(std::sqrt(2.0) * rho); };
  const double inner = r > 0.0 ? detail::integrate([&](double rho) { return std::pow(rho, D - 1) * f(rho); }, 0.0,
                                                   std::min(r, reach), 1e-12)
                               : 0.0;
  const double outer = detail::integrate([&](double rho) { return rho * f(rho); },
                                         std::min(r, reach), reach, 1e-12);
  const double near = r > 0.0 ? std::pow(r, 2 - D) * inner : 0.0;
  return cg * area * (near + outer);
}

struct KhasminskiiBound {
  double green_at_origin = 0.0;
  double beta = 0.0;
};

/// beta_K = (sup_x E_x int V(sqrt2 W))^{-1/2}; the sup sits at x = 0.
template <int D>
KhasminskiiBound khasminskii_bound(const CovarianceKernel<D>& v) {
  require(D >= 3, ErrorKind::invalid_dimension, "Khas'minskii bound needs d >= 3");
  KhasminskiiBound b;
  b.green_at_origin = green_potential<D>(v, 0.0);
  b.beta = 1.0 / std::sqrt(b.green_at_origin);
  return b;
}

}  // namespace kpzlab
