#pragma once

// Small statistical helpers shared by the Monte Carlo modules. All reductions
// run sequentially over index-ordered inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "kpzlab/core/error.hpp"

namespace kpzlab {

inline constexpr double z95 = 1.959963984540054;

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;

  [[nodiscard]] double lo95() const { return mean - z95 * se; }
  [[nodiscard]] double hi95() const { return mean + z95 * se; }
};

/// Sample mean and standard error of the mean (two-pass).
inline MeanSE mean_se(std::span<const double> xs) {
  MeanSE r;
  r.n = xs.size();
  if (xs.empty()) return r;
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  return r;
}

/// Sample variance with the standard error of the variance estimator
/// (via the fourth central moment).
inline MeanSE variance_se(std::span<const double> xs) {
  MeanSE r;
  r.n = xs.size();
  if (xs.size() < 2) return r;
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d2 = (x - m) * (x - m);
    m2 += d2;
    m4 += d2 * d2;
  }
  r.mean = m2 / (n - 1.0);
  m2 /= n;
  m4 /= n;
  r.se = std::sqrt(std::max(0.0, (m4 - (n - 3.0) / (n - 1.0) * m2 * m2) / n));
  return r;
}

/// Two estimates agree when |a - b| is within `z` combined standard errors.
inline bool agree_within(const MeanSE& a, const MeanSE& b, double z) {
  return std::fabs(a.mean - b.mean) <= z * std::hypot(a.se, b.se);
}

/// Mean of exp(log_w) and its standard error, computed by log-sum-exp.
struct LogMean {
  double mean = 0.0;
  double se = 0.0;
  double log_mean = 0.0;
  std::size_t argmax = 0;
};

inline LogMean log_mean_exp(std::span<const double> log_w) {
  LogMean r;
  if (log_w.empty()) return r;
  const auto it = std::max_element(log_w.begin(), log_w.end());
  r.argmax = static_cast<std::size_t>(it - log_w.begin());
  const double shift = *it;
  const double n = static_cast<double>(log_w.size());
  double s = 0.0;
  for (double lw : log_w) s += std::exp(lw - shift);
  const double scaled_mean = s / n;
  double ss = 0.0;
  for (double lw : log_w) {
    const double d = std::exp(lw - shift) - scaled_mean;
    ss += d * d;
  }
  r.log_mean = shift + std::log(scaled_mean);
  if (r.log_mean > std::log(std::numeric_limits<double>::max()))
    fail(ErrorKind::numeric_overflow,
         "weight mean overflows; largest log-weight at sample " + std::to_string(r.argmax));
  r.mean = std::exp(r.log_mean);
  if (log_w.size() > 1) r.se = std::exp(shift) * std::sqrt(ss / (n - 1.0) / n);
  return r;
}

/// Unbiased estimate of (E w)^2 from i.i.d. draws: sum over ordered pairs i != j.
inline double pair_product_mean(std::span<const double> w) {
  const double n = static_cast<double>(w.size());
  if (w.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0, s2 = 0.0;
  for (double x : w) {
    s += x;
    s2 += x * x;
  }
  return (s * s - s2) / (n * (n - 1.0));
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = z95) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
  std::size_t n = 0;
};

/// Weighted least squares y = intercept + slope * x with weights 1/sigma^2.
/// Standard errors are the textbook ones for known sigmas.
inline LinearFit weighted_line_fit(std::span<const double> x, std::span<const double> y,
                                   std::span<const double> sigma) {
  require(x.size() == y.size() && x.size() == sigma.size(), ErrorKind::invalid_argument,
          "fit inputs differ in length");
  require(x.size() >= 2, ErrorKind::invalid_argument, "fit needs at least two points");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = 1.0 / (sigma[i] * sigma[i]);
    sw += w;
    sx += w * x[i];
    sy += w * y[i];
    sxx += w * x[i] * x[i];
    sxy += w * x[i] * y[i];
  }
  const double det = sw * sxx - sx * sx;
  require(det > 0.0, ErrorKind::invalid_argument, "degenerate abscissae in fit");
  LinearFit f;
  f.n = x.size();
  f.slope = (sw * sxy - sx * sy) / det;
  f.intercept = (sxx * sy - sx * sxy) / det;
  f.slope_se = std::sqrt(sw / det);
  f.intercept_se = std::sqrt(sxx / det);
  return f;
}

inline LinearFit line_fit(std::span<const double> x, std::span<const double> y) {
  std::vector<double> ones(x.size(), 1.0);
  LinearFit f = weighted_line_fit(x, y, ones);
  if (x.size() > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = y[i] - f.intercept - f.slope * x[i];
      rss += e * e;
    }
    const double s = std::sqrt(rss / static_cast<double>(x.size() - 2));
    f.slope_se *= s;
    f.intercept_se *= s;
  }
  return f;
}

}  // namespace kpzlab
