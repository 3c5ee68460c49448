#pragma once

// Deterministic kernels: the bump mollifier phi, its self-convolution
// V = phi * phi (tabulated radially), the Gaussian heat kernel and the
// noiseless heat semigroup.

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kpzlab/core/error.hpp"
#include "kpzlab/core/point.hpp"

namespace kpzlab {

inline constexpr double pi = 3.14159265358979323846;

namespace detail {

inline double bump_profile(double r) {
  const double s = 1.0 - 4.0 * r * r;
  return s > 0.0 ? std::exp(-1.0 / s) : 0.0;
}

template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-12, unsigned depth = 12) {
  if (!(b > a)) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, depth, tol);
}

}  // namespace detail

/// phi(x) = c_norm * exp(-1 / (1 - 4|x|^2)) on |x| < 1/2, zero outside.
template <int D>
class Mollifier {
  static_assert(D >= 1);

 public:
  static constexpr double support_radius = 0.5;
  static constexpr int profile_id = 1;

  Mollifier() {
    const double area = unit_sphere_area(D);
    const double mass = detail::integrate(
        [&](double r) { return area * std::pow(r, D - 1) * detail::bump_profile(r); }, 0.0, support_radius, 1e-14);
    c_norm_ = 1.0 / mass;
    double lip = 0.0;
    constexpr int samples = 200000;
    for (int i = 0; i < samples; ++i) {
      const double r = support_radius * i / samples;
      const double s = 1.0 - 4.0 * r * r;
      lip = std::max(lip, c_norm_ * std::exp(-1.0 / s) * 8.0 * r / (s * s));
    }
    lipschitz_ = lip * 1.001;
  }

  [[nodiscard]] double radial(double r) const { return c_norm_ * detail::bump_profile(r); }

  /// phi evaluated from |x|^2; avoids a square root in inner loops.
  [[nodiscard]] double from_norm2(double r2) const {
    const double s = 1.0 - 4.0 * r2;
    return s > 0.0 ? c_norm_ * std::exp(-1.0 / s) : 0.0;
  }

  [[nodiscard]] double operator()(const Point<D>& x) const { return from_norm2(norm2<D>(x)); }

  [[nodiscard]] double peak() const { return c_norm_ * std::exp(-1.0); }
  [[nodiscard]] double norm_constant() const { return c_norm_; }
  /// Upper bound on |grad phi|.
  [[nodiscard]] double lipschitz() const { return lipschitz_; }

  /// Radial quadrature of phi over R^D.
  [[nodiscard]] double mass() const {
    const double area = unit_sphere_area(D);
    return detail::integrate([&](double r) { return area * std::pow(r, D - 1) * radial(r); }, 0.0,
                             support_radius, 1e-14);
  }

 private:
  double c_norm_ = 1.0;
  double lipschitz_ = 0.0;
};

/// Shared instance; construction runs a quadrature.
template <int D>
const Mollifier<D>& default_mollifier() {
  static const Mollifier<D> instance;
  return instance;
}

/// V = phi * phi tabulated on r in [0, 1] with linear interpolation.
template <int D>
class CovarianceKernel {
 public:
  static constexpr double support_radius = 1.0;

  explicit CovarianceKernel(const Mollifier<D>& phi, double dr = 1e-3) : dr_(dr) {
    require(dr > 0.0 && dr <= 0.1, ErrorKind::invalid_argument, "radial step must lie in (0, 0.1]");
    const auto n = static_cast<std::size_t>(std::llround(1.0 / dr));
    require(std::fabs(n * dr - 1.0) < 1e-12, ErrorKind::invalid_argument, "radial step must divide 1");
    table_.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) table_[i] = self_convolution(phi, i * dr);
    table_[n] = 0.0;
    finish();
  }

  /// Rebuilds a kernel from a stored radial table.
  CovarianceKernel(std::vector<double> table, double dr) : dr_(dr), table_(std::move(table)) {
    require(table_.size() >= 2, ErrorKind::invalid_input, "radial table too short");
    finish();
  }

  [[nodiscard]] double radial(double r) const {
    if (r >= support_radius) return 0.0;
    const double u = r / dr_;
    const auto i = static_cast<std::size_t>(u);
    const double f = u - static_cast<double>(i);
    return table_[i] + f * (table_[i + 1] - table_[i]);
  }

  [[nodiscard]] double operator()(const Point<D>& x) const { return radial(norm<D>(x)); }

  [[nodiscard]] double at_origin() const { return table_.front(); }
  [[nodiscard]] double step() const { return dr_; }
  [[nodiscard]] double lipschitz() const { return lipschitz_; }
  [[nodiscard]] const std::vector<double>& table() const { return table_; }

  /// Exact radial convolution of phi with itself at |x| = r, by nested quadrature.
  static double self_convolution(const Mollifier<D>& phi, double r) {
    static_assert(D >= 2, "radial convolution needs D >= 2");
    const double half = Mollifier<D>::support_radius;
    if (r >= 2.0 * half) return 0.0;
    const double ring = unit_sphere_area(D - 1);
    auto outer = [&](double rho) {
      if (rho <= 0.0) return 0.0;
      double inner;
      if (r == 0.0) {
        inner = phi.radial(rho) * unit_sphere_area(D) / ring;
      } else {
        const double c = (r * r + rho * rho - half * half) / (2.0 * r * rho);
        if (c >= 1.0) return 0.0;
        const double theta_max = c <= -1.0 ? pi : std::acos(c);
        inner = detail::integrate(
            [&](double th) {
              const double d2 = r * r + rho * rho - 2.0 * r * rho * std::cos(th);
              return std::pow(std::sin(th), D - 2) * phi.from_norm2(std::max(d2, 0.0));
            },
            0.0, theta_max, 1e-11, 5);
      }
      return ring * std::pow(rho, D - 1) * phi.radial(rho) * inner;
    };
    return detail::integrate(outer, std::max(0.0, r - half), half, 1e-11, 5);
  }

  /// Flat binary cache: magic, D, dr, profile id, count, values.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::invalid_input, "cannot write " + path);
    const std::uint32_t magic = 0x5650414BU, dim = D, prof = Mollifier<D>::profile_id;
    const std::uint64_t count = table_.size();
    out.write(reinterpret_cast<const char*>(&magic), sizeof magic);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    out.write(reinterpret_cast<const char*>(&dr_), sizeof dr_);
    out.write(reinterpret_cast<const char*>(&prof), sizeof prof);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(table_.data()), static_cast<std::streamsize>(count * sizeof(double)));
  }

  static CovarianceKernel load(const std::string& path, double expected_dr) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::invalid_input, "cannot read " + path);
    std::uint32_t magic = 0, dim = 0, prof = 0;
    std::uint64_t count = 0;
    double dr = 0.0;
    in.read(reinterpret_cast<char*>(&magic), sizeof magic);
    in.read(reinterpret_cast<char*>(&dim), sizeof dim);
    in.read(reinterpret_cast<char*>(&dr), sizeof dr);
    in.read(reinterpret_cast<char*>(&prof), sizeof prof);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    require(in && magic == 0x5650414BU, ErrorKind::invalid_input, "not a kernel cache: " + path);
    require(dim == D && dr == expected_dr && prof == static_cast<std::uint32_t>(Mollifier<D>::profile_id),
            ErrorKind::invalid_input, "kernel cache key mismatch: " + path);
    std::vector<double> table(count);
    in.read(reinterpret_cast<char*>(table.data()), static_cast<std::streamsize>(count * sizeof(double)));
    require(static_cast<bool>(in), ErrorKind::invalid_input, "truncated kernel cache: " + path);
    return CovarianceKernel(std::move(table), dr);
  }

 private:
  void finish() {
    lipschitz_ = 0.0;
    for (std::size_t i = 0; i + 1 < table_.size(); ++i)
      lipschitz_ = std::max(lipschitz_, std::fabs(table_[i + 1] - table_[i]) / dr_);
  }

  double dr_;
  std::vector<double> table_;
  double lipschitz_ = 0.0;
};

template <int D>
const CovarianceKernel<D>& default_kernel() {
  static const CovarianceKernel<D> instance(default_mollifier<D>());
  return instance;
}

/// Gaussian heat kernel rho(t, x) = (2 pi t)^{-D/2} exp(-|x|^2 / (2t)).
template <int D>
double heat_kernel(double t, const Point<D>& x) {
  require(t > 0.0, ErrorKind::invalid_argument, "heat kernel needs t > 0");
  return std::pow(2.0 * pi * t, -0.5 * D) * std::exp(-norm2<D>(x) / (2.0 * t));
}

/// Initial datum of the noiseless heat equation, u0 = exp(h0).
template <int D>
struct HeatState {
  std::function<double(const Point<D>&)> initial;
  double time = 0.0;
};

/// u_bar(t, x) = E[u0(x + sqrt(t) Z)], nested adaptive Gauss-Kronrod over a
/// standard Gaussian truncated at +-8.5 per axis.
template <int D>
double heat_solve(const HeatState<D>& state, double t, const Point<D>& x, double tol = 1e-9) {
  require(t > 0.0, ErrorKind::invalid_argument, "heat_solve needs t > 0");
  require(static_cast<bool>(state.initial), ErrorKind::invalid_input, "missing initial profile");
  constexpr double window = 8.5;
  const double sd = std::sqrt(t);
  const double gauss_norm = 1.0 / std::sqrt(2.0 * pi);
  Point<D> y = x;
  std::function<double(int)> level = [&](int axis) -> double {
    auto integrand = [&](double z) {
      y[axis] = x[axis] + sd * z;
      double v;
      if (axis + 1 == D) {
        v = state.initial(y);
        if (!std::isfinite(v))
          fail(ErrorKind::invalid_input, "initial profile is unbounded on the quadrature window");
      } else {
        v = level(axis + 1);
      }
      return gauss_norm * std::exp(-0.5 * z * z) * v;
    };
    return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(integrand, -window, window, 6, tol);
  };
  return level(0);
}

}  // namespace kpzlab
