#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace kpzlab {

template <int D>
using Point = std::array<double, D>;

template <int D>
using Index = std::array<std::int64_t, D>;

template <int D>
constexpr Point<D> zero_point() {
  Point<D> p{};
  p.fill(0.0);
  return p;
}

/// e_1 scaled by `length`.
template <int D>
constexpr Point<D> axis_point(double length) {
  Point<D> p = zero_point<D>();
  p[0] = length;
  return p;
}

template <int D>
inline double norm2(const Point<D>& x) {
  double s = 0.0;
  for (int i = 0; i < D; ++i) s += x[i] * x[i];
  return s;
}

template <int D>
inline double norm(const Point<D>& x) {
  return std::sqrt(norm2<D>(x));
}

template <std::size_t N>
inline std::array<double, N> operator+(std::array<double, N> a, const std::array<double, N>& b) {
  for (std::size_t i = 0; i < N; ++i) a[i] += b[i];
  return a;
}

template <std::size_t N>
inline std::array<double, N> operator-(std::array<double, N> a, const std::array<double, N>& b) {
  for (std::size_t i = 0; i < N; ++i) a[i] -= b[i];
  return a;
}

template <std::size_t N>
inline std::array<double, N> operator*(double s, std::array<double, N> a) {
  for (std::size_t i = 0; i < N; ++i) a[i] *= s;
  return a;
}

/// Surface area of the unit sphere S^{n-1} in R^n.
inline double unit_sphere_area(int n) {
  constexpr double pi = 3.14159265358979323846;
  return 2.0 * std::pow(pi, 0.5 * n) / std::tgamma(0.5 * n);
}

/// Visits every multi-index in the box [lo, hi] (inclusive) in lexicographic order.
template <int D, class Fn>
inline void for_each_index(const Index<D>& lo, const Index<D>& hi, Fn&& fn) {
  for (int i = 0; i < D; ++i)
    if (hi[i] < lo[i]) return;
  Index<D> j = lo;
  while (true) {
    fn(static_cast<const Index<D>&>(j));
    int axis = D - 1;
    while (axis >= 0) {
      if (++j[axis] <= hi[axis]) break;
      j[axis] = lo[axis];
      --axis;
    }
    if (axis < 0) return;
  }
}

}  // namespace kpzlab
