// Copyright 2026 The udmc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef UDMC__DUAL_HPP_
#define UDMC__DUAL_HPP_

#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

namespace udmc
{

/// Forward-mode dual number carrying the value and N partial derivatives.
///
/// The model step, the potential fields and the stage cost are templated on
/// the scalar type, so evaluating them on Dual<N> yields exact first
/// derivatives in one sweep.
template <int N>
struct Dual
{
  double v{0.0};
  Eigen::Matrix<double, N, 1> g{Eigen::Matrix<double, N, 1>::Zero()};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(runtime/explicit): scalar promotion
  Dual(double value, const Eigen::Matrix<double, N, 1> & grad) : v(value), g(grad) {}

  /// Returns a dual seeded as the i-th independent variable.
  static Dual seed(double value, int i)
  {
    Dual d(value);
    d.g(i) = 1.0;
    return d;
  }

  Dual operator-() const { return Dual(-v, -g); }

  Dual & operator+=(const Dual & o)
  {
    v += o.v;
    g += o.g;
    return *this;
  }
  Dual & operator-=(const Dual & o)
  {
    v -= o.v;
    g -= o.g;
    return *this;
  }
  Dual & operator*=(const Dual & o)
  {
    g = g * o.v + o.g * v;
    v *= o.v;
    return *this;
  }
  Dual & operator/=(const Dual & o)
  {
    v /= o.v;
    g = (g - v * o.g) / o.v;
    return *this;
  }
};

template <int N>
inline Dual<N> operator+(Dual<N> a, const Dual<N> & b)
{
  a += b;
  return a;
}
template <int N>
inline Dual<N> operator-(Dual<N> a, const Dual<N> & b)
{
  a -= b;
  return a;
}
template <int N>
inline Dual<N> operator*(Dual<N> a, const Dual<N> & b)
{
  a *= b;
  return a;
}
template <int N>
inline Dual<N> operator/(Dual<N> a, const Dual<N> & b)
{
  a /= b;
  return a;
}

template <int N>
inline Dual<N> operator+(double a, Dual<N> b)
{
  b.v += a;
  return b;
}
template <int N>
inline Dual<N> operator+(Dual<N> a, double b)
{
  a.v += b;
  return a;
}
template <int N>
inline Dual<N> operator-(double a, const Dual<N> & b)
{
  return Dual<N>(a - b.v, -b.g);
}
template <int N>
inline Dual<N> operator-(Dual<N> a, double b)
{
  a.v -= b;
  return a;
}
template <int N>
inline Dual<N> operator*(double a, Dual<N> b)
{
  b.v *= a;
  b.g *= a;
  return b;
}
template <int N>
inline Dual<N> operator*(Dual<N> a, double b)
{
  a.v *= b;
  a.g *= b;
  return a;
}
template <int N>
inline Dual<N> operator/(double a, const Dual<N> & b)
{
  const double val = a / b.v;
  return Dual<N>(val, -val / b.v * b.g);
}
template <int N>
inline Dual<N> operator/(Dual<N> a, double b)
{
  a.v /= b;
  a.g /= b;
  return a;
}

template <int N>
inline bool operator<(const Dual<N> & a, const Dual<N> & b)
{
  return a.v < b.v;
}
template <int N>
inline bool operator>(const Dual<N> & a, const Dual<N> & b)
{
  return a.v > b.v;
}
template <int N>
inline bool operator<=(const Dual<N> & a, const Dual<N> & b)
{
  return a.v <= b.v;
}
template <int N>
inline bool operator>=(const Dual<N> & a, const Dual<N> & b)
{
  return a.v >= b.v;
}
template <int N>
inline bool operator<(const Dual<N> & a, double b)
{
  return a.v < b;
}
template <int N>
inline bool operator>(const Dual<N> & a, double b)
{
  return a.v > b;
}
template <int N>
inline bool operator<=(const Dual<N> & a, double b)
{
  return a.v <= b;
}
template <int N>
inline bool operator>=(const Dual<N> & a, double b)
{
  return a.v >= b;
}

template <int N>
inline Dual<N> sin(const Dual<N> & a)
{
  return Dual<N>(std::sin(a.v), std::cos(a.v) * a.g);
}
template <int N>
inline Dual<N> cos(const Dual<N> & a)
{
  return Dual<N>(std::cos(a.v), -std::sin(a.v) * a.g);
}
template <int N>
inline Dual<N> exp(const Dual<N> & a)
{
  const double e = std::exp(a.v);
  return Dual<N>(e, e * a.g);
}
template <int N>
inline Dual<N> sqrt(const Dual<N> & a)
{
  const double s = std::sqrt(a.v);
  return Dual<N>(s, 0.5 / s * a.g);
}
/// Subgradient at zero follows the non-negative branch.
template <int N>
inline Dual<N> abs(const Dual<N> & a)
{
  return a.v >= 0.0 ? a : -a;
}
/// Power with a constant exponent; requires a positive base.
template <int N>
inline Dual<N> pow(const Dual<N> & a, double p)
{
  const double val = std::pow(a.v, p);
  return Dual<N>(val, p * std::pow(a.v, p - 1.0) * a.g);
}

/// Extracts the plain value from either a double or a dual scalar.
inline double value_of(double x)
{
  return x;
}
template <int N>
inline double value_of(const Dual<N> & x)
{
  return x.v;
}

using std::cos;
using std::exp;
using std::pow;
using std::sin;
using std::sqrt;

}  // namespace udmc

#endif  // UDMC__DUAL_HPP_
