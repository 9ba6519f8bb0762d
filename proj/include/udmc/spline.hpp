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

#ifndef UDMC__SPLINE_HPP_
#define UDMC__SPLINE_HPP_

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "udmc/common.hpp"

namespace udmc
{

/// Thrown when spline knots are not strictly increasing or are too few.
class DegenerateKnots : public std::runtime_error
{
public:
  explicit DegenerateKnots(const std::string & what) : std::runtime_error(what) {}
};

/// Natural cubic spline through (t_i, y_i) with strictly increasing knots.
///
/// On [t_i, t_{i+1}] the segment is
///   S_i(t) = a_i + b_i dt + c_i dt^2 + d_i dt^3,  dt = t - t_i,
/// with zero second derivative at both ends. Outside the knot range the
/// spline continues linearly with the boundary slope.
class CubicSpline1D
{
public:
  CubicSpline1D() = default;

  static CubicSpline1D fit(const std::vector<double> & t, const std::vector<double> & y)
  {
    const int n = static_cast<int>(t.size());
    if (n < 2 || y.size() != t.size()) {
      throw DegenerateKnots("cubic spline: need at least two knots");
    }
    for (int i = 0; i + 1 < n; ++i) {
      if (!(t[i + 1] > t[i])) {
        throw DegenerateKnots("cubic spline: knots must be strictly increasing");
      }
    }

    CubicSpline1D s;
    s.t_ = t;
    s.a_ = y;
    s.b_.assign(n - 1, 0.0);
    s.c_.assign(n, 0.0);
    s.d_.assign(n - 1, 0.0);

    if (n == 2) {
      s.b_[0] = (y[1] - y[0]) / (t[1] - t[0]);
      s.c_.assign(n, 0.0);
      return s;
    }

    std::vector<double> h(n - 1);
    for (int i = 0; i + 1 < n; ++i) {
      h[i] = t[i + 1] - t[i];
    }

    // Thomas solve of the natural spline tridiagonal system for c_1..c_{n-2}.
    std::vector<double> diag(n, 0.0), upper(n, 0.0), rhs(n, 0.0);
    for (int i = 1; i + 1 < n; ++i) {
      diag[i] = 2.0 * (h[i - 1] + h[i]);
      upper[i] = h[i];
      rhs[i] = 3.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    for (int i = 2; i + 1 < n; ++i) {
      const double w = h[i - 1] / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    for (int i = n - 2; i >= 1; --i) {
      s.c_[i] = (rhs[i] - upper[i] * s.c_[i + 1]) / diag[i];
    }

    for (int i = 0; i + 1 < n; ++i) {
      s.b_[i] = (y[i + 1] - y[i]) / h[i] - h[i] * (2.0 * s.c_[i] + s.c_[i + 1]) / 3.0;
      s.d_[i] = (s.c_[i + 1] - s.c_[i]) / (3.0 * h[i]);
    }
    return s;
  }

  double eval(double t) const
  {
    if (t <= t_.front()) {
      return a_.front() + b_.front() * (t - t_.front());
    }
    const int n = static_cast<int>(t_.size());
    if (t >= t_.back()) {
      const double end_slope = deriv_at_knot(n - 1);
      return a_.back() + end_slope * (t - t_.back());
    }
    const int i = interval(t);
    const double dt = t - t_[i];
    return a_[i] + dt * (b_[i] + dt * (c_[i] + dt * d_[i]));
  }

  double deriv(double t) const
  {
    if (t <= t_.front()) {
      return b_.front();
    }
    const int n = static_cast<int>(t_.size());
    if (t >= t_.back()) {
      return deriv_at_knot(n - 1);
    }
    const int i = interval(t);
    const double dt = t - t_[i];
    return b_[i] + dt * (2.0 * c_[i] + 3.0 * dt * d_[i]);
  }

  double deriv2(double t) const
  {
    if (t <= t_.front() || t >= t_.back()) {
      return 0.0;
    }
    const int i = interval(t);
    const double dt = t - t_[i];
    return 2.0 * c_[i] + 6.0 * dt * d_[i];
  }

  int num_intervals() const { return static_cast<int>(t_.size()) - 1; }
  double coef_a(int i) const { return a_[i]; }
  double coef_b(int i) const { return b_[i]; }
  double coef_c(int i) const { return c_[i]; }
  double coef_d(int i) const { return d_[i]; }
  const std::vector<double> & knots() const { return t_; }

private:
  int interval(double t) const
  {
    const auto it = std::upper_bound(t_.begin(), t_.end(), t);
    int i = static_cast<int>(it - t_.begin()) - 1;
    return std::clamp(i, 0, static_cast<int>(t_.size()) - 2);
  }

  double deriv_at_knot(int k) const
  {
    const int i = k - 1;
    const double dt = t_[k] - t_[i];
    return b_[i] + dt * (2.0 * c_[i] + 3.0 * dt * d_[i]);
  }

  std::vector<double> t_, a_, b_, c_, d_;
};

/// Planar pose.
struct Pose2
{
  Vec2 p{0.0, 0.0};
  double heading{0.0};
};

/// Smooth planar path built from two cubic splines over cumulative chord
/// length, which closely approximates arc length for densely sampled input.
class Path2D
{
public:
  Path2D() = default;

  static Path2D through(const std::vector<Vec2> & pts, double dedupe_eps = 1e-6)
  {
    std::vector<Vec2> q;
    q.reserve(pts.size());
    for (const auto & p : pts) {
      if (q.empty() || (p - q.back()).norm() > dedupe_eps) {
        q.push_back(p);
      }
    }
    if (q.size() < 2) {
      throw DegenerateKnots("path: need at least two distinct points");
    }
    std::vector<double> s(q.size(), 0.0);
    std::vector<double> xs(q.size()), ys(q.size());
    for (size_t i = 0; i < q.size(); ++i) {
      if (i > 0) {
        s[i] = s[i - 1] + (q[i] - q[i - 1]).norm();
      }
      xs[i] = q[i].x();
      ys[i] = q[i].y();
    }
    Path2D path;
    path.x_ = CubicSpline1D::fit(s, xs);
    path.y_ = CubicSpline1D::fit(s, ys);
    path.length_ = s.back();
    return path;
  }

  double length() const { return length_; }

  Vec2 point(double s) const { return Vec2(x_.eval(s), y_.eval(s)); }

  Pose2 pose(double s) const
  {
    Pose2 out;
    out.p = point(s);
    out.heading = std::atan2(y_.deriv(s), x_.deriv(s));
    return out;
  }

  double curvature(double s) const
  {
    const double dx = x_.deriv(s), dy = y_.deriv(s);
    const double ddx = x_.deriv2(s), ddy = y_.deriv2(s);
    const double speed2 = dx * dx + dy * dy;
    if (speed2 < 1e-12) {
      return 0.0;
    }
    return (dx * ddy - dy * ddx) / std::pow(speed2, 1.5);
  }

  /// Arc position of the point on the path closest to p. A non-negative hint
  /// restricts the search to a window around it.
  double project(const Vec2 & p, double hint = -1.0) const
  {
    double lo = 0.0, hi = length_, coarse = 0.5;
    if (hint >= 0.0) {
      lo = std::max(0.0, hint - 10.0);
      hi = std::min(length_, hint + 15.0);
      coarse = 0.25;
    }
    double best_s = lo;
    double best_d = (point(lo) - p).squaredNorm();
    for (double s = lo + coarse; s <= hi + 1e-9; s += coarse) {
      const double ss = std::min(s, hi);
      const double d = (point(ss) - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best_s = ss;
      }
    }
    // Newton refinement on g(s) = (P(s) - p) . P'(s).
    double s = best_s;
    for (int it = 0; it < 4; ++it) {
      const double dx = x_.deriv(s), dy = y_.deriv(s);
      const double rx = x_.eval(s) - p.x(), ry = y_.eval(s) - p.y();
      const double g = rx * dx + ry * dy;
      const double dg = dx * dx + dy * dy + rx * x_.deriv2(s) + ry * y_.deriv2(s);
      if (std::abs(dg) < 1e-12) {
        break;
      }
      s = std::clamp(s - g / dg, std::max(0.0, best_s - coarse), std::min(length_, best_s + coarse));
    }
    return ((point(s) - p).squaredNorm() <= best_d) ? s : best_s;
  }

  /// Signed lateral offset of p relative to the path at its projection;
  /// positive to the left of the travel direction.
  double lateral_offset(const Vec2 & p, double s) const
  {
    const Pose2 q = pose(s);
    const Vec2 d = p - q.p;
    return -std::sin(q.heading) * d.x() + std::cos(q.heading) * d.y();
  }

  const CubicSpline1D & x_spline() const { return x_; }
  const CubicSpline1D & y_spline() const { return y_; }

private:
  CubicSpline1D x_, y_;
  double length_{0.0};
};

}  // namespace udmc

#endif  // UDMC__SPLINE_HPP_
