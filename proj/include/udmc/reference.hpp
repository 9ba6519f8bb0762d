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

#ifndef UDMC__REFERENCE_HPP_
#define UDMC__REFERENCE_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "udmc/common.hpp"
#include "udmc/spline.hpp"
#include "udmc/types.hpp"

namespace udmc
{

struct ReferenceOptions
{
  double v_floor{0.3};       ///< keeps the plan moving when far from the goal
  double accel_ramp{2.0};    ///< reference speed slew rate [m/s^2]
  double a_lat_max{3.5};     ///< lateral acceleration cap on curves
  double a_brake{2.5};       ///< comfortable braking toward the route end
  double stop_margin{2.0};   ///< distance to the end below which v may drop to 0
};

/// One tracking target along the prediction horizon.
struct ReferencePoint
{
  VehicleState x;
  double s{0.0};
};

/// Samples N+1 targets along the path starting at the ego projection.
///
/// The speed profile ramps from the current speed toward target_speed, is
/// capped on curvature so the lateral acceleration stays feasible, and
/// brakes to a stop at the route end. Curvature ahead of each sample is
/// previewed over the comfortable stopping distance so the profile slows
/// into a curve instead of at it. Headings are unwrapped around the current
/// heading so angle differences stay continuous in the cost.
inline std::vector<ReferencePoint> sample_reference(
  const Path2D & path, const VehicleState & ego, double target_speed, int horizon, double ts,
  const ReferenceOptions & opt = {})
{
  std::vector<ReferencePoint> out;
  out.reserve(horizon + 1);

  const double s_end = path.length();
  double s = path.project(Vec2(ego.px, ego.py));
  double v = std::max(ego.vx, 0.0);
  double prev_phi = ego.phi;

  const auto curve_allowance = [&](double from, double v_bound) {
    double allow = v_bound;
    const double reach = std::min(s_end, from + v_bound * v_bound / (2.0 * opt.a_brake) + 5.0);
    for (double sj = from;; sj += 1.0) {
      sj = std::min(sj, reach);
      const double kappa = std::abs(path.curvature(sj));
      if (kappa > 1e-9) {
        const double cap = std::sqrt(opt.a_lat_max / kappa);
        allow = std::min(allow, std::sqrt(cap * cap + 2.0 * opt.a_brake * (sj - from)));
      }
      if (sj >= reach) {
        break;
      }
    }
    return allow;
  };

  for (int k = 0; k <= horizon; ++k) {
    if (k > 0) {
      double v_next = std::min(target_speed, v + opt.accel_ramp * ts);
      v_next = curve_allowance(s, v_next);
      const double remaining = std::max(0.0, s_end - s);
      v_next = std::min(v_next, std::sqrt(2.0 * opt.a_brake * remaining));
      if (remaining > opt.stop_margin) {
        v_next = std::max(v_next, opt.v_floor);
      }
      v = v_next;
      s = std::min(s + v * ts, s_end);
    }

    const Pose2 pose = path.pose(s);
    ReferencePoint r;
    r.s = s;
    r.x.px = pose.p.x();
    r.x.py = pose.p.y();
    r.x.phi = prev_phi + wrap_angle(pose.heading - prev_phi);
    r.x.vx = v;
    r.x.vy = 0.0;
    r.x.omega = v * path.curvature(s);
    prev_phi = r.x.phi;
    out.push_back(r);
  }
  return out;
}

}  // namespace udmc

#endif  // UDMC__REFERENCE_HPP_
