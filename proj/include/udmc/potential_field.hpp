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

#ifndef UDMC__POTENTIAL_FIELD_HPP_
#define UDMC__POTENTIAL_FIELD_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "udmc/common.hpp"
#include "udmc/dual.hpp"
#include "udmc/lane_map.hpp"
#include "udmc/pf_params.hpp"
#include "udmc/spline.hpp"
#include "udmc/types.hpp"

namespace udmc
{

/// Thrown when two footprint circles coincide and the field is undefined.
class CoincidentCenters : public std::runtime_error
{
public:
  explicit CoincidentCenters(const std::string & what) : std::runtime_error(what) {}
};

/// A lane marking described relative to the owning centerline: the marking
/// runs parallel to the centerline at half_width on the given side.
struct LaneMarkingRef
{
  Pose2 center;  ///< centerline pose nearest the subject vehicle
  MarkingKind kind{MarkingKind::noncrossable};
  int side{1};              ///< +1 marking left of the centerline, -1 right
  double half_width{1.75};  ///< centerline to marking distance [m]
};

/// Pose and longitudinal speed of a surrounding vehicle.
struct ScenePose
{
  double px{0.0};
  double py{0.0};
  double phi{0.0};
  double speed{0.0};
};

/// Red light gate on the ego approach lane.
struct LightGate
{
  Pose2 stop_line;  ///< stop line center, heading along the road
  LaneMarkingRef left;
  LaneMarkingRef right;
  bool red{false};
};

/// Environment snapshot for one prediction stage.
struct PotentialScene
{
  std::vector<LaneMarkingRef> markings;
  std::vector<ScenePose> vehicles;
  int leader_index{-1};  ///< index into vehicles, -1 when no leader
  std::vector<Vec2> pedestrians;
  std::optional<LightGate> light;
  bool tracking_penalty{false};  ///< sharpen reference tracking this stage
};

/// Scene sequence matching the prediction horizon, slices[tau-1] for stage tau.
struct ObstacleHorizon
{
  std::vector<PotentialScene> slices;
};

enum class PFVariant { circles, ellipse };

struct FieldOptions
{
  PFVariant variant{PFVariant::ellipse};
  bool include_ttc{true};
};

/// Per-family field values; the solver only needs the total, the logs keep
/// the breakdown.
template <class T>
struct FieldBreakdown
{
  T nr{0.0};
  T cr{0.0};
  T v{0.0};
  T tl{0.0};
  T ttc{0.0};
  T pd{0.0};

  T total() const { return nr + cr + v + tl + ttc + pd; }
};

/// Unsigned lateral distance from the subject position to a marking line,
/// measured in the heading-angle-paralleled frame of the owning centerline.
/// The field repels from the line on both sides, so a marking owned by a
/// neighbor lane never attracts a subject across it.
template <class T>
T lateral_distance(const LaneMarkingRef & m, const T & px, const T & py)
{
  using std::abs;
  const double c = std::cos(m.center.heading);
  const double s = std::sin(m.center.heading);
  const T dx = px - m.center.p.x();
  const T dy = py - m.center.p.y();
  const T y_rel = -s * dx + c * dy;
  return abs(m.half_width - static_cast<double>(m.side) * y_rel);
}

/// Non-crossable marking field: zero beyond 1.5 m, inverse power inside,
/// plateaued below 0.1 m so the value stays bounded across the marking.
template <class T>
T f_noncrossable(const T & s, const PFParams & p)
{
  const double sv = value_of(s);
  if (sv >= 1.5) {
    return T(0.0);
  }
  if (sv <= 0.1) {
    return T(p.m_s());
  }
  return p.a_NR / pow(s, p.b_NR) - p.e_s();
}

/// Crossable marking field: quadratic inside b_CR, zero beyond.
template <class T>
T f_crossable(const T & s, const PFParams & p)
{
  if (value_of(s) >= p.b_CR) {
    return T(0.0);
  }
  return p.a_CR * sq(s - p.b_CR);
}

/// Centers of the two footprint circles of a vehicle pose.
template <class T>
std::pair<std::pair<T, T>, std::pair<T, T>> circle_centers(
  const T & px, const T & py, const T & phi, double r_v)
{
  const T c = cos(phi);
  const T s = sin(phi);
  return {{px + r_v * c, py + r_v * s}, {px - r_v * c, py - r_v * s}};
}

/// Far-field windows. Inverse-power tails never reach zero, so distant
/// traffic would tug on the solution from across the map; each term is
/// multiplied by a C1 smoothstep that is exactly 1 inside the on radius and
/// exactly 0 beyond the cut radius. Radii are squared metric values chosen
/// outside the near field so values there keep the closed forms.
inline constexpr double kVehicleFadeOn2 = 169.0;   ///< 13 m, circle variant
inline constexpr double kVehicleFadeCut2 = 324.0;  ///< 18 m, circle variant
inline constexpr double kEllipseFadeOn = 25.0;     ///< 12 m along-axis at r_a = 2.4
inline constexpr double kEllipseFadeCut = 49.0;    ///< 16.8 m along-axis at r_a = 2.4
inline constexpr double kPedFadeOn2 = 100.0;       ///< 10 m
inline constexpr double kPedFadeCut2 = 400.0;      ///< 20 m

namespace detail
{

template <class T>
T inverse_power_term(const T & d2, double magnitude, double exponent, double d_floor)
{
  T q = d2;
  if (value_of(q) < sq(d_floor)) {
    q = T(sq(d_floor));
  }
  return magnitude / pow(q, exponent);
}

template <class T>
T fade(const T & x, double on, double cut)
{
  if (value_of(x) <= on) {
    return T(1.0);
  }
  if (value_of(x) >= cut) {
    return T(0.0);
  }
  const T t = (x - on) * (1.0 / (cut - on));
  return 1.0 - t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

/// Vehicle field, circle variant: pairwise inverse-power terms between the
/// two ego circles and the two circles of the other vehicle.
template <class T>
T f_vehicle_circles(const StateVec<T> & ego, const ScenePose & other, const PFParams & p)
{
  const auto [e0, e1] = circle_centers(ego.px, ego.py, ego.phi, p.r_V);
  const auto [o0d, o1d] =
    circle_centers<double>(other.px, other.py, other.phi, p.r_V);
  const std::pair<T, T> egos[2] = {e0, e1};
  const std::pair<double, double> others[2] = {o0d, o1d};

  T total(0.0);
  for (const auto & e : egos) {
    for (const auto & o : others) {
      const T d2 = sq(e.first - o.first) + sq(e.second - o.second);
      if (value_of(d2) < 1e-12) {
        throw CoincidentCenters("vehicle field: footprint circles coincide");
      }
      if (value_of(d2) >= kVehicleFadeCut2) {
        continue;
      }
      total += detail::inverse_power_term(d2, p.a_V, p.b_V, p.d_floor) *
               detail::fade(d2, kVehicleFadeOn2, kVehicleFadeCut2);
    }
  }
  return total;
}

/// One elliptic field term for a probe point in the other vehicle's body
/// frame.
template <class T>
T ellipse_term(const T & px, const T & py, const ScenePose & other, const PFParams & p)
{
  const double c = std::cos(other.phi);
  const double s = std::sin(other.phi);
  const T dx = px - other.px;
  const T dy = py - other.py;
  const T xb = c * dx + s * dy;
  const T yb = -s * dx + c * dy;
  const T q = sq(xb / p.r_a) + sq(yb / p.r_b);
  if (value_of(q) >= kEllipseFadeCut) {
    return T(0.0);
  }
  return detail::inverse_power_term(q, p.a_V, p.b_V, p.d_floor) *
         detail::fade(q, kEllipseFadeOn, kEllipseFadeCut);
}

/// Vehicle field, ellipse variant: elliptic terms for both ego circles.
template <class T>
T f_vehicle_ellipse(const StateVec<T> & ego, const ScenePose & other, const PFParams & p)
{
  const auto [e0, e1] = circle_centers(ego.px, ego.py, ego.phi, p.r_V);
  return ellipse_term(e0.first, e0.second, other, p) +
         ellipse_term(e1.first, e1.second, other, p);
}

/// Exponential time-to-collision term. The squared time to collision is
/// saturated at s_cap so the value and gradient stay bounded when the gap
/// opens or the closing speed vanishes.
template <class T>
T ttc_exp_term(const StateVec<T> & ego, const ScenePose & leader, const PFParams & p)
{
  const T closing = ego.vx - leader.speed;
  T s(-p.s_cap);
  if (value_of(closing) > 1e-6) {
    const T d2 = sq(ego.px - leader.px) + sq(ego.py - leader.py);
    const T ttc2 = d2 / sq(closing);
    if (value_of(ttc2) < p.s_cap) {
      s = -ttc2;
    }
  }
  return p.a_T * (exp(p.b_T * (s + sq(p.t_alarm))) - 1.0);
}

/// Full time-to-collision field: exponential urgency plus the elliptic field
/// of the leading vehicle.
template <class T>
T f_ttc(const StateVec<T> & ego, const ScenePose & leader, const PFParams & p)
{
  return ttc_exp_term(ego, leader, p) + f_vehicle_ellipse(ego, leader, p);
}

/// Pedestrian field term for one probe point and one pedestrian.
template <class T>
T pedestrian_term(const T & px, const T & py, const Vec2 & ped, const PFParams & p)
{
  const T d2 = sq(px - ped.x()) + sq(py - ped.y());
  if (value_of(d2) >= kPedFadeCut2) {
    return T(0.0);
  }
  return detail::inverse_power_term(d2, p.a_PD, p.b_PD, p.d_floor) *
         detail::fade(d2, kPedFadeOn2, kPedFadeCut2);
}

/// Pedestrian field over both ego circles and all pedestrians in range.
template <class T>
T f_pedestrian(const StateVec<T> & ego, const std::vector<Vec2> & peds, const PFParams & p)
{
  const auto [e0, e1] = circle_centers(ego.px, ego.py, ego.phi, p.r_V);
  T total(0.0);
  for (const auto & ped : peds) {
    total += pedestrian_term(e0.first, e0.second, ped, p);
    total += pedestrian_term(e1.first, e1.second, ped, p);
  }
  return total;
}

/// Red light field: active while the light is red and the ego is still
/// before the stop line; pushes down the approach speed by walling off the
/// stop line and the lane boundaries.
template <class T>
T f_trafficlight(const StateVec<T> & ego, const LightGate & gate, const PFParams & p)
{
  if (!gate.red) {
    return T(0.0);
  }
  const double c = std::cos(gate.stop_line.heading);
  const double s = std::sin(gate.stop_line.heading);
  T dx = c * (gate.stop_line.p.x() - ego.px) + s * (gate.stop_line.p.y() - ego.py);
  if (value_of(dx) <= 0.0) {
    return T(0.0);
  }
  if (value_of(dx) < p.d_floor) {
    dx = T(p.d_floor);
  }
  T dyl = lateral_distance(gate.left, ego.px, ego.py);
  T dyr = lateral_distance(gate.right, ego.px, ego.py);
  if (value_of(dyl) < p.d_floor) {
    dyl = T(p.d_floor);
  }
  if (value_of(dyr) < p.d_floor) {
    dyr = T(p.d_floor);
  }
  return p.a_TL1 / dx + p.a_TL2 / dyl + p.a_TL2 / dyr;
}

/// Leading vehicle: nearest vehicle ahead of the ego in its heading frame,
/// within half a lane laterally and within perception range. Returns the
/// index into `vehicles` or -1.
inline int select_leader(
  const VehicleState & ego, const std::vector<ScenePose> & vehicles, const PFParams & p)
{
  const double c = std::cos(ego.phi);
  const double s = std::sin(ego.phi);
  int best = -1;
  double best_dx = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < vehicles.size(); ++i) {
    const double rx = vehicles[i].px - ego.px;
    const double ry = vehicles[i].py - ego.py;
    const double dx = c * rx + s * ry;
    const double dy = -s * rx + c * ry;
    if (dx <= 0.0 || std::abs(dy) > 0.5 * p.w_R) {
      continue;
    }
    if (std::hypot(rx, ry) > p.r_p) {
      continue;
    }
    if (dx < best_dx - 1e-12) {
      best_dx = dx;
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// Evaluates every active field family for one scene slice.
template <class T>
FieldBreakdown<T> field_breakdown(
  const PotentialScene & scene, const StateVec<T> & ego, const PFParams & p,
  const FieldOptions & opt = {})
{
  FieldBreakdown<T> out;
  for (const auto & m : scene.markings) {
    const T s = lateral_distance(m, ego.px, ego.py);
    if (m.kind == MarkingKind::crossable) {
      out.cr += f_crossable(s, p);
    } else {
      out.nr += f_noncrossable(s, p);
    }
  }
  for (const auto & v : scene.vehicles) {
    if (opt.variant == PFVariant::circles) {
      out.v += f_vehicle_circles(ego, v, p);
    } else {
      out.v += f_vehicle_ellipse(ego, v, p);
    }
  }
  if (opt.include_ttc && scene.leader_index >= 0 &&
      scene.leader_index < static_cast<int>(scene.vehicles.size())) {
    out.ttc = ttc_exp_term(ego, scene.vehicles[scene.leader_index], p);
  }
  if (!scene.pedestrians.empty()) {
    out.pd = f_pedestrian(ego, scene.pedestrians, p);
  }
  if (scene.light) {
    out.tl = f_trafficlight(ego, *scene.light, p);
  }
  return out;
}

/// Total potential of one scene slice at the given ego state.
template <class T>
T total_field(
  const PotentialScene & scene, const StateVec<T> & ego, const PFParams & p,
  const FieldOptions & opt = {})
{
  return field_breakdown(scene, ego, p, opt).total();
}

/// Gradient of the total field with respect to the six ego states.
inline Vec6 field_gradient(
  const PotentialScene & scene, const VehicleState & ego, const PFParams & p,
  const FieldOptions & opt = {})
{
  using D = Dual<6>;
  StateVec<D> xd;
  xd.px = D::seed(ego.px, 0);
  xd.py = D::seed(ego.py, 1);
  xd.phi = D::seed(ego.phi, 2);
  xd.vx = D::seed(ego.vx, 3);
  xd.vy = D::seed(ego.vy, 4);
  xd.omega = D::seed(ego.omega, 5);
  return total_field(scene, xd, p, opt).g;
}

/// Inputs for the virtual field builder, gathered from the route and map.
struct VirtualFieldInput
{
  Pose2 route_pose;  ///< route pose nearest the stage reference
  bool in_intersection{false};
  bool turn_ahead{false};
  int turn_dir{0};               ///< +1 left turn, -1 right turn
  double lateral_to_target{0.0}; ///< |ego lateral offset to the target waypoint|
  double r_lane{1.75};           ///< offset threshold for the opposite-lane wall
};

struct VirtualFieldSet
{
  std::vector<LaneMarkingRef> markings;
  bool replace_real{false};      ///< virtual lane supersedes map markings
  bool tracking_penalty{false};  ///< request sharper lateral tracking
};

/// Virtual potential fields for unmarked regions and turns.
///
/// Inside an intersection the route is wrapped by a pair of non-crossable
/// virtual markings at r_g on both sides. Near a turn, the lane on the
/// opposite side of the turn direction is walled off while the ego stays
/// within r_lane of the target waypoint; otherwise the stage asks for a
/// tracking penalty instead.
inline VirtualFieldSet build_virtual_fields(const VirtualFieldInput & in, const PFParams & p)
{
  VirtualFieldSet out;
  if (in.in_intersection) {
    LaneMarkingRef left;
    left.center = in.route_pose;
    left.kind = MarkingKind::virtual_marking;
    left.side = 1;
    left.half_width = p.r_g();
    LaneMarkingRef right = left;
    right.side = -1;
    out.markings.push_back(left);
    out.markings.push_back(right);
    out.replace_real = true;
    return out;
  }
  if (in.turn_ahead) {
    if (in.lateral_to_target < in.r_lane) {
      LaneMarkingRef wall;
      wall.center = in.route_pose;
      wall.kind = MarkingKind::virtual_marking;
      wall.side = in.turn_dir >= 0 ? 1 : -1;
      wall.half_width = 0.5 * p.w_R;
      out.markings.push_back(wall);
    } else {
      out.tracking_penalty = true;
    }
  }
  return out;
}

/// True when the state sits within tol of a piecewise boundary of any field
/// family, where the total is continuous but not differentiable.
inline bool near_field_boundary(
  const PotentialScene & scene, const VehicleState & ego, const PFParams & p, double tol = 1e-3)
{
  for (const auto & m : scene.markings) {
    const double s = lateral_distance(m, ego.px, ego.py);
    if (m.kind == MarkingKind::crossable) {
      // b_CR is the activation edge, 0 the |distance| kink on the line.
      if (std::abs(s - p.b_CR) < tol || s < tol) {
        return true;
      }
    } else if (std::abs(s - 0.1) < tol || std::abs(s - 1.5) < tol) {
      return true;
    }
  }
  if (scene.leader_index >= 0) {
    const auto & l = scene.vehicles[scene.leader_index];
    const double closing = ego.vx - l.speed;
    if (std::abs(closing) < tol) {
      return true;
    }
    if (closing > 0.0) {
      const double d2 = sq(ego.px - l.px) + sq(ego.py - l.py);
      if (std::abs(d2 / sq(closing) - p.s_cap) < tol * p.s_cap) {
        return true;
      }
    }
  }
  if (scene.light && scene.light->red) {
    const double c = std::cos(scene.light->stop_line.heading);
    const double s = std::sin(scene.light->stop_line.heading);
    const double dx = c * (scene.light->stop_line.p.x() - ego.px) +
                      s * (scene.light->stop_line.p.y() - ego.py);
    if (std::abs(dx) < tol || std::abs(dx - p.d_floor) < tol) {
      return true;
    }
  }
  return false;
}

}  // namespace udmc

#endif  // UDMC__POTENTIAL_FIELD_HPP_
