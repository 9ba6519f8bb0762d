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

#ifndef UDMC__TYPES_HPP_
#define UDMC__TYPES_HPP_

#include <stdexcept>

#include "udmc/common.hpp"
#include "udmc/dual.hpp"

namespace udmc
{

/// Planar vehicle state: world position, heading and body-frame velocities.
template <class T>
struct StateVec
{
  T px{};     ///< world x position [m]
  T py{};     ///< world y position [m]
  T phi{};    ///< heading [rad]
  T vx{};     ///< longitudinal velocity [m/s]
  T vy{};     ///< lateral velocity [m/s]
  T omega{};  ///< yaw rate [rad/s]
};

using VehicleState = StateVec<double>;

/// Control input: longitudinal acceleration and front steering angle.
template <class T>
struct ControlVec
{
  T a{};      ///< acceleration command [m/s^2]
  T delta{};  ///< front wheel steering angle [rad]
};

using ControlInput = ControlVec<double>;

inline Vec6 to_vector(const VehicleState & x)
{
  Vec6 v;
  v << x.px, x.py, x.phi, x.vx, x.vy, x.omega;
  return v;
}

inline VehicleState state_from_vector(const Vec6 & v)
{
  return VehicleState{v(0), v(1), v(2), v(3), v(4), v(5)};
}

inline VehicleState lerp(const VehicleState & a, const VehicleState & b, double t)
{
  VehicleState r;
  r.px = a.px + t * (b.px - a.px);
  r.py = a.py + t * (b.py - a.py);
  r.phi = a.phi + t * wrap_angle(b.phi - a.phi);
  r.vx = a.vx + t * (b.vx - a.vx);
  r.vy = a.vy + t * (b.vy - a.vy);
  r.omega = a.omega + t * (b.omega - a.omega);
  return r;
}

/// Dynamic bicycle model parameters.
///
/// Cornering stiffnesses follow the convention in which lateral tire force is
/// written F = k * alpha with slip angles measured so that k is negative for
/// a real tire.
struct VehicleParams
{
  double mass{1699.98};   ///< vehicle mass [kg]
  double lf{1.287};       ///< front axle to center of gravity [m]
  double lr{1.603};       ///< rear axle to center of gravity [m]
  double kf{-102129.83};  ///< front cornering stiffness [N/rad]
  double kr{-89999.98};   ///< rear cornering stiffness [N/rad]
  double iz{2699.98};     ///< yaw inertia [kg m^2]

  double lk() const { return lf * kf - lr * kr; }
  double wheelbase() const { return lf + lr; }

  void validate() const
  {
    if (!(mass > 0.0) || !(iz > 0.0)) {
      throw std::invalid_argument("vehicle params: mass and iz must be positive");
    }
    if (!(lf > 0.0) || !(lr > 0.0)) {
      throw std::invalid_argument("vehicle params: lf and lr must be positive");
    }
    if (kf > 0.0 || kr > 0.0) {
      throw std::invalid_argument("vehicle params: cornering stiffnesses must be non-positive");
    }
  }
};

inline VehicleParams default_vehicle_params()
{
  return VehicleParams{};
}

/// Box bounds on states and controls used by the solver.
struct Bounds
{
  Vec6 x_min;
  Vec6 x_max;
  Vec2 u_min;
  Vec2 u_max;

  static Bounds defaults()
  {
    Bounds b;
    b.x_min << -1e9, -1e9, -1e9, 0.0, -4.0, -2.0;
    b.x_max << 1e9, 1e9, 1e9, 20.0, 4.0, 2.0;
    b.u_min << -6.0, -0.6;
    b.u_max << 3.0, 0.6;
    return b;
  }

  void validate() const
  {
    for (int i = 0; i < 6; ++i) {
      if (!(x_min(i) <= x_max(i))) {
        throw std::invalid_argument("bounds: x_min must not exceed x_max");
      }
    }
    for (int i = 0; i < 2; ++i) {
      if (!(u_min(i) <= u_max(i))) {
        throw std::invalid_argument("bounds: u_min must not exceed u_max");
      }
    }
  }
};

}  // namespace udmc

#endif  // UDMC__TYPES_HPP_
