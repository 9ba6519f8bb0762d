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

#ifndef UDMC__DYNAMICS_HPP_
#define UDMC__DYNAMICS_HPP_

#include <utility>

#include "udmc/common.hpp"
#include "udmc/dual.hpp"
#include "udmc/types.hpp"

namespace udmc
{

inline constexpr double kDenominatorEps = 1e-6;

/// One discrete step of the dynamic bicycle model.
///
/// The lateral velocity and yaw rate rows come from a semi-implicit
/// discretization of the linear tire model, which keeps the update stable at
/// low speed; the kinematic rows use a plain forward difference.
template <class T>
StateVec<T> bicycle_step(
  const StateVec<T> & x, const ControlVec<T> & u, const VehicleParams & p, double ts)
{
  const double m = p.mass;
  const double lk = p.lk();
  const T den_vy = m * x.vx - ts * (p.kf + p.kr);
  const T den_om = p.iz * x.vx - ts * (sq(p.lf) * p.kf + sq(p.lr) * p.kr);
  if (std::abs(value_of(den_vy)) < kDenominatorEps) {
    throw DegenerateDenominator("bicycle_step: lateral velocity denominator near zero");
  }
  if (std::abs(value_of(den_om)) < kDenominatorEps) {
    throw DegenerateDenominator("bicycle_step: yaw rate denominator near zero");
  }

  StateVec<T> n;
  n.px = x.px + ts * (x.vx * cos(x.phi) - x.vy * sin(x.phi));
  n.py = x.py + ts * (x.vy * cos(x.phi) + x.vx * sin(x.phi));
  n.phi = x.phi + ts * x.omega;
  n.vx = x.vx + ts * u.a;
  n.vy = (m * x.vx * x.vy + ts * lk * x.omega - ts * p.kf * u.delta * x.vx -
          ts * m * x.vx * x.vx * x.omega) /
         den_vy;
  n.omega = (p.iz * x.vx * x.omega + ts * lk * x.vy - ts * p.lf * p.kf * u.delta * x.vx) / den_om;
  return n;
}

/// Jacobians of bicycle_step with respect to state and control.
inline std::pair<Mat66, Mat62> linearize(
  const VehicleState & x, const ControlInput & u, const VehicleParams & p, double ts)
{
  using D = Dual<8>;
  StateVec<D> xd;
  xd.px = D::seed(x.px, 0);
  xd.py = D::seed(x.py, 1);
  xd.phi = D::seed(x.phi, 2);
  xd.vx = D::seed(x.vx, 3);
  xd.vy = D::seed(x.vy, 4);
  xd.omega = D::seed(x.omega, 5);
  ControlVec<D> ud;
  ud.a = D::seed(u.a, 6);
  ud.delta = D::seed(u.delta, 7);

  const StateVec<D> n = bicycle_step(xd, ud, p, ts);
  const D * rows[6] = {&n.px, &n.py, &n.phi, &n.vx, &n.vy, &n.omega};
  Mat66 a;
  Mat62 b;
  for (int i = 0; i < 6; ++i) {
    a.row(i) = rows[i]->g.head(6).transpose();
    b.row(i) = rows[i]->g.tail(2).transpose();
  }
  return {a, b};
}

}  // namespace udmc

#endif  // UDMC__DYNAMICS_HPP_
