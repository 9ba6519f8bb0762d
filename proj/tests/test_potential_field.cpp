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

#include <cmath>
#include <cstdio>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "udmc/pf_params.hpp"
#include "udmc/potential_field.hpp"

namespace
{

udmc::LaneMarkingRef make_marking(
  double cy, int side, udmc::MarkingKind kind, double heading = 0.0, double hw = 1.75)
{
  udmc::LaneMarkingRef m;
  m.center.p = udmc::Vec2(0.0, cy);
  m.center.heading = heading;
  m.kind = kind;
  m.side = side;
  m.half_width = hw;
  return m;
}

udmc::Vec6 fd_field_gradient(
  const udmc::PotentialScene & scene, const udmc::VehicleState & x, const udmc::PFParams & p,
  const udmc::FieldOptions & opt)
{
  udmc::Vec6 g;
  const double h = 1e-6;
  for (int i = 0; i < 6; ++i) {
    udmc::Vec6 vp = udmc::to_vector(x), vm = udmc::to_vector(x);
    vp(i) += h;
    vm(i) -= h;
    g(i) = (udmc::total_field(scene, udmc::state_from_vector(vp), p, opt) -
            udmc::total_field(scene, udmc::state_from_vector(vm), p, opt)) /
           (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("pf params defaults and derived constants", "[pf]")
{
  const udmc::PFParams p;
  CHECK(p.a_NR == 100.0);
  CHECK(p.b_NR == 2.0);
  CHECK(p.a_CR == 10.0);
  CHECK(p.b_CR == 0.5);
  CHECK(p.a_V == 500.0);
  CHECK(p.b_V == 1.0);
  CHECK(p.r_a == 2.4);
  CHECK(p.r_b == 1.0);
  CHECK(p.w_R == 3.5);
  CHECK(p.a_TL1 == 200.0);
  CHECK(p.a_TL2 == 1000.0);
  CHECK(p.r_offset == 0.25);
  CHECK(p.e_s() == Catch::Approx(44.4444444444444).epsilon(1e-12));
  CHECK(p.m_s() == Catch::Approx(9955.55555555556).epsilon(1e-12));
  CHECK(p.r_g() == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("pf params file round trip and rejection", "[pf]")
{
  CHECK_NOTHROW(udmc::pf_params_from_string("a_NR = 50\nb_NR = 1.5 # steeper\n"));
  CHECK_THROWS_AS(udmc::pf_params_from_string("a_XX = 1\n"), udmc::ParseError);
  CHECK_THROWS_AS(udmc::pf_params_from_string("a_NR 1\n"), udmc::ParseError);
  CHECK_THROWS_AS(udmc::pf_params_from_string("a_NR = -3\n"), std::invalid_argument);

  udmc::PFParams p;
  p.a_V = 777.5;
  p.t_alarm = 2.25;
  const std::string path = "pf_roundtrip.cfg";
  udmc::save_pf_params(path, p);
  const udmc::PFParams q = udmc::load_pf_params(path);
  CHECK(q.a_V == Catch::Approx(777.5));
  CHECK(q.t_alarm == Catch::Approx(2.25));
  CHECK(q.a_NR == Catch::Approx(p.a_NR));
  std::remove(path.c_str());
}

TEST_CASE("non-crossable marking field", "[pf]")
{
  const udmc::PFParams p;
  CHECK(udmc::f_noncrossable(1.0, p) == Catch::Approx(55.5555555555556).epsilon(1e-12));
  CHECK(udmc::f_noncrossable(1.5, p) == 0.0);
  CHECK(udmc::f_noncrossable(2.5, p) == 0.0);
  CHECK(udmc::f_noncrossable(0.05, p) == Catch::Approx(p.m_s()));
  CHECK(udmc::f_noncrossable(-0.4, p) == Catch::Approx(p.m_s()));

  // Continuity at both breakpoints.
  CHECK(udmc::f_noncrossable(1.5 - 1e-9, p) == Catch::Approx(0.0).margin(1e-6));
  CHECK(udmc::f_noncrossable(0.1 + 1e-9, p) == Catch::Approx(p.m_s()).margin(1e-4));

  // Monotone decreasing over the active band.
  double prev = udmc::f_noncrossable(0.11, p);
  for (double s = 0.15; s < 1.5; s += 0.05) {
    const double cur = udmc::f_noncrossable(s, p);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("crossable marking field", "[pf]")
{
  const udmc::PFParams p;
  CHECK(udmc::f_crossable(0.25, p) == Catch::Approx(0.625).epsilon(1e-12));
  CHECK(udmc::f_crossable(0.0, p) == Catch::Approx(2.5).epsilon(1e-12));
  CHECK(udmc::f_crossable(0.5, p) == 0.0);
  CHECK(udmc::f_crossable(3.0, p) == 0.0);
  CHECK(udmc::f_crossable(0.5 - 1e-9, p) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("lateral distance in the heading paralleled frame", "[pf]")
{
  const auto left = make_marking(0.0, 1, udmc::MarkingKind::noncrossable);
  const auto right = make_marking(0.0, -1, udmc::MarkingKind::noncrossable);
  CHECK(udmc::lateral_distance(left, 5.0, 0.5) == Catch::Approx(1.25).margin(1e-12));
  CHECK(udmc::lateral_distance(right, 5.0, 0.5) == Catch::Approx(2.25).margin(1e-12));
  // Distance is unsigned: a subject past the line is still 0.25 m from it,
  // so the field pushes it back instead of pulling it through.
  CHECK(udmc::lateral_distance(left, -3.0, 2.0) == Catch::Approx(0.25).margin(1e-12));

  // A rotated road: the frame follows the centerline heading.
  udmc::LaneMarkingRef m;
  m.center.p = udmc::Vec2(10.0, 10.0);
  m.center.heading = udmc::kPi / 4;
  m.side = 1;
  m.half_width = 1.75;
  const double off = 0.6;
  const double px = 10.0 - off * std::sin(udmc::kPi / 4);
  const double py = 10.0 + off * std::cos(udmc::kPi / 4);
  CHECK(udmc::lateral_distance(m, px, py) == Catch::Approx(1.75 - off).margin(1e-12));
}

TEST_CASE("vehicle field circle variant", "[pf]")
{
  const udmc::PFParams p;
  const udmc::VehicleState ego{0.0, 0.0, 0.0, 10.0, 0.0, 0.0};
  udmc::ScenePose other{10.0, 0.0, 0.0, 8.0};

  const double want = 500.0 * (1.0 / udmc::sq(7.2) + 2.0 / udmc::sq(10.0) + 1.0 / udmc::sq(12.8));
  CHECK(udmc::f_vehicle_circles(ego, other, p) == Catch::Approx(22.6968195408951).epsilon(1e-12));
  CHECK(udmc::f_vehicle_circles(ego, other, p) == Catch::Approx(want).epsilon(1e-12));

  udmc::ScenePose on_top{0.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(udmc::f_vehicle_circles(ego, on_top, p), udmc::CoincidentCenters);
}

TEST_CASE("vehicle field ellipse variant", "[pf]")
{
  const udmc::PFParams p;
  udmc::ScenePose other{0.0, 0.0, 0.0, 0.0};
  CHECK(udmc::ellipse_term(4.0, 0.0, other, p) == Catch::Approx(180.0).epsilon(1e-12));
  CHECK(udmc::ellipse_term(0.0, 4.0, other, p) == Catch::Approx(31.25).epsilon(1e-12));

  // Rotation of the obstacle rotates the ellipse with it.
  udmc::ScenePose rotated{0.0, 0.0, udmc::kPi / 2, 0.0};
  CHECK(udmc::ellipse_term(0.0, 4.0, rotated, p) == Catch::Approx(180.0).epsilon(1e-12));

  const udmc::VehicleState ego{-10.0, 0.0, 0.0, 10.0, 0.0, 0.0};
  const double t0 = udmc::ellipse_term(-8.6, 0.0, other, p);
  const double t1 = udmc::ellipse_term(-11.4, 0.0, other, p);
  CHECK(udmc::f_vehicle_ellipse(ego, other, p) == Catch::Approx(t0 + t1).epsilon(1e-12));
}

TEST_CASE("time to collision field", "[pf]")
{
  const udmc::PFParams p;
  udmc::VehicleState ego{0.0, 0.0, 0.0, 15.0, 0.0, 0.0};
  udmc::ScenePose leader{5.0, 0.0, 0.0, 5.0};
  CHECK(udmc::ttc_exp_term(ego, leader, p) == Catch::Approx(63.8905609893065).epsilon(1e-12));

  // Not closing: the saturated term is a constant close to -a_T.
  udmc::VehicleState slow = ego;
  slow.vx = 4.0;
  CHECK(udmc::ttc_exp_term(slow, leader, p) == Catch::Approx(-10.0).margin(1e-6));
  const udmc::Vec6 g = [&] {
    udmc::PotentialScene scene;
    scene.vehicles.push_back(leader);
    scene.leader_index = 0;
    udmc::FieldOptions opt;
    opt.variant = udmc::PFVariant::ellipse;
    return udmc::field_gradient(scene, slow, p, opt);
  }();
  CHECK(std::abs(g(3)) < 1e-9);  // saturated: no speed gradient from the ttc term

  CHECK(
    udmc::f_ttc(ego, leader, p) ==
    Catch::Approx(udmc::ttc_exp_term(ego, leader, p) + udmc::f_vehicle_ellipse(ego, leader, p))
      .epsilon(1e-12));
}

TEST_CASE("pedestrian field", "[pf]")
{
  const udmc::PFParams p;
  CHECK(udmc::pedestrian_term(0.0, 0.0, udmc::Vec2(10.0, 0.0), p) == Catch::Approx(5.0).epsilon(1e-12));
  CHECK(udmc::pedestrian_term(0.0, 0.0, udmc::Vec2(6.0, 8.0), p) == Catch::Approx(5.0).epsilon(1e-12));

  const udmc::VehicleState ego{0.0, 0.0, 0.0, 5.0, 0.0, 0.0};
  const std::vector<udmc::Vec2> peds{udmc::Vec2(10.0, 0.0)};
  const double want = udmc::pedestrian_term(1.4, 0.0, peds[0], p) +
                      udmc::pedestrian_term(-1.4, 0.0, peds[0], p);
  CHECK(udmc::f_pedestrian(ego, peds, p) == Catch::Approx(want).epsilon(1e-12));

  // The distance floor bounds the term for a pedestrian on top of a circle.
  const double capped = udmc::pedestrian_term(0.0, 0.0, udmc::Vec2(0.0, 0.0), p);
  CHECK(capped == Catch::Approx(500.0 / udmc::sq(0.05)).epsilon(1e-12));
}

TEST_CASE("traffic light field", "[pf]")
{
  const udmc::PFParams p;
  udmc::LightGate gate;
  gate.red = true;
  gate.stop_line.p = udmc::Vec2(10.0, 0.0);
  gate.stop_line.heading = 0.0;
  gate.left = make_marking(0.0, 1, udmc::MarkingKind::noncrossable);
  gate.right = make_marking(0.0, -1, udmc::MarkingKind::noncrossable);

  const udmc::VehicleState ego{0.0, 0.0, 0.0, 8.0, 0.0, 0.0};
  CHECK(udmc::f_trafficlight(ego, gate, p) == Catch::Approx(1162.85714285714).epsilon(1e-10));

  udmc::LightGate green = gate;
  green.red = false;
  CHECK(udmc::f_trafficlight(ego, green, p) == 0.0);

  // Past the stop line the gate no longer acts.
  const udmc::VehicleState past{12.0, 0.0, 0.0, 8.0, 0.0, 0.0};
  CHECK(udmc::f_trafficlight(past, gate, p) == 0.0);

  // The field grows as the line gets closer.
  const udmc::VehicleState closer{7.0, 0.0, 0.0, 8.0, 0.0, 0.0};
  CHECK(udmc::f_trafficlight(closer, gate, p) > udmc::f_trafficlight(ego, gate, p));
}

TEST_CASE("leader selection", "[pf]")
{
  const udmc::PFParams p;
  const udmc::VehicleState ego{0.0, 0.0, 0.0, 10.0, 0.0, 0.0};
  std::vector<udmc::ScenePose> vehicles;
  vehicles.push_back({-5.0, 0.0, 0.0, 5.0});   // behind
  vehicles.push_back({20.0, 0.0, 0.0, 9.0});   // ahead, same lane
  vehicles.push_back({12.0, 3.5, 0.0, 9.0});   // ahead, adjacent lane
  vehicles.push_back({60.0, 0.0, 0.0, 9.0});   // ahead, farther
  CHECK(udmc::select_leader(ego, vehicles, p) == 1);

  vehicles.push_back({8.0, 0.5, 0.0, 9.0});  // nearer, within half lane
  CHECK(udmc::select_leader(ego, vehicles, p) == 4);

  std::vector<udmc::ScenePose> far{{80.0, 0.0, 0.0, 5.0}};
  CHECK(udmc::select_leader(ego, far, p) == -1);
  CHECK(udmc::select_leader(ego, {}, p) == -1);

  // A heading rotation rotates the gate with the ego.
  const udmc::VehicleState turned{0.0, 0.0, udmc::kPi / 2, 10.0, 0.0, 0.0};
  std::vector<udmc::ScenePose> above{{0.3, 15.0, udmc::kPi / 2, 5.0}};
  CHECK(udmc::select_leader(turned, above, p) == 0);
}

TEST_CASE("total field composes the families", "[pf]")
{
  const udmc::PFParams p;
  udmc::PotentialScene scene;
  scene.markings.push_back(make_marking(0.0, 1, udmc::MarkingKind::crossable, 0.0, 0.9));
  scene.markings.push_back(make_marking(0.0, -1, udmc::MarkingKind::noncrossable, 0.0, 0.9));
  scene.vehicles.push_back({15.0, 0.0, 0.0, 6.0});
  scene.leader_index = 0;
  scene.pedestrians.push_back(udmc::Vec2(5.0, 5.0));
  udmc::LightGate gate;
  gate.red = true;
  gate.stop_line.p = udmc::Vec2(20.0, 0.0);
  gate.left = make_marking(0.0, 1, udmc::MarkingKind::noncrossable);
  gate.right = make_marking(0.0, -1, udmc::MarkingKind::noncrossable);
  scene.light = gate;

  const udmc::VehicleState ego{0.0, 0.55, 0.05, 10.0, 0.0, 0.0};
  const udmc::FieldOptions opt;
  const auto bd = udmc::field_breakdown(scene, ego, p, opt);
  CHECK(bd.nr > 0.0);
  CHECK(bd.cr > 0.0);
  CHECK(bd.v > 0.0);
  CHECK(bd.tl > 0.0);
  CHECK(bd.pd > 0.0);
  CHECK(
    udmc::total_field(scene, ego, p, opt) ==
    Catch::Approx(bd.nr + bd.cr + bd.v + bd.tl + bd.ttc + bd.pd).epsilon(1e-12));

  udmc::FieldOptions no_ttc = opt;
  no_ttc.include_ttc = false;
  const auto bd2 = udmc::field_breakdown(scene, ego, p, no_ttc);
  CHECK(bd2.ttc == 0.0);
  CHECK(bd2.v == Catch::Approx(bd.v).epsilon(1e-12));

  udmc::FieldOptions circles = opt;
  circles.variant = udmc::PFVariant::circles;
  CHECK(
    udmc::field_breakdown(scene, ego, p, circles).v ==
    Catch::Approx(udmc::f_vehicle_circles(ego, scene.vehicles[0], p)).epsilon(1e-12));
}

TEST_CASE("field gradient matches finite differences at smooth points", "[pf]")
{
  const udmc::PFParams p;
  udmc::PotentialScene scene;
  scene.markings.push_back(make_marking(1.0, 1, udmc::MarkingKind::noncrossable));
  scene.markings.push_back(make_marking(-1.0, -1, udmc::MarkingKind::crossable, 0.0, 1.0));
  scene.vehicles.push_back({12.0, 1.0, 0.3, 6.0});
  scene.leader_index = 0;
  scene.pedestrians.push_back(udmc::Vec2(6.0, -4.0));
  udmc::LightGate gate;
  gate.red = true;
  gate.stop_line.p = udmc::Vec2(25.0, 0.0);
  gate.left = make_marking(1.0, 1, udmc::MarkingKind::noncrossable);
  gate.right = make_marking(-1.0, -1, udmc::MarkingKind::noncrossable);
  scene.light = gate;

  for (const auto variant : {udmc::PFVariant::ellipse, udmc::PFVariant::circles}) {
    udmc::FieldOptions opt;
    opt.variant = variant;
    const udmc::VehicleState ego{0.3, 0.4, 0.1, 9.0, 0.1, 0.02};
    REQUIRE_FALSE(udmc::near_field_boundary(scene, ego, p));
    const udmc::Vec6 g = udmc::field_gradient(scene, ego, p, opt);
    const udmc::Vec6 fd = fd_field_gradient(scene, ego, p, opt);
    CHECK((g - fd).lpNorm<Eigen::Infinity>() < 1e-4 * std::max(1.0, fd.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("near field boundary detection", "[pf]")
{
  const udmc::PFParams p;
  udmc::PotentialScene scene;
  scene.markings.push_back(make_marking(0.0, 1, udmc::MarkingKind::noncrossable));

  // Exactly on the inner breakpoint: marking at 1.75, ego lateral 1.65.
  const udmc::VehicleState on_kink{0.0, 1.65, 0.0, 5.0, 0.0, 0.0};
  CHECK(udmc::near_field_boundary(scene, on_kink, p));

  const udmc::VehicleState smooth{0.0, 0.5, 0.0, 5.0, 0.0, 0.0};
  CHECK_FALSE(udmc::near_field_boundary(scene, smooth, p));

  // Equal speeds sit on the ttc saturation boundary.
  udmc::PotentialScene lead_scene;
  lead_scene.vehicles.push_back({20.0, 0.0, 0.0, 5.0});
  lead_scene.leader_index = 0;
  const udmc::VehicleState matched{0.0, 0.0, 0.0, 5.0, 0.0, 0.0};
  CHECK(udmc::near_field_boundary(lead_scene, matched, p));
}

TEST_CASE("virtual fields", "[pf]")
{
  const udmc::PFParams p;
  udmc::VirtualFieldInput in;
  in.route_pose.p = udmc::Vec2(30.0, 12.0);
  in.route_pose.heading = 0.7;

  SECTION("intersection wraps the route in a virtual lane")
  {
    in.in_intersection = true;
    const auto out = udmc::build_virtual_fields(in, p);
    REQUIRE(out.markings.size() == 2);
    CHECK(out.replace_real);
    CHECK_FALSE(out.tracking_penalty);
    CHECK(out.markings[0].side == 1);
    CHECK(out.markings[1].side == -1);
    for (const auto & m : out.markings) {
      CHECK(m.kind == udmc::MarkingKind::virtual_marking);
      CHECK(m.half_width == Catch::Approx(2.0));
      CHECK(m.center.heading == Catch::Approx(0.7));
    }
  }

  SECTION("left turn close to the target walls off the opposite lane")
  {
    in.turn_ahead = true;
    in.turn_dir = 1;
    in.lateral_to_target = 0.8;
    const auto out = udmc::build_virtual_fields(in, p);
    REQUIRE(out.markings.size() == 1);
    CHECK(out.markings[0].side == 1);
    CHECK(out.markings[0].kind == udmc::MarkingKind::virtual_marking);
    CHECK_FALSE(out.tracking_penalty);
    CHECK_FALSE(out.replace_real);
  }

  SECTION("turn with a large offset asks for a tracking penalty")
  {
    in.turn_ahead = true;
    in.turn_dir = -1;
    in.lateral_to_target = 2.4;
    const auto out = udmc::build_virtual_fields(in, p);
    CHECK(out.markings.empty());
    CHECK(out.tracking_penalty);
  }

  SECTION("no context produces no fields")
  {
    const auto out = udmc::build_virtual_fields(in, p);
    CHECK(out.markings.empty());
    CHECK_FALSE(out.tracking_penalty);
    CHECK_FALSE(out.replace_real);
  }
}
