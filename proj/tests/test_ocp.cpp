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
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "udmc/ocp.hpp"

using Catch::Matchers::WithinAbs;

namespace
{

udmc::OcpConfig make_config(int horizon)
{
  udmc::OcpConfig cfg;
  cfg.horizon = horizon;
  return cfg;
}

std::vector<udmc::ReferencePoint> straight_refs(
  const udmc::VehicleState & start, double v, int n, double ts)
{
  std::vector<udmc::ReferencePoint> refs(n + 1);
  for (int tau = 0; tau <= n; ++tau) {
    refs[tau].x = udmc::VehicleState{start.px + tau * ts * v, start.py, 0.0, v, 0.0, 0.0};
    refs[tau].s = tau * ts * v;
  }
  return refs;
}

udmc::ObstacleHorizon empty_horizon(int n)
{
  udmc::ObstacleHorizon h;
  h.slices.resize(n);
  return h;
}

std::vector<udmc::VehicleState> rollout(
  const udmc::VehicleState & x0, const std::vector<udmc::ControlInput> & u, double ts)
{
  const udmc::VehicleParams p = udmc::default_vehicle_params();
  std::vector<udmc::VehicleState> x(u.size() + 1);
  x[0] = x0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    x[k + 1] = udmc::bicycle_step(x[k], u[k], p, ts);
  }
  return x;
}

udmc::PotentialScene lane_scene(double ego_lateral_offset)
{
  udmc::PotentialScene scene;
  udmc::LaneMarkingRef left;
  left.center = udmc::Pose2{udmc::Vec2(0.0, ego_lateral_offset), 0.0};
  left.kind = udmc::MarkingKind::noncrossable;
  left.side = 1;
  left.half_width = 1.75;
  udmc::LaneMarkingRef right = left;
  right.kind = udmc::MarkingKind::crossable;
  right.side = -1;
  scene.markings = {left, right};
  return scene;
}

}  // namespace

TEST_CASE("ocp config parses json and validates")
{
  const udmc::OcpConfig def;
  REQUIRE(def.horizon == 10);
  REQUIRE_THAT(def.ts, WithinAbs(0.05, 1e-15));
  REQUIRE_THAT(def.q(2), WithinAbs(0.5, 1e-15));
  REQUIRE_THAT(def.rd(1), WithinAbs(5.0, 1e-15));
  REQUIRE(def.field.variant == udmc::PFVariant::ellipse);

  const nlohmann::json j = {
    {"horizon", 5},
    {"ts", 0.1},
    {"q", {2, 2, 1, 1, 0.2, 0.2}},
    {"r", {0.2, 2.0}},
    {"u_min", {-5.0, -0.5}},
    {"u_max", {2.5, 0.5}},
    {"pf_variant", "circles"},
    {"include_ttc", false},
    {"max_iters", 30}};
  const udmc::OcpConfig cfg = udmc::ocp_config_from_json(j);
  REQUIRE(cfg.horizon == 5);
  REQUIRE_THAT(cfg.ts, WithinAbs(0.1, 1e-15));
  REQUIRE_THAT(cfg.q(0), WithinAbs(2.0, 1e-15));
  REQUIRE_THAT(cfg.r(1), WithinAbs(2.0, 1e-15));
  REQUIRE_THAT(cfg.bounds.u_max(0), WithinAbs(2.5, 1e-15));
  REQUIRE(cfg.field.variant == udmc::PFVariant::circles);
  REQUIRE_FALSE(cfg.field.include_ttc);
  REQUIRE(cfg.max_iters == 30);
  REQUIRE_THAT(cfg.rd(0), WithinAbs(0.5, 1e-15));

  REQUIRE_THROWS_AS(
    udmc::ocp_config_from_json(nlohmann::json{{"q", {1, 2, 3}}}), udmc::ParseError);
  REQUIRE_THROWS_AS(
    udmc::ocp_config_from_json(nlohmann::json{{"pf_variant", "boxes"}}), udmc::ParseError);
  REQUIRE_THROWS_AS(
    udmc::ocp_config_from_json(nlohmann::json{{"horizon", 0}}), std::invalid_argument);
  REQUIRE_THROWS_AS(
    udmc::ocp_config_from_json(nlohmann::json{{"ts", -0.05}}), std::invalid_argument);
}

TEST_CASE("build cost matches manual arithmetic")
{
  udmc::OcpConfig cfg = make_config(2);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  std::vector<udmc::VehicleState> x(3);
  x[0] = udmc::VehicleState{0.0, 0.0, 0.0, 9.0, 0.0, 0.0};
  x[1] = udmc::VehicleState{1.0, 0.2, 0.05, 9.0, 0.1, 0.02};
  x[2] = udmc::VehicleState{2.0, 0.4, 0.1, 11.0, -0.1, 0.01};
  std::vector<udmc::ControlInput> u = {{0.5, 0.1}, {-0.3, 0.2}};
  std::vector<udmc::ReferencePoint> refs(3);
  refs[1].x = udmc::VehicleState{1.1, 0.0, 0.0, 10.0, 0.0, 0.0};
  refs[2].x = udmc::VehicleState{2.2, 0.1, 0.0, 10.0, 0.0, 0.0};

  udmc::ObstacleHorizon horizon = empty_horizon(2);
  horizon.slices[1].tracking_penalty = true;

  // Stage 1: e'Qe = 0.63229, u'Ru = 0.035.
  // Stage 2 with 5x position weights: e'Qe = 2.05601, u'Ru = 0.049,
  // rate term du = (-0.8, 0.1): 0.37.
  const double expected = 0.63229 + 2.05601 + 0.035 + 0.049 + 0.37;
  REQUIRE_THAT(solver.build_cost(x, u, refs, horizon), WithinAbs(expected, 1e-12));

  // Pushing vx one unit past its bound adds the hinge penalty on top of the
  // enlarged tracking error: 50*(21-20)^2 + 0.5*(11^2 - 1^2).
  auto x_over = x;
  x_over[1].vx = 21.0;
  const double delta = solver.build_cost(x_over, u, refs, horizon) -
                       solver.build_cost(x, u, refs, horizon);
  REQUIRE_THAT(delta, WithinAbs(50.0 + 60.0, 1e-9));

  REQUIRE_THROWS_AS(
    solver.build_cost({x[0], x[1]}, u, refs, horizon), std::invalid_argument);
}

TEST_CASE("analytic cost gradient matches finite differences")
{
  const int n = 6;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::PFParams pf{};
  const udmc::SqpSolver solver(cfg, pf);

  const udmc::VehicleState x0{0.0, 0.3, 0.02, 8.0, 0.05, 0.01};
  std::vector<udmc::ControlInput> u(n, udmc::ControlInput{0.3, 0.05});
  const auto x = rollout(x0, u, cfg.ts);
  const auto refs = straight_refs(x0, 9.0, n, cfg.ts);

  SECTION("tracking and control terms only")
  {
    const auto horizon = empty_horizon(n);
    const auto gc = udmc::check_gradients(solver, x, u, refs, horizon, pf);
    REQUIRE(gc.pass);
    REQUIRE(gc.skipped == 0);
    REQUIRE(gc.checked == 8 * n);
    REQUIRE(gc.max_rel_err < 1e-6);
  }

  SECTION("full field stack active")
  {
    udmc::PotentialScene scene = lane_scene(0.0);
    udmc::ScenePose lead;
    lead.px = 15.0;
    lead.py = 1.0;
    lead.phi = 0.0;
    lead.speed = 5.0;
    scene.vehicles = {lead};
    scene.leader_index = 0;
    scene.pedestrians = {udmc::Vec2(10.0, -4.0)};
    udmc::LightGate gate;
    gate.stop_line = udmc::Pose2{udmc::Vec2(25.0, 0.0), 0.0};
    gate.left = scene.markings[0];
    gate.right = scene.markings[1];
    gate.red = true;
    scene.light = gate;
    udmc::ObstacleHorizon horizon;
    horizon.slices.assign(n, scene);

    const auto gc = udmc::check_gradients(solver, x, u, refs, horizon, pf);
    REQUIRE(gc.pass);
    REQUIRE(gc.skipped == 0);
    REQUIRE(gc.checked == 8 * n);
  }
}

TEST_CASE("gradient check skips coordinates on a field kink")
{
  const int n = 3;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::PFParams pf{};
  const udmc::SqpSolver solver(cfg, pf);

  // The ego sits exactly on the piecewise break of the noncrossable field.
  const udmc::VehicleState x0{0.0, 1.65, 0.0, 8.0, 0.0, 0.0};
  std::vector<udmc::ControlInput> u(n, udmc::ControlInput{0.0, 0.0});
  const auto x = rollout(x0, u, cfg.ts);
  const auto refs = straight_refs(x0, 8.0, n, cfg.ts);

  udmc::ObstacleHorizon horizon;
  horizon.slices.assign(n, lane_scene(0.0));

  const auto gc = udmc::check_gradients(solver, x, u, refs, horizon, pf);
  REQUIRE(gc.skipped == 6 * n);
  REQUIRE(gc.checked == 2 * n);
  REQUIRE(gc.pass);
}

TEST_CASE("solver holds an exact reference with zero effort")
{
  const int n = 10;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  const udmc::VehicleState x0{0.0, 0.0, 0.0, 10.0, 0.0, 0.0};
  const auto refs = straight_refs(x0, 10.0, n, cfg.ts);
  const auto sol = solver.solve(x0, refs, empty_horizon(n));

  REQUIRE(sol.status == udmc::SolveStatus::converged);
  REQUIRE(sol.iterations <= 2);
  REQUIRE(sol.cost < 1e-10);
  REQUIRE(sol.kkt_stat <= cfg.tol_kkt);
  REQUIRE(sol.kkt_feas <= cfg.tol_kkt);
  for (const auto & uk : sol.u) {
    REQUIRE(std::abs(uk.a) < 1e-6);
    REQUIRE(std::abs(uk.delta) < 1e-6);
  }
}

TEST_CASE("solver steers back from a lateral displacement")
{
  const int n = 10;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  const udmc::VehicleState x0{0.0, 1.0, 0.0, 8.0, 0.0, 0.0};
  auto refs = straight_refs(x0, 8.0, n, cfg.ts);
  for (auto & r : refs) {
    r.x.py = 0.0;
  }
  const auto sol = solver.solve(x0, refs, empty_horizon(n), nullptr, true);

  REQUIRE(sol.status == udmc::SolveStatus::converged);
  REQUIRE(sol.kkt_feas <= cfg.tol_kkt);
  REQUIRE(sol.u[0].delta < -1e-4);
  REQUIRE(sol.x[n].py < 0.999);
  for (int tau = 1; tau <= n; ++tau) {
    REQUIRE(sol.x[tau].py <= sol.x[tau - 1].py + 1e-9);
  }

  // Accepted iterates never increase the merit while the weight is fixed.
  REQUIRE_FALSE(sol.trace.empty());
  for (std::size_t i = 1; i < sol.trace.size(); ++i) {
    if (sol.trace[i].nu == sol.trace[i - 1].nu) {
      REQUIRE(sol.trace[i].merit <= sol.trace[i - 1].merit + 1e-9);
    }
  }
}

TEST_CASE("short horizon solve beats a constant control grid")
{
  const int n = 3;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  const udmc::VehicleState x0{0.0, 1.0, 0.0, 8.0, 0.0, 0.0};
  auto refs = straight_refs(x0, 8.0, n, cfg.ts);
  for (auto & r : refs) {
    r.x.py = 0.0;
  }
  const auto horizon = empty_horizon(n);
  const auto sol = solver.solve(x0, refs, horizon);
  REQUIRE(sol.status == udmc::SolveStatus::converged);
  REQUIRE(sol.kkt_feas <= cfg.tol_kkt);

  double best = std::numeric_limits<double>::infinity();
  for (int ia = 0; ia <= 60; ia++) {
    for (int id = 0; id <= 240; id++) {
      const double a = -6.0 + 0.15 * ia;
      const double d = -0.6 + 0.005 * id;
      const std::vector<udmc::ControlInput> u(n, udmc::ControlInput{a, d});
      best = std::min(best, solver.build_cost(rollout(x0, u, cfg.ts), u, refs, horizon));
    }
  }

  // The exact rollout of the solved controls must not lose to any constant
  // control sequence, which the solver's search space contains.
  const double solved_cost = solver.build_cost(rollout(x0, sol.u, cfg.ts), sol.u, refs, horizon);
  REQUIRE(solved_cost <= best + 1e-4);
  REQUIRE(sol.cost <= best + 1e-2);
}

TEST_CASE("control bounds hold under saturation")
{
  const int n = 10;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  const udmc::VehicleState x0{0.0, 0.0, 0.0, 5.0, 0.0, 0.0};
  const auto refs = straight_refs(x0, 18.0, n, cfg.ts);
  const auto sol = solver.solve(x0, refs, empty_horizon(n));

  REQUIRE(sol.kkt_feas <= cfg.tol_kkt);
  for (const auto & uk : sol.u) {
    REQUIRE(uk.a <= cfg.bounds.u_max(0) + 1e-12);
    REQUIRE(uk.a >= cfg.bounds.u_min(0) - 1e-12);
    REQUIRE(std::abs(uk.delta) <= cfg.bounds.u_max(1) + 1e-12);
  }
  REQUIRE(sol.u[0].a > 2.5);
}

TEST_CASE("solver brakes for a stopped leader")
{
  const int n = 10;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  const udmc::VehicleState x0{0.0, 0.0, 0.0, 8.0, 0.0, 0.0};
  const auto refs = straight_refs(x0, 8.0, n, cfg.ts);

  const auto free_sol = solver.solve(x0, refs, empty_horizon(n));

  udmc::PotentialScene scene;
  udmc::ScenePose lead;
  lead.px = 12.0;
  lead.py = 0.0;
  lead.phi = 0.0;
  lead.speed = 0.0;
  scene.vehicles = {lead};
  scene.leader_index = 0;
  udmc::ObstacleHorizon horizon;
  horizon.slices.assign(n, scene);

  const auto sol = solver.solve(x0, refs, horizon);
  REQUIRE(sol.kkt_feas <= 1e-3);
  REQUIRE(sol.u[0].a < free_sol.u[0].a - 0.3);
  REQUIRE(sol.x[n].vx < free_sol.x[n].vx);
  REQUIRE(sol.cost > free_sol.cost);
}

TEST_CASE("repeated solves are bitwise identical")
{
  const int n = 10;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  const udmc::VehicleState x0{0.0, 0.7, 0.05, 7.5, 0.1, -0.02};
  auto refs = straight_refs(x0, 9.0, n, cfg.ts);
  for (auto & r : refs) {
    r.x.py = 0.0;
  }
  udmc::ObstacleHorizon horizon;
  udmc::PotentialScene scene = lane_scene(0.0);
  udmc::ScenePose lead;
  lead.px = 20.0;
  lead.py = 0.3;
  lead.speed = 6.0;
  scene.vehicles = {lead};
  scene.leader_index = 0;
  horizon.slices.assign(n, scene);

  const auto a = solver.solve(x0, refs, horizon);
  const auto b = solver.solve(x0, refs, horizon);
  REQUIRE(a.iterations == b.iterations);
  REQUIRE(a.cost == b.cost);
  for (int tau = 0; tau < n; ++tau) {
    REQUIRE(a.u[tau].a == b.u[tau].a);
    REQUIRE(a.u[tau].delta == b.u[tau].delta);
  }
  for (int tau = 0; tau <= n; ++tau) {
    REQUIRE(a.x[tau].px == b.x[tau].px);
    REQUIRE(a.x[tau].py == b.x[tau].py);
  }
}

TEST_CASE("warm started solve converges")
{
  const int n = 10;
  udmc::OcpConfig cfg = make_config(n);
  const udmc::SqpSolver solver(cfg, udmc::PFParams{});

  const udmc::VehicleState x0{0.0, 1.0, 0.0, 8.0, 0.0, 0.0};
  auto refs = straight_refs(x0, 8.0, n, cfg.ts);
  for (auto & r : refs) {
    r.x.py = 0.0;
  }
  const auto horizon = empty_horizon(n);
  const auto cold = solver.solve(x0, refs, horizon);
  REQUIRE(cold.status == udmc::SolveStatus::converged);

  // One closed-loop step later, seeded with the shifted previous solution.
  const udmc::VehicleState x1 = cold.x[1];
  auto refs1 = straight_refs(x1, 8.0, n, cfg.ts);
  for (auto & r : refs1) {
    r.x.py = 0.0;
  }
  const auto warm = solver.solve(x1, refs1, horizon, &cold);
  REQUIRE(warm.status == udmc::SolveStatus::converged);
  REQUIRE(warm.kkt_feas <= cfg.tol_kkt);
}
