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

#ifndef UDMC__SIM_HPP_
#define UDMC__SIM_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "udmc/common.hpp"
#include "udmc/dynamics.hpp"
#include "udmc/gpr.hpp"
#include "udmc/lane_map.hpp"
#include "udmc/ocp.hpp"
#include "udmc/pf_params.hpp"
#include "udmc/potential_field.hpp"
#include "udmc/reference.hpp"
#include "udmc/route.hpp"
#include "udmc/types.hpp"

namespace udmc
{

class ScenarioError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

struct SvSpawn
{
  std::string lane;
  double s{0.0};
  double speed{0.0};
  double desired_speed{0.0};
  double length{4.5};
  bool randomize{true};  ///< batch runs may redraw position and speed
};

/// Pedestrian walking at constant velocity from start, active on [t_start, t_end].
struct PedestrianScript
{
  Vec2 start{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  double t_start{0.0};
  double t_end{1e9};
};

inline std::optional<Vec2> pedestrian_position(const PedestrianScript & p, double t)
{
  if (t < p.t_start || t > p.t_end) {
    return std::nullopt;
  }
  return Vec2(p.start + (t - p.t_start) * p.velocity);
}

struct SpawnBand
{
  double near_s{5.0};
  double far_s{300.0};
  double min_gap{10.0};
  double speed_jitter{0.15};
};

struct Scenario
{
  std::string name;
  LaneMap map;
  std::string ego_lane;
  double ego_s{0.0};
  double ego_speed{0.0};
  Vec2 goal{0.0, 0.0};
  double target_speed{10.0};
  std::vector<SvSpawn> vehicles;
  std::vector<PedestrianScript> pedestrians;
  SpawnBand spawn;
  std::uint64_t seed{1};

  void validate() const
  {
    map.validate();
    const int ei = map.index_of(ego_lane);
    if (ei < 0) {
      throw ScenarioError("scenario: unknown ego lane " + ego_lane);
    }
    if (ego_s < 0.0 || ego_s > map.lanes[ei].path.length()) {
      throw ScenarioError("scenario: ego spawn off its lane");
    }
    if (!(target_speed > 0.0)) {
      throw ScenarioError("scenario: target speed must be positive");
    }
    for (const auto & v : vehicles) {
      const int li = map.index_of(v.lane);
      if (li < 0) {
        throw ScenarioError("scenario: unknown vehicle lane " + v.lane);
      }
      if (v.s < 0.0 || v.s > map.lanes[li].path.length()) {
        throw ScenarioError("scenario: vehicle spawn off its lane");
      }
      if (v.speed < 0.0 || v.desired_speed < 0.0) {
        throw ScenarioError("scenario: vehicle speeds must be non-negative");
      }
    }
    // Spawns must be collision-free at t = 0.
    for (size_t i = 0; i < vehicles.size(); ++i) {
      for (size_t j = i + 1; j < vehicles.size(); ++j) {
        if (vehicles[i].lane == vehicles[j].lane &&
            std::abs(vehicles[i].s - vehicles[j].s) <
              0.5 * (vehicles[i].length + vehicles[j].length)) {
          throw ScenarioError("scenario: overlapping vehicle spawns");
        }
      }
      if (vehicles[i].lane == ego_lane && std::abs(vehicles[i].s - ego_s) < 5.0) {
        throw ScenarioError("scenario: vehicle spawn overlaps the ego");
      }
    }
  }
};

inline Scenario scenario_from_json(const nlohmann::json & j)
{
  Scenario sc;
  sc.name = j.value("name", std::string("scenario"));
  if (!j.contains("map")) {
    throw ParseError("scenario: missing map");
  }
  sc.map = lane_map_from_json(j.at("map"));
  const auto & ego = j.at("ego");
  sc.ego_lane = ego.at("lane").get<std::string>();
  sc.ego_s = ego.value("s", 0.0);
  sc.ego_speed = ego.value("speed", 0.0);
  const auto & goal = j.at("goal");
  sc.goal = Vec2(goal[0].get<double>(), goal[1].get<double>());
  sc.target_speed = j.value("target_speed", 10.0);
  sc.seed = j.value("seed", std::uint64_t{1});
  for (const auto & v : j.value("vehicles", nlohmann::json::array())) {
    SvSpawn s;
    s.lane = v.at("lane").get<std::string>();
    s.s = v.at("s").get<double>();
    s.speed = v.value("speed", 0.0);
    s.desired_speed = v.value("desired_speed", s.speed);
    s.length = v.value("length", 4.5);
    s.randomize = v.value("randomize", true);
    sc.vehicles.push_back(s);
  }
  for (const auto & p : j.value("pedestrians", nlohmann::json::array())) {
    PedestrianScript s;
    s.start = Vec2(p.at("start")[0].get<double>(), p.at("start")[1].get<double>());
    s.velocity = Vec2(p.at("velocity")[0].get<double>(), p.at("velocity")[1].get<double>());
    s.t_start = p.value("t_start", 0.0);
    s.t_end = p.value("t_end", 1e9);
    sc.pedestrians.push_back(s);
  }
  if (j.contains("spawn")) {
    const auto & b = j.at("spawn");
    sc.spawn.near_s = b.value("near", sc.spawn.near_s);
    sc.spawn.far_s = b.value("far", sc.spawn.far_s);
    sc.spawn.min_gap = b.value("min_gap", sc.spawn.min_gap);
    sc.spawn.speed_jitter = b.value("speed_jitter", sc.spawn.speed_jitter);
  }
  sc.validate();
  return sc;
}

inline Scenario load_scenario(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw ParseError("scenario: cannot open " + path);
  }
  nlohmann::json j;
  in >> j;
  return scenario_from_json(j);
}

/// Redraws positions and speeds of the randomizable spawns inside the band,
/// keeping the minimum gap to every already placed vehicle on the same lane
/// and to the ego. Deterministic in the seed.
inline Scenario randomize_spawns(const Scenario & base, std::uint64_t seed)
{
  Scenario sc = base;
  sc.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (size_t i = 0; i < sc.vehicles.size(); ++i) {
    SvSpawn & v = sc.vehicles[i];
    if (!v.randomize) {
      continue;
    }
    const double len = sc.map.lanes[sc.map.index_of(v.lane)].path.length();
    const double lo = std::min(sc.spawn.near_s, len - 5.0);
    const double hi = std::max(lo, std::min(sc.spawn.far_s, len - 5.0));
    double s = v.s;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double cand = lo + (hi - lo) * unit(rng);
      bool ok = true;
      for (size_t k = 0; k < sc.vehicles.size(); ++k) {
        if (k != i && sc.vehicles[k].lane == v.lane &&
            std::abs(sc.vehicles[k].s - cand) < sc.spawn.min_gap) {
          ok = false;
          break;
        }
      }
      if (ok && v.lane == sc.ego_lane && std::abs(cand - sc.ego_s) < sc.spawn.min_gap) {
        ok = false;
      }
      if (ok) {
        s = cand;
        break;
      }
    }
    v.s = s;
    const double factor = 1.0 + sc.spawn.speed_jitter * (2.0 * unit(rng) - 1.0);
    v.speed *= factor;
    v.desired_speed *= factor;
  }
  sc.validate();
  return sc;
}

// ---------------------------------------------------------------------------
// Surrounding-vehicle autopilot
// ---------------------------------------------------------------------------

struct IdmParams
{
  double time_gap{1.5};      ///< desired headway [s]
  double comfort_decel{2.0}; ///< comfortable braking [m/s^2]
  double max_decel{6.0};     ///< physical braking limit [m/s^2]
  double accel_max{1.5};     ///< free-road acceleration [m/s^2]
  double min_gap{2.0};       ///< standstill clearance [m]
  double ib_threshold{-4.0}; ///< commanded decel counted as sudden braking
  double ib_radius{20.0};    ///< ego interaction radius for IB counting
};

/// Car-following acceleration with desired-gap regulation; net_gap is
/// bumper-to-bumper, closing = own speed minus leader speed.
inline double idm_accel(
  double v, double v_desired, bool has_leader, double net_gap, double closing,
  const IdmParams & p)
{
  const double v0 = std::max(v_desired, 0.1);
  double a = p.accel_max * (1.0 - std::pow(v / v0, 4.0));
  if (has_leader) {
    const double s_star =
      p.min_gap +
      std::max(0.0, v * p.time_gap + v * closing / (2.0 * std::sqrt(p.accel_max * p.comfort_decel)));
    const double s = std::max(net_gap, 0.1);
    a -= p.accel_max * sq(s_star / s);
  }
  return std::clamp(a, -p.max_decel, p.accel_max);
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

struct SvState
{
  int spawn_index{0};
  int lane{0};
  double s{0.0};
  double speed{0.0};
  double length{4.5};
  double desired_speed{0.0};
  double cmd_accel{0.0};        ///< autopilot command from the last step
  bool leader_is_ego{false};    ///< last step followed the ego
  double gap_to_ego{1e9};       ///< Euclidean distance to the ego center
  VehicleState pose;
  std::deque<VehicleState> history;  ///< newest last, capped at kHistorySteps
};

struct WorldState
{
  double t{0.0};
  VehicleState ego;
  std::vector<SvState> svs;
};

inline VehicleState sv_vehicle_state(const LaneMap & map, const SvState & sv)
{
  const Pose2 pose = map.lanes[sv.lane].path.pose(sv.s);
  return VehicleState{pose.p.x(), pose.p.y(), pose.heading, sv.speed, 0.0, 0.0};
}

inline WorldState init_world(const Scenario & sc)
{
  WorldState w;
  const int ei = sc.map.index_of(sc.ego_lane);
  const Pose2 ep = sc.map.lanes[ei].path.pose(sc.ego_s);
  w.ego = VehicleState{ep.p.x(), ep.p.y(), ep.heading, sc.ego_speed, 0.0, 0.0};
  for (size_t i = 0; i < sc.vehicles.size(); ++i) {
    SvState sv;
    sv.spawn_index = static_cast<int>(i);
    sv.lane = sc.map.index_of(sc.vehicles[i].lane);
    sv.s = sc.vehicles[i].s;
    sv.speed = sc.vehicles[i].speed;
    sv.length = sc.vehicles[i].length;
    sv.desired_speed = sc.vehicles[i].desired_speed;
    sv.pose = sv_vehicle_state(sc.map, sv);
    sv.history.push_back(sv.pose);
    w.svs.push_back(sv);
  }
  return w;
}

/// Advances every surrounding vehicle with the car-following autopilot, the
/// ego with the bicycle dynamics, and time by ts.
inline void step_world(
  WorldState & w, const Scenario & sc, const ControlInput & ego_control,
  const VehicleParams & vp, const IdmParams & idm, double ts)
{
  const auto ego_hit = sc.map.nearest_lane(Vec2(w.ego.px, w.ego.py), 6.0);

  // Command pass over a frozen world, then integrate.
  for (auto & sv : w.svs) {
    const Lane & lane = sc.map.lanes[sv.lane];
    bool has_leader = false;
    double net_gap = 1e9;
    double closing = 0.0;
    bool from_ego = false;
    const auto consider = [&](double gap_center, double leader_speed, double leader_len,
                              bool is_ego) {
      const double net = gap_center - 0.5 * (sv.length + leader_len);
      if (net < net_gap) {
        net_gap = net;
        closing = sv.speed - leader_speed;
        has_leader = true;
        from_ego = is_ego;
      }
    };
    for (const auto & other : w.svs) {
      if (&other != &sv && other.lane == sv.lane && other.s > sv.s) {
        consider(other.s - sv.s, other.speed, other.length, false);
      }
    }
    if (ego_hit && ego_hit->lane_index == sv.lane && ego_hit->s > sv.s) {
      consider(ego_hit->s - sv.s, w.ego.vx, 4.5, true);
    }
    // A leader just past a seam is still a leader: scan ahead through the
    // successor chain the vehicle will take.
    {
      double base = lane.path.length() - sv.s;
      int li = sv.lane;
      for (int hop = 0; hop < 2 && base < 60.0; ++hop) {
        const Lane & cur = sc.map.lanes[li];
        if (cur.successors.empty()) {
          break;
        }
        const int ni = sc.map.index_of(cur.successors.front());
        for (const auto & other : w.svs) {
          if (&other != &sv && other.lane == ni) {
            consider(base + other.s, other.speed, other.length, false);
          }
        }
        if (ego_hit && ego_hit->lane_index == ni) {
          consider(base + ego_hit->s, w.ego.vx, 4.5, true);
        }
        base += sc.map.lanes[ni].path.length();
        li = ni;
      }
    }
    for (const auto & light : sc.map.lights) {
      if (light.lane == lane.id && light.stop_s > sv.s && light.is_red(w.t)) {
        consider(light.stop_s - sv.s, 0.0, sv.length, false);
      }
    }
    const double v_desired = std::min(sv.desired_speed, lane.speed_limit);
    sv.cmd_accel = idm_accel(sv.speed, v_desired, has_leader, net_gap, closing, idm);
    sv.leader_is_ego = from_ego;
    sv.gap_to_ego = std::hypot(sv.pose.px - w.ego.px, sv.pose.py - w.ego.py);
  }

  for (auto & sv : w.svs) {
    sv.speed = std::max(0.0, sv.speed + ts * sv.cmd_accel);
    sv.s += ts * sv.speed;
    const Lane * lane = &sc.map.lanes[sv.lane];
    while (sv.s > lane->path.length() && !lane->successors.empty()) {
      sv.s -= lane->path.length();
      sv.lane = sc.map.index_of(lane->successors.front());
      lane = &sc.map.lanes[sv.lane];
    }
    sv.pose = sv_vehicle_state(sc.map, sv);
    sv.history.push_back(sv.pose);
    while (static_cast<int>(sv.history.size()) > kHistorySteps) {
      sv.history.pop_front();
    }
  }

  w.ego = bicycle_step(w.ego, ego_control, vp, ts);
  w.t += ts;
}

// ---------------------------------------------------------------------------
// Event detection
// ---------------------------------------------------------------------------

enum class EventKind { collision, rule_violation, induced_braking };

struct Event
{
  EventKind kind{EventKind::collision};
  double t{0.0};
  std::string detail;
};

/// Collision test between two two-circle footprints.
inline bool footprints_collide(
  const VehicleState & a, const VehicleState & b, double r_v)
{
  const auto [a0, a1] = circle_centers<double>(a.px, a.py, a.phi, r_v);
  const auto [b0, b1] = circle_centers<double>(b.px, b.py, b.phi, r_v);
  const std::pair<double, double> as[2] = {a0, a1};
  const std::pair<double, double> bs[2] = {b0, b1};
  for (const auto & ca : as) {
    for (const auto & cb : bs) {
      if (std::hypot(ca.first - cb.first, ca.second - cb.second) < 2.0 * r_v) {
        return true;
      }
    }
  }
  return false;
}

inline constexpr double kPedestrianRadius = 0.35;

inline bool hits_pedestrian(const VehicleState & ego, const Vec2 & ped, double r_v)
{
  const auto [e0, e1] = circle_centers<double>(ego.px, ego.py, ego.phi, r_v);
  return std::hypot(e0.first - ped.x(), e0.second - ped.y()) < r_v + kPedestrianRadius ||
         std::hypot(e1.first - ped.x(), e1.second - ped.y()) < r_v + kPedestrianRadius;
}

/// Stateful detector: crossings, red lines and sudden braking are counted on
/// rising edges so one maneuver is one event.
class EventTracker
{
public:
  std::vector<Event> detect(
    const Scenario & sc, const WorldState & w, const PFParams & pf, const IdmParams & idm)
  {
    std::vector<Event> events;
    const double t = w.t;

    for (const auto & sv : w.svs) {
      if (footprints_collide(w.ego, sv.pose, pf.r_V)) {
        events.push_back({EventKind::collision, t, "vehicle " + std::to_string(sv.spawn_index)});
      }
    }
    for (size_t i = 0; i < sc.pedestrians.size(); ++i) {
      const auto pos = pedestrian_position(sc.pedestrians[i], t);
      if (pos && hits_pedestrian(w.ego, *pos, pf.r_V)) {
        events.push_back({EventKind::collision, t, "pedestrian " + std::to_string(i)});
      }
    }

    detect_rule_violations(sc, w, events);

    for (const auto & sv : w.svs) {
      const bool braking = sv.cmd_accel <= idm.ib_threshold && sv.leader_is_ego &&
                           sv.gap_to_ego <= idm.ib_radius;
      const bool was = ib_latched_.count(sv.spawn_index) > 0;
      if (braking && !was) {
        events.push_back(
          {EventKind::induced_braking, t, "vehicle " + std::to_string(sv.spawn_index)});
        ib_latched_.insert(sv.spawn_index);
      } else if (!braking && was) {
        ib_latched_.erase(sv.spawn_index);
      }
    }
    return events;
  }

private:
  void detect_rule_violations(
    const Scenario & sc, const WorldState & w, std::vector<Event> & events)
  {
    const Vec2 p(w.ego.px, w.ego.py);
    const bool inside_zone = sc.map.in_intersection(p);
    const auto hit = sc.map.nearest_lane(p, 10.0);

    // Red stop line, checked on the lane the ego occupied before the move.
    if (prev_hit_ && !prev_in_zone_) {
      const Lane & lane = sc.map.lanes[prev_hit_->lane_index];
      for (const auto & light : sc.map.lights) {
        if (light.lane != lane.id) {
          continue;
        }
        const double s_now = hit && hit->lane_index == prev_hit_->lane_index
                               ? hit->s
                               : lane.path.project(p);
        if (prev_hit_->s <= light.stop_s && s_now > light.stop_s && light.is_red(w.t) &&
            std::abs(lane.path.lateral_offset(p, s_now)) <= 0.5 * lane.width + 0.5) {
          events.push_back({EventKind::rule_violation, w.t, "red light " + light.id});
        }
      }
    }

    if (inside_zone) {
      prev_hit_ = std::nullopt;
      prev_in_zone_ = true;
      return;
    }

    // Off-road: beyond every centerline by a full lane width.
    const auto near = sc.map.nearest_lane(p, 3.5);
    if (!near) {
      if (!offroad_latched_) {
        events.push_back({EventKind::rule_violation, w.t, "off road"});
        offroad_latched_ = true;
      }
    } else {
      offroad_latched_ = false;
    }

    if (hit) {
      const Lane & lane = sc.map.lanes[hit->lane_index];
      const double half = 0.5 * lane.width;

      // Outward crossing while still assigned to the same lane (road edge).
      const int side = hit->lateral > 0.0 ? 1 : -1;
      const bool outside = std::abs(hit->lateral) > half;
      const auto key = std::make_pair(hit->lane_index, side);
      if (outside) {
        const MarkingKind kind = side > 0 ? lane.left_marking : lane.right_marking;
        if (kind == MarkingKind::noncrossable && !outside_latched_.count(key)) {
          events.push_back(
            {EventKind::rule_violation, w.t, "crossed marking on lane " + lane.id});
          outside_latched_.insert(key);
        }
      } else {
        outside_latched_.erase(std::make_pair(hit->lane_index, 1));
        outside_latched_.erase(std::make_pair(hit->lane_index, -1));
      }

      // Lateral reassignment to a non-successor lane crosses the boundary
      // between the two; longitudinal handoffs are not crossings.
      if (prev_hit_ && !prev_in_zone_ && prev_hit_->lane_index != hit->lane_index) {
        const Lane & prev = sc.map.lanes[prev_hit_->lane_index];
        const bool handoff =
          std::find(prev.successors.begin(), prev.successors.end(), lane.id) !=
            prev.successors.end() ||
          std::find(lane.successors.begin(), lane.successors.end(), prev.id) !=
            lane.successors.end();
        if (!handoff) {
          MarkingKind crossed;
          if (prev.left_neighbor == lane.id) {
            crossed = prev.left_marking;
          } else if (prev.right_neighbor == lane.id) {
            crossed = prev.right_marking;
          } else {
            crossed = prev_hit_->lateral > 0.0 ? prev.left_marking : prev.right_marking;
          }
          if (crossed == MarkingKind::noncrossable) {
            events.push_back(
              {EventKind::rule_violation, w.t,
               "crossed marking between " + prev.id + " and " + lane.id});
          }
        }
      }
    }

    prev_hit_ = hit;
    prev_in_zone_ = false;
  }

  std::optional<LaneHit> prev_hit_;
  bool prev_in_zone_{false};
  bool offroad_latched_{false};
  std::set<std::pair<int, int>> outside_latched_;
  std::set<int> ib_latched_;
};

// ---------------------------------------------------------------------------
// Scene assembly
// ---------------------------------------------------------------------------

/// Cross-section markings at the stage reference point: the leftmost lane
/// contributes its left marking, every lane its right one, so each physical
/// line appears exactly once.
inline void emit_cross_section_markings(
  const LaneMap & map, const Vec2 & ref_p, std::vector<LaneMarkingRef> & out)
{
  const auto hit = map.nearest_lane(ref_p, 6.0);
  if (!hit) {
    return;
  }
  const std::vector<int> chain = map.cross_section(hit->lane_index);
  for (size_t k = 0; k < chain.size(); ++k) {
    const Lane & lane = map.lanes[chain[k]];
    const double s = lane.path.project(ref_p);
    const Pose2 center = lane.path.pose(s);
    if (k == 0) {
      LaneMarkingRef left;
      left.center = center;
      left.kind = lane.left_marking;
      left.side = 1;
      left.half_width = 0.5 * lane.width;
      out.push_back(left);
    }
    LaneMarkingRef right;
    right.center = center;
    right.kind = lane.right_marking;
    right.side = -1;
    right.half_width = 0.5 * lane.width;
    out.push_back(right);
  }
}

/// Builds the per-stage scenes for one solve: predicted vehicle poses,
/// scripted pedestrians, lane markings or their virtual replacements, the
/// red-light gate, and one leader fixed for the whole horizon.
inline ObstacleHorizon assemble_horizon(
  const LaneMap & map, const Path2D & route_path,
  const std::vector<ReferencePoint> & refs, const WorldState & w,
  const std::vector<ScenePose> & sv_now,
  const std::vector<Eigen::VectorXd> & sv_predictions,
  const std::vector<PedestrianScript> & pedestrians, double ts, const PFParams & pf)
{
  const int n = static_cast<int>(refs.size()) - 1;
  ObstacleHorizon horizon;
  horizon.slices.resize(n);

  const int leader = select_leader(w.ego, sv_now, pf);
  const double s_ego = route_path.project(Vec2(w.ego.px, w.ego.py));
  const double lateral_to_target =
    std::abs(route_path.lateral_offset(Vec2(w.ego.px, w.ego.py), s_ego));

  for (int tau = 1; tau <= n; ++tau) {
    PotentialScene & slice = horizon.slices[tau - 1];
    const Vec2 ref_p(refs[tau].x.px, refs[tau].x.py);
    const double t_tau = w.t + tau * ts;

    slice.vehicles.reserve(sv_now.size());
    for (size_t k = 0; k < sv_now.size(); ++k) {
      ScenePose pose;
      pose.px = sv_predictions[k](3 * (tau - 1) + 0);
      pose.py = sv_predictions[k](3 * (tau - 1) + 1);
      pose.phi = sv_predictions[k](3 * (tau - 1) + 2);
      pose.speed = sv_now[k].speed;
      slice.vehicles.push_back(pose);
    }
    slice.leader_index = leader;

    for (const auto & ped : pedestrians) {
      const auto pos = pedestrian_position(ped, t_tau);
      if (pos && (*pos - Vec2(w.ego.px, w.ego.py)).norm() <= pf.r_p) {
        slice.pedestrians.push_back(*pos);
      }
    }

    VirtualFieldInput vin;
    vin.route_pose = route_path.pose(refs[tau].s);
    vin.in_intersection = map.in_intersection(ref_p);
    const double look = std::min(refs[tau].s + 6.0, route_path.length());
    const double turn = wrap_angle(route_path.pose(look).heading - vin.route_pose.heading);
    vin.turn_ahead = std::abs(turn) > 0.25;
    vin.turn_dir = turn >= 0.0 ? 1 : -1;
    vin.lateral_to_target = lateral_to_target;
    vin.r_lane = 0.5 * pf.w_R;
    const VirtualFieldSet vfs = build_virtual_fields(vin, pf);

    if (vfs.replace_real) {
      slice.markings = vfs.markings;
    } else {
      emit_cross_section_markings(map, ref_p, slice.markings);
      slice.markings.insert(slice.markings.end(), vfs.markings.begin(), vfs.markings.end());
    }
    slice.tracking_penalty = vfs.tracking_penalty;

    const auto hit = map.nearest_lane(ref_p, 6.0);
    if (hit) {
      const Lane & lane = map.lanes[hit->lane_index];
      const auto emit_gate = [&](double stop_s, bool red) {
        LightGate gate;
        gate.stop_line = lane.path.pose(stop_s);
        // Side walls follow the lane at the subject, not the stop line's
        // axis: on a curved approach the line's frame would misplace them
        // and push the subject back long before the line.
        LaneMarkingRef side;
        side.center = lane.path.pose(hit->s);
        side.kind = MarkingKind::virtual_marking;
        side.half_width = 0.5 * lane.width;
        side.side = 1;
        gate.left = side;
        side.side = -1;
        gate.right = side;
        gate.red = red;
        slice.light = gate;
      };
      for (const auto & light : map.lights) {
        if (light.lane != lane.id || light.stop_s <= hit->s) {
          continue;
        }
        emit_gate(light.stop_s, light.is_red(t_tau));
        break;
      }
      for (const auto & gate : map.yields) {
        if (slice.light || gate.lane != lane.id || gate.stop_s <= hit->s) {
          continue;
        }
        for (const auto & c : gate.conflicts) {
          const int ci = map.index_of(c.lane);
          for (const auto & sv : w.svs) {
            if (sv.lane == ci && sv.s >= c.s_min && sv.s <= c.s_max) {
              emit_gate(gate.stop_s, true);
              break;
            }
          }
          if (slice.light) {
            break;
          }
        }
      }
    }
  }
  return horizon;
}

// ---------------------------------------------------------------------------
// Metrics and logs
// ---------------------------------------------------------------------------

struct TrialMetrics
{
  double comp_time_mean_ms{0.0};
  double comp_time_std_ms{0.0};
  int collisions{0};
  int trv{0};
  int ib{0};
  double ttc_alarm_duration_s{0.0};
  double ttc_alarm_percent{0.0};  ///< alarmed share of ticks with a valid leader
  double min_leader_ttc{std::numeric_limits<double>::infinity()};
  double travel_time{0.0};
  double mean_speed{0.0};
  bool destination_reached{false};
  bool success{false};
  std::string failure_cause;  ///< empty on success
};

inline std::string metrics_to_text(const TrialMetrics & m)
{
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "comp_time_mean_ms: " << m.comp_time_mean_ms << "\n";
  os << "comp_time_std_ms: " << m.comp_time_std_ms << "\n";
  os << "collisions: " << m.collisions << "\n";
  os << "trv: " << m.trv << "\n";
  os << "ib: " << m.ib << "\n";
  os << "ttc_alarm_duration_s: " << m.ttc_alarm_duration_s << "\n";
  os << "ttc_alarm_percent: " << m.ttc_alarm_percent << "\n";
  if (std::isfinite(m.min_leader_ttc)) {
    os << "min_leader_ttc: " << m.min_leader_ttc << "\n";
  } else {
    os << "min_leader_ttc: inf\n";
  }
  os << "travel_time: " << m.travel_time << "\n";
  os << "mean_speed: " << m.mean_speed << "\n";
  os << "destination_reached: " << (m.destination_reached ? 1 : 0) << "\n";
  os << "success: " << (m.success ? 1 : 0) << "\n";
  os << "failure_cause: " << (m.failure_cause.empty() ? "none" : m.failure_cause) << "\n";
  return os.str();
}

inline const char * kTrajectoryHeader =
  "t px py phi vx vy omega a delta pf_nr pf_cr pf_v pf_tl pf_ttc pf_pd solve_ms";

/// Drops the solver wall-time column, the only nondeterministic field, so
/// logs from identical seeds can be compared byte for byte.
inline std::string strip_wall_time(const std::string & log)
{
  std::istringstream in(log);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto cut = line.find_last_of(' ');
    out << (cut == std::string::npos ? line : line.substr(0, cut)) << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Closed-loop trial
// ---------------------------------------------------------------------------

struct TrialConfig
{
  OcpConfig ocp;
  PFParams pf;
  VehicleParams vehicle;
  IdmParams idm;
  ReferenceOptions reference;
  bool use_prediction{true};                 ///< constant velocity when false
  const GpPredictor * predictor{nullptr};    ///< optional learned predictor
  double goal_radius{2.5};
  bool keep_log{true};
  bool trace_solver{false};                  ///< keep per-iteration SQP rows
};

struct TrialResult
{
  TrialMetrics metrics;
  std::string trajectory_log;
  std::string solver_trace;
  std::vector<Event> events;
};

inline double kinematic_lower_bound(double route_length, double target_speed)
{
  return route_length / std::max(target_speed, 0.1);
}

inline TrialResult run_trial(const Scenario & sc, const TrialConfig & cfg)
{
  sc.validate();
  TrialResult out;
  const int ei = sc.map.index_of(sc.ego_lane);
  const Vec2 start = sc.map.lanes[ei].path.point(sc.ego_s);
  const Route route = plan_route(sc.map, start, sc.goal);
  const double route_len = route.path.length();
  const double timeout = 3.0 * kinematic_lower_bound(route_len, sc.target_speed);
  const Vec2 destination = route.path.point(route_len);

  WorldState w = init_world(sc);
  EventTracker tracker;
  SqpSolver solver(cfg.ocp, cfg.pf, cfg.vehicle);
  OcpSolution prev;
  bool have_prev = false;

  std::ostringstream log;
  log << std::fixed << std::setprecision(6) << kTrajectoryHeader << "\n";
  std::ostringstream trace;
  trace << std::fixed << std::setprecision(6);

  std::vector<double> solve_times;
  double speed_sum = 0.0;
  int ticks = 0;
  int valid_ttc_ticks = 0;
  int alarmed_ticks = 0;
  const double ts = cfg.ocp.ts;
  const int n = cfg.ocp.horizon;

  std::string stop_cause;
  while (true) {
    if ((Vec2(w.ego.px, w.ego.py) - destination).norm() <= cfg.goal_radius) {
      out.metrics.destination_reached = true;
      break;
    }
    if (w.t > timeout) {
      stop_cause = "timeout";
      break;
    }

    // Perception: surrounding vehicles within range, with predicted futures.
    std::vector<ScenePose> sv_now;
    std::vector<Eigen::VectorXd> sv_pred;
    for (const auto & sv : w.svs) {
      const double dist = std::hypot(sv.pose.px - w.ego.px, sv.pose.py - w.ego.py);
      if (dist > cfg.pf.r_p) {
        continue;
      }
      sv_now.push_back(ScenePose{sv.pose.px, sv.pose.py, sv.pose.phi, sv.speed});
      if (cfg.use_prediction && cfg.predictor != nullptr &&
          static_cast<int>(sv.history.size()) == kHistorySteps) {
        const std::vector<VehicleState> hist(sv.history.begin(), sv.history.end());
        sv_pred.push_back(cfg.predictor->predict_mean(pack_history(hist)));
      } else if (cfg.use_prediction) {
        sv_pred.push_back(constant_velocity_prediction(sv.pose, ts));
      } else {
        Eigen::VectorXd frozen(kGprOutputDim);
        for (int k = 0; k < kFutureSteps; ++k) {
          frozen(3 * k + 0) = sv.pose.px;
          frozen(3 * k + 1) = sv.pose.py;
          frozen(3 * k + 2) = sv.pose.phi;
        }
        sv_pred.push_back(frozen);
      }
    }

    const auto refs =
      sample_reference(route.path, w.ego, sc.target_speed, n, ts, cfg.reference);
    const ObstacleHorizon horizon = assemble_horizon(
      sc.map, route.path, refs, w, sv_now, sv_pred, sc.pedestrians, ts, cfg.pf);

    const auto t0 = std::chrono::steady_clock::now();
    const OcpSolution sol =
      solver.solve(w.ego, refs, horizon, have_prev ? &prev : nullptr, cfg.trace_solver);
    const auto t1 = std::chrono::steady_clock::now();
    if (cfg.trace_solver) {
      trace << "t " << w.t << " status " << to_string(sol.status) << "\n";
      for (const auto & row : sol.trace) {
        trace << "  iter " << row.iter << " cost " << row.cost << " merit " << row.merit
              << " kkt_stat " << row.kkt_stat << " kkt_feas " << row.kkt_feas << " alpha "
              << row.alpha << " nu " << row.nu << " step " << row.step_norm << "\n";
      }
    }
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    solve_times.push_back(ms);
    prev = sol;
    have_prev = true;

    // Leader TTC bookkeeping on the actual world.
    if (!horizon.slices.empty() && horizon.slices[0].leader_index >= 0) {
      const ScenePose & lead = sv_now[horizon.slices[0].leader_index];
      ++valid_ttc_ticks;
      const double gap = std::hypot(lead.px - w.ego.px, lead.py - w.ego.py);
      const double closing = w.ego.vx - lead.speed;
      const double ttc = closing > 1e-6 ? gap / closing : std::numeric_limits<double>::infinity();
      out.metrics.min_leader_ttc = std::min(out.metrics.min_leader_ttc, ttc);
      if (ttc < cfg.pf.t_alarm) {
        ++alarmed_ticks;
      }
    }

    if (cfg.keep_log) {
      const FieldBreakdown<double> fb = horizon.slices.empty()
                                          ? FieldBreakdown<double>{}
                                          : field_breakdown(
                                              horizon.slices[0], w.ego, cfg.pf,
                                              cfg.ocp.field);
      log << w.t << " " << w.ego.px << " " << w.ego.py << " " << w.ego.phi << " " << w.ego.vx
          << " " << w.ego.vy << " " << w.ego.omega << " " << sol.u[0].a << " "
          << sol.u[0].delta << " " << fb.nr << " " << fb.cr << " " << fb.v << " " << fb.tl
          << " " << fb.ttc << " " << fb.pd << " " << ms << "\n";
    }

    speed_sum += w.ego.vx;
    ++ticks;

    step_world(w, sc, sol.u[0], cfg.vehicle, cfg.idm, ts);

    const auto events = tracker.detect(sc, w, cfg.pf, cfg.idm);
    for (const auto & e : events) {
      out.events.push_back(e);
      switch (e.kind) {
        case EventKind::collision:
          ++out.metrics.collisions;
          break;
        case EventKind::rule_violation:
          ++out.metrics.trv;
          break;
        case EventKind::induced_braking:
          ++out.metrics.ib;
          break;
      }
    }
    if (out.metrics.collisions > 0) {
      stop_cause = "collision";
      break;
    }
  }

  out.metrics.travel_time = w.t;
  out.metrics.mean_speed = ticks > 0 ? speed_sum / ticks : 0.0;
  if (!solve_times.empty()) {
    double mean = 0.0;
    for (double v : solve_times) {
      mean += v;
    }
    mean /= static_cast<double>(solve_times.size());
    double var = 0.0;
    for (double v : solve_times) {
      var += sq(v - mean);
    }
    out.metrics.comp_time_mean_ms = mean;
    out.metrics.comp_time_std_ms = std::sqrt(var / static_cast<double>(solve_times.size()));
  }
  out.metrics.ttc_alarm_duration_s = alarmed_ticks * ts;
  out.metrics.ttc_alarm_percent =
    valid_ttc_ticks > 0 ? 100.0 * alarmed_ticks / valid_ttc_ticks : 0.0;
  out.metrics.success = out.metrics.collisions == 0 && out.metrics.trv == 0 &&
                        out.metrics.destination_reached;
  if (!out.metrics.success) {
    if (!stop_cause.empty()) {
      out.metrics.failure_cause = stop_cause;
    } else if (out.metrics.trv > 0) {
      out.metrics.failure_cause = "rule_violation";
    } else {
      out.metrics.failure_cause = "incomplete";
    }
  }
  out.trajectory_log = log.str();
  out.solver_trace = trace.str();
  return out;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct BatchResult
{
  std::vector<TrialMetrics> trials;
  double success_rate{0.0};
};

inline BatchResult run_batch(
  const Scenario & base, const TrialConfig & cfg, int trials, std::uint64_t seed_base)
{
  if (trials < 1) {
    throw std::invalid_argument("run_batch: need at least one trial");
  }
  BatchResult out;
  TrialConfig trial_cfg = cfg;
  trial_cfg.keep_log = false;
  int successes = 0;
  for (int i = 0; i < trials; ++i) {
    const Scenario sc = randomize_spawns(base, seed_base + static_cast<std::uint64_t>(i));
    const TrialResult r = run_trial(sc, trial_cfg);
    out.trials.push_back(r.metrics);
    if (r.metrics.success) {
      ++successes;
    }
  }
  out.success_rate = static_cast<double>(successes) / static_cast<double>(trials);
  return out;
}

inline std::string batch_to_text(const BatchResult & b)
{
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "trials: " << b.trials.size() << "\n";
  os << "success_rate: " << b.success_rate << "\n";
  for (size_t i = 0; i < b.trials.size(); ++i) {
    const TrialMetrics & m = b.trials[i];
    os << "trial " << i << ": success=" << (m.success ? 1 : 0)
       << " cause=" << (m.failure_cause.empty() ? "none" : m.failure_cause)
       << " collisions=" << m.collisions << " trv=" << m.trv << " ib=" << m.ib
       << " travel_time=" << m.travel_time << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Predictor training data
// ---------------------------------------------------------------------------

/// Rolls the scenario's traffic forward without an ego and collects sliding
/// window records for predictor training.
inline TrajectoryDataset collect_training_data(
  const Scenario & sc, const IdmParams & idm, double ts, double duration)
{
  Scenario ghost = sc;
  ghost.ego_speed = 0.0;
  WorldState w = init_world(ghost);
  // Park the ego far away so the autopilot never reacts to it.
  w.ego.px = 1e6;
  w.ego.py = 1e6;
  w.ego.vx = 0.0;

  std::vector<std::vector<VehicleState>> trails(w.svs.size());
  const int steps = static_cast<int>(duration / ts);
  const VehicleParams vp;
  for (int k = 0; k < steps; ++k) {
    for (size_t i = 0; i < w.svs.size(); ++i) {
      trails[i].push_back(w.svs[i].pose);
    }
    step_world(w, ghost, ControlInput{0.0, 0.0}, vp, idm, ts);
  }
  TrajectoryDataset data;
  for (const auto & trail : trails) {
    append_trajectory(data, trail);
  }
  return data;
}

}  // namespace udmc

#endif  // UDMC__SIM_HPP_
