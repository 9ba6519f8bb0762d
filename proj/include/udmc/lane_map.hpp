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

#ifndef UDMC__LANE_MAP_HPP_
#define UDMC__LANE_MAP_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "udmc/common.hpp"
#include "udmc/spline.hpp"

namespace udmc
{

/// Thrown when a map has no usable lanes.
class EmptyMap : public std::runtime_error
{
public:
  explicit EmptyMap(const std::string & what) : std::runtime_error(what) {}
};

enum class MarkingKind { noncrossable, crossable, virtual_marking };

inline MarkingKind marking_kind_from_string(const std::string & s)
{
  if (s == "noncrossable") {
    return MarkingKind::noncrossable;
  }
  if (s == "crossable") {
    return MarkingKind::crossable;
  }
  if (s == "virtual") {
    return MarkingKind::virtual_marking;
  }
  throw ParseError("unknown marking kind: " + s);
}

inline const char * to_string(MarkingKind k)
{
  switch (k) {
    case MarkingKind::noncrossable:
      return "noncrossable";
    case MarkingKind::crossable:
      return "crossable";
    default:
      return "virtual";
  }
}

struct Lane
{
  std::string id;
  double width{3.5};
  double speed_limit{13.9};
  MarkingKind left_marking{MarkingKind::crossable};
  MarkingKind right_marking{MarkingKind::noncrossable};
  std::vector<std::string> successors;
  std::string left_neighbor;   ///< empty when absent
  std::string right_neighbor;  ///< empty when absent
  Path2D path;
};

struct IntersectionZone
{
  std::string id;
  Vec2 center{0.0, 0.0};
  double radius{0.0};
};

/// Signal timing is a pure function of simulation time.
struct TrafficLight
{
  std::string id;
  std::string lane;    ///< controlled approach lane
  double stop_s{0.0};  ///< stop line arc position on that lane
  double period{0.0};  ///< 0 disables cycling
  std::vector<std::pair<double, double>> red_intervals;

  bool is_red(double t) const
  {
    const double tc = period > 0.0 ? std::fmod(t, period) : t;
    for (const auto & [lo, hi] : red_intervals) {
      if (tc >= lo && tc < hi) {
        return true;
      }
    }
    return false;
  }
};

/// Occupancy window on a lane whose traffic has priority.
struct ConflictWindow
{
  std::string lane;
  double s_min{0.0};
  double s_max{0.0};
};

/// Yield line on a merging approach. The subject holds at stop_s while any
/// vehicle occupies one of the conflict windows. Guidance only: the gate
/// shapes the field and is never a rule.
struct YieldGate
{
  std::string id;
  std::string lane;    ///< controlled approach lane
  double stop_s{0.0};  ///< hold position on that lane
  std::vector<ConflictWindow> conflicts;
};

struct LaneHit
{
  int lane_index{-1};
  double s{0.0};
  double lateral{0.0};
};

class LaneMap
{
public:
  std::vector<Lane> lanes;
  std::vector<IntersectionZone> intersections;
  std::vector<TrafficLight> lights;
  std::vector<YieldGate> yields;

  int index_of(const std::string & id) const
  {
    for (size_t i = 0; i < lanes.size(); ++i) {
      if (lanes[i].id == id) {
        return static_cast<int>(i);
      }
    }
    return -1;
  }

  const Lane & lane(const std::string & id) const
  {
    const int i = index_of(id);
    if (i < 0) {
      throw std::out_of_range("lane map: no lane with id " + id);
    }
    return lanes[i];
  }

  /// Lane whose centerline is closest to p, among lanes where p falls within
  /// max_lateral of the centerline. Ranking uses the distance to the clamped
  /// projection so a point past a lane's end is not judged by the lateral
  /// component alone. Ties break on lane order.
  std::optional<LaneHit> nearest_lane(const Vec2 & p, double max_lateral) const
  {
    std::optional<LaneHit> best;
    double best_dist = 0.0;
    for (size_t i = 0; i < lanes.size(); ++i) {
      const double s = lanes[i].path.project(p);
      const double lat = lanes[i].path.lateral_offset(p, s);
      const double dist = (lanes[i].path.point(s) - p).norm();
      if (dist > max_lateral) {
        continue;
      }
      if (!best || dist < best_dist - 1e-12) {
        best = LaneHit{static_cast<int>(i), s, lat};
        best_dist = dist;
      }
    }
    return best;
  }

  /// Laterally linked lanes containing `lane_index`, ordered left to right.
  std::vector<int> cross_section(int lane_index) const
  {
    std::vector<int> chain{lane_index};
    std::set<int> seen{lane_index};
    int cur = lane_index;
    while (true) {
      const std::string & ln = lanes[cur].left_neighbor;
      const int ni = ln.empty() ? -1 : index_of(ln);
      if (ni < 0 || seen.count(ni)) {
        break;
      }
      chain.insert(chain.begin(), ni);
      seen.insert(ni);
      cur = ni;
    }
    cur = lane_index;
    while (true) {
      const std::string & rn = lanes[cur].right_neighbor;
      const int ni = rn.empty() ? -1 : index_of(rn);
      if (ni < 0 || seen.count(ni)) {
        break;
      }
      chain.push_back(ni);
      seen.insert(ni);
      cur = ni;
    }
    return chain;
  }

  bool in_intersection(const Vec2 & p) const
  {
    for (const auto & z : intersections) {
      if ((p - z.center).norm() <= z.radius) {
        return true;
      }
    }
    return false;
  }

  void validate() const
  {
    if (lanes.empty()) {
      throw EmptyMap("lane map: no lanes");
    }
    for (const auto & l : lanes) {
      for (const auto & s : l.successors) {
        if (index_of(s) < 0) {
          throw ParseError("lane map: unknown successor " + s + " of lane " + l.id);
        }
      }
      if (!l.left_neighbor.empty() && index_of(l.left_neighbor) < 0) {
        throw ParseError("lane map: unknown left neighbor of lane " + l.id);
      }
      if (!l.right_neighbor.empty() && index_of(l.right_neighbor) < 0) {
        throw ParseError("lane map: unknown right neighbor of lane " + l.id);
      }
    }
    for (const auto & tl : lights) {
      if (index_of(tl.lane) < 0) {
        throw ParseError("lane map: traffic light " + tl.id + " controls unknown lane");
      }
    }
    for (const auto & y : yields) {
      if (index_of(y.lane) < 0) {
        throw ParseError("lane map: yield gate " + y.id + " controls unknown lane");
      }
      for (const auto & c : y.conflicts) {
        if (index_of(c.lane) < 0) {
          throw ParseError("lane map: yield gate " + y.id + " watches unknown lane");
        }
        if (!(c.s_min < c.s_max)) {
          throw ParseError("lane map: yield gate " + y.id + " window is empty");
        }
      }
    }
  }
};

inline LaneMap lane_map_from_json(const nlohmann::json & j)
{
  LaneMap map;
  if (!j.contains("lanes") || !j["lanes"].is_array() || j["lanes"].empty()) {
    throw EmptyMap("lane map: no lanes");
  }
  for (const auto & jl : j["lanes"]) {
    Lane l;
    l.id = jl.at("id").get<std::string>();
    l.width = jl.value("width", 3.5);
    l.speed_limit = jl.value("speed_limit", 13.9);
    l.left_marking = marking_kind_from_string(jl.value("left_marking", "crossable"));
    l.right_marking = marking_kind_from_string(jl.value("right_marking", "noncrossable"));
    if (jl.contains("successors")) {
      l.successors = jl["successors"].get<std::vector<std::string>>();
    }
    l.left_neighbor = jl.value("left_neighbor", "");
    l.right_neighbor = jl.value("right_neighbor", "");
    std::vector<Vec2> pts;
    for (const auto & jp : jl.at("centerline")) {
      pts.emplace_back(jp.at(0).get<double>(), jp.at(1).get<double>());
    }
    l.path = Path2D::through(pts);
    map.lanes.push_back(std::move(l));
  }
  if (j.contains("intersections")) {
    for (const auto & jz : j["intersections"]) {
      IntersectionZone z;
      z.id = jz.at("id").get<std::string>();
      z.center = Vec2(jz.at("center").at(0).get<double>(), jz.at("center").at(1).get<double>());
      z.radius = jz.at("radius").get<double>();
      map.intersections.push_back(std::move(z));
    }
  }
  if (j.contains("traffic_lights")) {
    for (const auto & jt : j["traffic_lights"]) {
      TrafficLight tl;
      tl.id = jt.at("id").get<std::string>();
      tl.lane = jt.at("lane").get<std::string>();
      tl.stop_s = jt.at("stop_s").get<double>();
      tl.period = jt.value("period", 0.0);
      for (const auto & ji : jt.at("red_intervals")) {
        tl.red_intervals.emplace_back(ji.at(0).get<double>(), ji.at(1).get<double>());
      }
      map.lights.push_back(std::move(tl));
    }
  }
  if (j.contains("yields")) {
    for (const auto & jy : j["yields"]) {
      YieldGate y;
      y.id = jy.at("id").get<std::string>();
      y.lane = jy.at("lane").get<std::string>();
      y.stop_s = jy.at("stop_s").get<double>();
      for (const auto & jc : jy.at("conflicts")) {
        ConflictWindow c;
        c.lane = jc.at("lane").get<std::string>();
        c.s_min = jc.at("window").at(0).get<double>();
        c.s_max = jc.at("window").at(1).get<double>();
        y.conflicts.push_back(std::move(c));
      }
      map.yields.push_back(std::move(y));
    }
  }
  map.validate();
  return map;
}

inline LaneMap load_lane_map(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw ParseError("lane map: cannot open " + path);
  }
  nlohmann::json j;
  in >> j;
  return lane_map_from_json(j);
}

}  // namespace udmc

#endif  // UDMC__LANE_MAP_HPP_
