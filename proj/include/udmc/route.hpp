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

#ifndef UDMC__ROUTE_HPP_
#define UDMC__ROUTE_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "udmc/common.hpp"
#include "udmc/lane_map.hpp"
#include "udmc/spline.hpp"

namespace udmc
{

/// Thrown when a query point is too far from every graph node.
class SnapFailed : public std::runtime_error
{
public:
  explicit SnapFailed(const std::string & what) : std::runtime_error(what) {}
};

/// Thrown when the goal is unreachable from the start.
class NoRoute : public std::runtime_error
{
public:
  explicit NoRoute(const std::string & what) : std::runtime_error(what) {}
};

struct Waypoint
{
  int lane_index{-1};
  double s{0.0};
  Vec2 p{0.0, 0.0};
};

/// Directed waypoint graph over the lane network.
class RouteGraph
{
public:
  struct Edge
  {
    int to;
    double weight;
  };

  std::vector<Waypoint> nodes;
  std::vector<std::vector<Edge>> adj;

  static RouteGraph build(const LaneMap & map, double spacing = 2.0)
  {
    if (map.lanes.empty()) {
      throw EmptyMap("route graph: empty map");
    }
    RouteGraph g;
    std::vector<std::vector<int>> lane_nodes(map.lanes.size());

    for (size_t li = 0; li < map.lanes.size(); ++li) {
      const Path2D & path = map.lanes[li].path;
      const double len = path.length();
      const int n = std::max(1, static_cast<int>(std::floor(len / spacing + 1e-9)));
      for (int k = 0; k <= n; ++k) {
        const double s = std::min(len, k * spacing);
        lane_nodes[li].push_back(static_cast<int>(g.nodes.size()));
        g.nodes.push_back(Waypoint{static_cast<int>(li), s, path.point(s)});
        if (s >= len) {
          break;
        }
      }
      if (g.nodes.back().s < len) {
        lane_nodes[li].push_back(static_cast<int>(g.nodes.size()));
        g.nodes.push_back(Waypoint{static_cast<int>(li), len, path.point(len)});
      }
    }
    g.adj.assign(g.nodes.size(), {});

    // Forward edges along each lane.
    for (size_t li = 0; li < map.lanes.size(); ++li) {
      const auto & ids = lane_nodes[li];
      for (size_t k = 0; k + 1 < ids.size(); ++k) {
        const double w = g.nodes[ids[k + 1]].s - g.nodes[ids[k]].s;
        g.adj[ids[k]].push_back({ids[k + 1], w});
      }
    }

    // Lane end to successor lane start.
    for (size_t li = 0; li < map.lanes.size(); ++li) {
      const int tail = lane_nodes[li].back();
      for (const auto & succ : map.lanes[li].successors) {
        const int si = map.index_of(succ);
        const int head = lane_nodes[si].front();
        const double w = std::max((g.nodes[head].p - g.nodes[tail].p).norm(), 1e-3);
        g.adj[tail].push_back({head, w});
      }
    }

    // Lane change edges to the neighbor node roughly one spacing ahead.
    const auto add_change_edges = [&](size_t li, const std::string & neighbor) {
      if (neighbor.empty()) {
        return;
      }
      const int ni = map.index_of(neighbor);
      const Path2D & npath = map.lanes[ni].path;
      for (const int id : lane_nodes[li]) {
        const double sn = npath.project(g.nodes[id].p) + spacing;
        if (sn > npath.length() + 1e-9) {
          continue;
        }
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (const int cand : lane_nodes[ni]) {
          const double d = std::abs(g.nodes[cand].s - sn);
          if (d < best_d) {
            best_d = d;
            best = cand;
          }
        }
        if (best >= 0) {
          const double w = (g.nodes[best].p - g.nodes[id].p).norm();
          g.adj[id].push_back({best, w});
        }
      }
    };
    for (size_t li = 0; li < map.lanes.size(); ++li) {
      add_change_edges(li, map.lanes[li].left_neighbor);
      add_change_edges(li, map.lanes[li].right_neighbor);
    }
    return g;
  }

  /// Nearest node within snap_radius of p.
  int snap(const Vec2 & p, double snap_radius = 5.0) const
  {
    int best = -1;
    double best_d = snap_radius;
    for (size_t i = 0; i < nodes.size(); ++i) {
      const double d = (nodes[i].p - p).norm();
      if (d < best_d - 1e-12) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    if (best < 0) {
      throw SnapFailed("route graph: no node within snap radius");
    }
    return best;
  }

  /// A* shortest path by node id; the Euclidean heuristic never exceeds the
  /// true remaining cost, and ties resolve toward the smaller node id.
  std::vector<int> astar(int start, int goal) const
  {
    const auto h = [&](int i) { return (nodes[i].p - nodes[goal].p).norm(); };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(nodes.size(), inf);
    std::vector<int> prev(nodes.size(), -1);
    std::vector<bool> closed(nodes.size(), false);

    using Item = std::tuple<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> open;
    dist[start] = 0.0;
    open.emplace(h(start), start);

    while (!open.empty()) {
      const auto [f, u] = open.top();
      open.pop();
      if (closed[u]) {
        continue;
      }
      closed[u] = true;
      if (u == goal) {
        break;
      }
      for (const Edge & e : adj[u]) {
        const double nd = dist[u] + e.weight;
        if (nd < dist[e.to] - 1e-12) {
          dist[e.to] = nd;
          prev[e.to] = u;
          open.emplace(nd + h(e.to), e.to);
        }
      }
    }

    if (!closed[goal]) {
      throw NoRoute("route graph: goal unreachable from start");
    }
    std::vector<int> out;
    for (int v = goal; v != -1; v = prev[v]) {
      out.push_back(v);
    }
    std::reverse(out.begin(), out.end());
    return out;
  }
};

/// Global route: ordered waypoints plus a spline-smoothed drivable path.
struct Route
{
  std::vector<Waypoint> waypoints;
  Path2D path;
};

inline Route plan_route(
  const LaneMap & map, const Vec2 & start, const Vec2 & goal, double spacing = 2.0,
  double snap_radius = 5.0)
{
  const RouteGraph g = RouteGraph::build(map, spacing);
  const int s = g.snap(start, snap_radius);
  const int t = g.snap(goal, snap_radius);
  const std::vector<int> ids = g.astar(s, t);

  Route route;
  std::vector<Vec2> pts;
  for (const int id : ids) {
    route.waypoints.push_back(g.nodes[id]);
    pts.push_back(g.nodes[id].p);
  }
  if (pts.size() < 2) {
    throw NoRoute("route: start and goal snap to the same node");
  }
  route.path = Path2D::through(pts, 0.2);
  return route;
}

}  // namespace udmc

#endif  // UDMC__ROUTE_HPP_
