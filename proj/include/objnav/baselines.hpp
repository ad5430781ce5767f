#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "objnav/sim.hpp"
#include "objnav/world.hpp"

namespace objnav {

// ---------------------------------------------------------------------------
// Topological graph

struct Point2 {
  double x = 0;
  double y = 0;
};

struct TopoNode {
  int row = 0;
  int col = 0;
  Point2 pos;
  std::vector<int> edges;
};

/// Polyline of skeleton cell centers from node `a` to node `b`, endpoints included.
struct TopoEdge {
  int a = 0;
  int b = 0;
  std::vector<Point2> path;
  double length = 0;
};

struct TopoGraph {
  int rows = 0;
  int cols = 0;
  double resolution = 0;
  std::vector<uint8_t> skeleton;  // 1 for skeleton cells, row-major
  std::vector<TopoNode> nodes;
  std::vector<TopoEdge> edges;

  /// Node reached from `node` along `edge`.
  int other(int edge, int node) const { return edges[edge].a == node ? edges[edge].b : edges[edge].a; }
  /// Polyline along `edge` starting at `from`.
  std::vector<Point2> path_from(int edge, int from) const;
  /// Connected components of the node graph.
  int components() const;
};

struct SkeletonConfig {
  /// Endpoint branches shorter than this (meters) that end in a junction are removed once.
  double prune_length = 0.5;
};

/// Topology-preserving thinning of a binary grid (8-connected foreground). Endpoints are kept.
std::vector<uint8_t> thin_grid(int rows, int cols, std::vector<uint8_t> free);

/// Skeleton of the robot-inflated free space as a graph. Nodes sit at clusters of skeleton cells
/// whose 8-neighbor count differs from 2; edges are the chains between them. Closed loops without
/// junctions get one node. Throws InvariantError when no cell is free.
TopoGraph extract_skeleton(const World& w, double robot_radius, const SkeletonConfig& cfg = {});

// ---------------------------------------------------------------------------
// Scripted policies. All read the episode state as privileged information (true pose, world, goal).

inline constexpr double kRotateClearanceMargin = 0.05;
inline constexpr double kPursuitLookahead = 0.3;
inline constexpr double kProbeHalfAngleDeg = 15.0;

/// Minimum lidar range within the forward probe cone.
double forward_clearance(const Observation& obs, const EpisodeConfig& cfg);

/// Drives toward the goal once seen: straight to the nearest box point when the swept path is clear,
/// otherwise one step down the geodesic field; then turns to face the box.
Twist beeline_step(const Observation& obs, const EpisodeState& env);

struct RoombaState {
  enum class Mode : uint8_t { drive, rotate };
  Mode mode = Mode::drive;
  int direction = 1;
  bool beeline = false;
  uint64_t seed = 0;
  uint64_t turns = 0;
};

/// Updates `st` in place and returns the command.
Twist roomba_step(const Observation& obs, const EpisodeState& env, RoombaState& st);

struct TgtState {
  bool started = false;
  bool beeline = false;
  int current = -1;  // node being approached, or the node the robot stands at
  std::vector<std::pair<int, int>> stack;  // (node, edge used to leave it)
  std::vector<uint8_t> visited;
  std::vector<Point2> path;
  size_t progress = 0;
  std::vector<int> visit_log;  // nodes in the order they were marked visited
  int restarts = 0;
};

/// Depth-first traversal of `graph` with pure-pursuit edge tracking. Updates `st` in place.
/// Commands whose swept motion would collide are reduced to rotation, so the policy never collides.
Twist tgt_step(const Observation& obs, const EpisodeState& env, const TopoGraph& graph, TgtState& st);

}  // namespace objnav
