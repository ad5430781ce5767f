#include "objnav/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <set>

#include "objnav/error.hpp"
#include "objnav/seed.hpp"

namespace objnav {

namespace {

// 8-neighborhood in circular order starting east.
constexpr int kDr[8] = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr int kDc[8] = {1, 1, 0, -1, -1, -1, 0, 1};

struct Grid {
  int rows, cols;
  const std::vector<uint8_t>& g;
  bool at(int r, int c) const { return r >= 0 && c >= 0 && r < rows && c < cols && g[static_cast<size_t>(r) * cols + c]; }
};

int neighbor_count(const Grid& g, int r, int c) {
  int n = 0;
  for (int k = 0; k < 8; ++k) n += g.at(r + kDr[k], c + kDc[k]) ? 1 : 0;
  return n;
}

// Yokoi connectivity number for 8-connected foreground.
int connectivity8(const Grid& g, int r, int c) {
  int x[9];
  for (int k = 0; k < 8; ++k) x[k] = g.at(r + kDr[k], c + kDc[k]) ? 0 : 1;
  x[8] = x[0];
  int n = 0;
  for (int k = 0; k < 8; k += 2) n += x[k] - x[k] * x[k + 1] * x[(k + 2) % 8];
  return n;
}

Point2 cell_center(int idx, int cols, double res) {
  return {(idx % cols + 0.5) * res, (idx / cols + 0.5) * res};
}

double dist(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct RawEdge {
  int a, b;
  std::vector<int> cells;
};

TopoGraph build_graph(int rows, int cols, double res, const std::vector<uint8_t>& skel,
                      std::vector<RawEdge>* raw_out = nullptr) {
  TopoGraph out;
  out.rows = rows;
  out.cols = cols;
  out.resolution = res;
  out.skeleton = skel;
  const Grid g{rows, cols, skel};
  const size_t n = skel.size();
  std::vector<int> deg(n, 0), cluster(n, -1);
  for (size_t i = 0; i < n; ++i) {
    if (skel[i]) deg[i] = neighbor_count(g, static_cast<int>(i) / cols, static_cast<int>(i) % cols);
  }
  auto nbrs = [&](int idx, auto&& fn) {
    const int r = idx / cols, c = idx % cols;
    for (int k = 0; k < 8; ++k) {
      if (g.at(r + kDr[k], c + kDc[k])) fn((r + kDr[k]) * cols + c + kDc[k]);
    }
  };
  std::vector<std::vector<int>> members;
  auto make_cluster = [&](int seed_idx, bool grow) {
    const int id = static_cast<int>(members.size());
    members.emplace_back();
    std::deque<int> q{seed_idx};
    cluster[static_cast<size_t>(seed_idx)] = id;
    while (!q.empty()) {
      const int p = q.front();
      q.pop_front();
      members[static_cast<size_t>(id)].push_back(p);
      if (!grow) continue;
      nbrs(p, [&](int v) {
        if (deg[static_cast<size_t>(v)] != 2 && cluster[static_cast<size_t>(v)] < 0) {
          cluster[static_cast<size_t>(v)] = id;
          q.push_back(v);
        }
      });
    }
    // Representative: member closest to the centroid.
    Point2 m{0, 0};
    for (int p : members[static_cast<size_t>(id)]) {
      const Point2 c = cell_center(p, cols, res);
      m.x += c.x;
      m.y += c.y;
    }
    const double k = static_cast<double>(members[static_cast<size_t>(id)].size());
    m = {m.x / k, m.y / k};
    int best = members[static_cast<size_t>(id)].front();
    for (int p : members[static_cast<size_t>(id)]) {
      if (dist(cell_center(p, cols, res), m) < dist(cell_center(best, cols, res), m)) best = p;
    }
    TopoNode node;
    node.row = best / cols;
    node.col = best % cols;
    node.pos = cell_center(best, cols, res);
    out.nodes.push_back(node);
    return id;
  };
  for (size_t i = 0; i < n; ++i) {
    if (skel[i] && deg[i] != 2 && cluster[i] < 0) make_cluster(static_cast<int>(i), true);
  }

  std::vector<uint8_t> walked(n, 0);
  std::vector<RawEdge> raw;
  auto walk = [&](int c_id, int start, int first) {
    std::vector<int> cells{start, first};
    walked[static_cast<size_t>(first)] = 1;
    int prev = start, cur = first;
    for (;;) {
      int next = -1, end = -1;
      nbrs(cur, [&](int q) {
        if (end >= 0 || q == prev) return;
        const int cq = cluster[static_cast<size_t>(q)];
        if (cq >= 0) {
          if (cq != c_id || cells.size() >= 3) end = q;
          return;
        }
        if (!walked[static_cast<size_t>(q)] && next < 0) next = q;
      });
      if (end >= 0) {
        cells.push_back(end);
        raw.push_back({c_id, cluster[static_cast<size_t>(end)], std::move(cells)});
        return;
      }
      if (next < 0) return;  // dangling chain; cannot occur on a thinned grid with clustered endpoints
      walked[static_cast<size_t>(next)] = 1;
      cells.push_back(next);
      prev = cur;
      cur = next;
    }
  };
  auto trace_from = [&](int c_id) {
    for (int c : std::vector<int>(members[static_cast<size_t>(c_id)])) {
      nbrs(c, [&](int p) {
        if (cluster[static_cast<size_t>(p)] >= 0 || walked[static_cast<size_t>(p)]) return;
        walk(c_id, c, p);
      });
    }
  };
  for (int c = 0; c < static_cast<int>(members.size()); ++c) trace_from(c);
  // Junction-free loops.
  for (size_t i = 0; i < n; ++i) {
    if (skel[i] && deg[i] == 2 && !walked[i] && cluster[i] < 0) {
      const int id = make_cluster(static_cast<int>(i), false);
      walked[i] = 1;
      trace_from(id);
    }
  }

  for (const RawEdge& r : raw) {
    TopoEdge e;
    e.a = r.a;
    e.b = r.b;
    e.path.push_back(out.nodes[static_cast<size_t>(r.a)].pos);
    for (int c : r.cells) {
      const Point2 p = cell_center(c, cols, res);
      if (dist(p, e.path.back()) > 1e-12) e.path.push_back(p);
    }
    const Point2 end = out.nodes[static_cast<size_t>(r.b)].pos;
    if (dist(end, e.path.back()) > 1e-12) e.path.push_back(end);
    for (size_t k = 1; k < e.path.size(); ++k) e.length += dist(e.path[k - 1], e.path[k]);
    const int id = static_cast<int>(out.edges.size());
    out.nodes[static_cast<size_t>(e.a)].edges.push_back(id);
    if (e.b != e.a) out.nodes[static_cast<size_t>(e.b)].edges.push_back(id);
    out.edges.push_back(std::move(e));
  }
  if (raw_out) *raw_out = std::move(raw);
  return out;
}

}  // namespace

std::vector<Point2> TopoGraph::path_from(int edge, int from) const {
  const TopoEdge& e = edges[static_cast<size_t>(edge)];
  std::vector<Point2> p = e.path;
  if (e.a != from) std::reverse(p.begin(), p.end());
  return p;
}

int TopoGraph::components() const {
  std::vector<int> parent(nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) x = parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
    return x;
  };
  int count = static_cast<int>(nodes.size());
  for (const auto& e : edges) {
    const int a = find(e.a), b = find(e.b);
    if (a != b) {
      parent[static_cast<size_t>(a)] = b;
      --count;
    }
  }
  return count;
}

std::vector<uint8_t> thin_grid(int rows, int cols, std::vector<uint8_t> g) {
  const Grid grid{rows, cols, g};
  // Peel N, S, E, W borders in turn; each deletion is re-checked against the current image.
  constexpr int kDirR[4] = {1, -1, 0, 0};
  constexpr int kDirC[4] = {0, 0, 1, -1};
  bool changed = true;
  std::vector<int> cand;
  while (changed) {
    changed = false;
    for (int d = 0; d < 4; ++d) {
      cand.clear();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          if (g[static_cast<size_t>(r) * cols + c] && !grid.at(r + kDirR[d], c + kDirC[d])) cand.push_back(r * cols + c);
        }
      }
      for (int idx : cand) {
        const int r = idx / cols, c = idx % cols;
        if (neighbor_count(grid, r, c) <= 1) continue;
        if (connectivity8(grid, r, c) != 1) continue;
        g[static_cast<size_t>(idx)] = 0;
        changed = true;
      }
    }
  }
  return g;
}

TopoGraph extract_skeleton(const World& w, double robot_radius, const SkeletonConfig& cfg) {
  const NavGrid nav(w, robot_radius);
  std::vector<uint8_t> free = nav.cells();
  if (std::none_of(free.begin(), free.end(), [](uint8_t v) { return v != 0; })) {
    throw InvariantError("extract_skeleton: no free space after inflation");
  }
  std::vector<uint8_t> skel = thin_grid(w.rows(), w.cols(), std::move(free));
  std::vector<RawEdge> raw;
  TopoGraph g = build_graph(w.rows(), w.cols(), w.resolution(), skel, &raw);
  if (cfg.prune_length <= 0) return g;
  bool pruned = false;
  for (size_t e = 0; e < g.edges.size(); ++e) {
    const TopoEdge& edge = g.edges[e];
    if (edge.a == edge.b || edge.length >= cfg.prune_length) continue;
    const auto& na = g.nodes[static_cast<size_t>(edge.a)];
    const auto& nb = g.nodes[static_cast<size_t>(edge.b)];
    const bool a_tip = na.edges.size() == 1 && nb.edges.size() >= 3;
    const bool b_tip = nb.edges.size() == 1 && na.edges.size() >= 3;
    if (!a_tip && !b_tip) continue;
    // Drop the spur cells, keeping the junction-side cell.
    const auto& cells = raw[e].cells;
    if (a_tip) {
      for (size_t k = 0; k + 1 < cells.size(); ++k) skel[static_cast<size_t>(cells[k])] = 0;
    } else {
      for (size_t k = 1; k < cells.size(); ++k) skel[static_cast<size_t>(cells[k])] = 0;
    }
    pruned = true;
  }
  if (!pruned) return g;
  return build_graph(w.rows(), w.cols(), w.resolution(), thin_grid(w.rows(), w.cols(), std::move(skel)));
}

// ---------------------------------------------------------------------------
// Controllers

namespace {

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

bool any_det(const Observation& obs) {
  return std::any_of(obs.det.begin(), obs.det.end(), [](uint8_t v) { return v != 0; });
}

/// Turn-then-drive toward a point; `v_cap` limits the forward distance per step (meters).
Twist head_toward(const Pose& p, const Point2& t, const EpisodeConfig& cfg, double v_cap) {
  const double dx = t.x - p.x, dy = t.y - p.y;
  const double d = std::hypot(dx, dy);
  const double alpha = normalize_angle(std::atan2(dy, dx) - p.theta);
  Twist out;
  if (d < 1e-9) return out;
  if (std::abs(alpha) > kPi / 4) {
    out.w = clampd(alpha / cfg.dt, -cfg.w_max, cfg.w_max);
    return out;
  }
  double v = std::min(cfg.v_max, std::max(0.0, v_cap) / cfg.dt);
  const double kappa = 2 * std::sin(alpha) / d;
  double w = v * kappa;
  if (std::abs(w) > cfg.w_max) {
    w = std::copysign(cfg.w_max, w);
    v = cfg.w_max / std::abs(kappa);
  }
  out.v = v;
  out.w = w;
  return out;
}

/// Keeps the command if its swept motion is free, otherwise rotates in place.
Twist guard(const EpisodeState& env, Twist t, bool* blocked = nullptr) {
  t = clamp_twist(t, env.cfg);
  const Pose next = integrate_drive(env.pose, t, env.cfg.dt);
  const bool ok = swept_navigable(*env.world, env.pose.x, env.pose.y, next.x, next.y, env.cfg.robot_radius);
  if (blocked) *blocked = !ok;
  if (!ok) t.v = 0;
  return t;
}

Point2 nearest_on_box(const Box& b, double x, double y) { return {clampd(x, b.min_x, b.max_x), clampd(y, b.min_y, b.max_y)}; }

}  // namespace

double forward_clearance(const Observation& obs, const EpisodeConfig& cfg) {
  const double half = deg2rad(kProbeHalfAngleDeg);
  double m = cfg.lidar.max_range;
  for (int k = 0; k < static_cast<int>(obs.lidar.size()); ++k) {
    if (std::abs(lidar_bearing(k, cfg.lidar)) <= half) m = std::min(m, static_cast<double>(obs.lidar[static_cast<size_t>(k)]));
  }
  return m;
}

Twist beeline_step(const Observation& obs, const EpisodeState& env) {
  const EpisodeConfig& cfg = env.cfg;
  const LabeledObject* goal = env.world->find_object(env.goal_id);
  if (!goal) throw EpisodeError("beeline: unknown goal object");
  const Box& box = goal->box;
  const Pose& p = env.pose;
  const double d = box.distance_to(p.x, p.y);
  const double stop = 0.7 * cfg.success_distance;
  const Point2 center{(box.min_x + box.max_x) / 2, (box.min_y + box.max_y) / 2};

  if (d <= stop) {
    const double alpha = normalize_angle(std::atan2(center.y - p.y, center.x - p.x) - p.theta);
    if (std::abs(alpha) > 0.05) return guard(env, {0, clampd(alpha / cfg.dt, -cfg.w_max, cfg.w_max)});
    return guard(env, head_toward(p, center, cfg, 0.05));
  }

  const Point2 q = nearest_on_box(box, p.x, p.y);
  const double ux = (q.x - p.x) / d, uy = (q.y - p.y) / d;
  const double run = d - stop + 0.05;
  Twist t;
  if (swept_navigable(*env.world, p.x, p.y, p.x + ux * run, p.y + uy * run, cfg.robot_radius)) {
    t = head_toward(p, q, cfg, run);
  } else {
    // Blocked straight line: one step down the geodesic field.
    double best = GeodesicField::kInf;
    Point2 target{p.x, p.y};
    constexpr int kDirs = 32;
    constexpr double kStep = 0.25;
    for (int k = 0; k < kDirs; ++k) {
      const double a = 2 * kPi * k / kDirs;
      const Point2 c{p.x + kStep * std::cos(a), p.y + kStep * std::sin(a)};
      if (!swept_navigable(*env.world, p.x, p.y, c.x, c.y, cfg.robot_radius)) continue;
      const double g = env.geodesic ? env.geodesic->interpolate(c.x, c.y) : box.distance_to(c.x, c.y);
      if (g < best) {
        best = g;
        target = c;
      }
    }
    if (!std::isfinite(best)) return {0, cfg.w_max};
    t = head_toward(p, target, cfg, kStep);
  }
  const double surface = forward_clearance(obs, cfg) - cfg.robot_radius;
  const double slow = 2 * cfg.v_max * cfg.dt;
  if (surface < slow) t.v *= clampd(surface / slow, 0.25, 1.0);
  return guard(env, t);
}

Twist roomba_step(const Observation& obs, const EpisodeState& env, RoombaState& st) {
  const EpisodeConfig& cfg = env.cfg;
  if (!st.beeline && any_det(obs)) {
    st.beeline = true;
    st.mode = RoombaState::Mode::drive;
  }
  if (st.beeline) return clamp_twist(beeline_step(obs, env), cfg);
  if (obs.collision) {
    st.mode = RoombaState::Mode::rotate;
    st.direction = (derive_seed(st.seed, st.turns++) & 1) ? 1 : -1;
  }
  if (st.mode == RoombaState::Mode::rotate) {
    const double clearance = cfg.robot_radius + cfg.v_max * cfg.dt + kRotateClearanceMargin;
    if (forward_clearance(obs, cfg) > clearance) {
      st.mode = RoombaState::Mode::drive;
    } else {
      return clamp_twist({0, st.direction * cfg.w_max}, cfg);
    }
  }
  return clamp_twist({cfg.v_max, 0}, cfg);
}

namespace {

/// BFS over navigable cells from the robot's cell to the nearest node cell.
std::vector<Point2> approach_path(const EpisodeState& env, const TopoGraph& g, int* node) {
  *node = -1;
  const NavGrid nav(*env.world, env.cfg.robot_radius);
  const int rows = g.rows, cols = g.cols;
  std::vector<int> node_at(static_cast<size_t>(rows) * cols, -1);
  for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
    node_at[static_cast<size_t>(g.nodes[static_cast<size_t>(i)].row) * cols + g.nodes[static_cast<size_t>(i)].col] = i;
  }
  const int r0 = std::clamp(static_cast<int>(env.pose.y / g.resolution), 0, rows - 1);
  const int c0 = std::clamp(static_cast<int>(env.pose.x / g.resolution), 0, cols - 1);
  std::vector<int> parent(static_cast<size_t>(rows) * cols, -2);
  std::deque<int> q{r0 * cols + c0};
  parent[static_cast<size_t>(r0) * cols + c0] = -1;
  int found = -1;
  while (!q.empty()) {
    const int cur = q.front();
    q.pop_front();
    if (node_at[static_cast<size_t>(cur)] >= 0) {
      found = cur;
      break;
    }
    const int r = cur / cols, c = cur % cols;
    for (int k = 0; k < 8; ++k) {
      const int nr = r + kDr[k], nc = c + kDc[k];
      if (!nav.free(nr, nc)) continue;
      if (kDr[k] != 0 && kDc[k] != 0 && (!nav.free(r + kDr[k], c) || !nav.free(r, c + kDc[k]))) continue;
      const size_t ni = static_cast<size_t>(nr) * cols + nc;
      if (parent[ni] != -2) continue;
      parent[ni] = cur;
      q.push_back(static_cast<int>(ni));
    }
  }
  if (found < 0) return {};
  *node = node_at[static_cast<size_t>(found)];
  std::vector<Point2> path;
  for (int c = found; c >= 0; c = parent[static_cast<size_t>(c)]) path.push_back(cell_center(c, cols, g.resolution));
  std::reverse(path.begin(), path.end());
  return path;
}

/// Pure pursuit along st.path; nullopt once the end is reached.
std::optional<Twist> pursue(const EpisodeState& env, TgtState& st) {
  const Pose& p = env.pose;
  const Point2 here{p.x, p.y};
  const size_t n = st.path.size();
  if (n == 0) return std::nullopt;
  const size_t window = std::min(n, st.progress + 30);
  size_t best = st.progress;
  for (size_t i = st.progress + 1; i < window; ++i) {
    if (dist(st.path[i], here) < dist(st.path[best], here)) best = i;
  }
  st.progress = best;
  size_t j = st.progress;
  while (j + 1 < n && dist(st.path[j], here) < kPursuitLookahead) ++j;
  const double to_end = dist(st.path[n - 1], here);
  if (j + 1 >= n && to_end < 0.1) return std::nullopt;
  double remaining = to_end;
  if (j + 1 < n) remaining = std::max(remaining, kPursuitLookahead);
  bool blocked = false;
  Twist t = guard(env, head_toward(p, st.path[j], env.cfg, remaining), &blocked);
  if (blocked && st.progress + 1 < n) {
    // Cut corner: fall back to the next cell on the path.
    t = guard(env, head_toward(p, st.path[st.progress + 1], env.cfg, env.cfg.v_max * env.cfg.dt));
  }
  return t;
}

}  // namespace

Twist tgt_step(const Observation& obs, const EpisodeState& env, const TopoGraph& graph, TgtState& st) {
  const EpisodeConfig& cfg = env.cfg;
  if (!st.beeline && any_det(obs)) st.beeline = true;
  if (st.beeline) return clamp_twist(beeline_step(obs, env), cfg);
  if (!st.started) {
    st.started = true;
    st.visited.assign(graph.nodes.size(), 0);
    st.path = approach_path(env, graph, &st.current);
    st.progress = 0;
    if (st.current < 0) throw EpisodeError("tgt: no skeleton node reachable from the start pose");
  }
  bool restarted = false;
  for (;;) {
    if (auto t = pursue(env, st)) return *t;
    const int u = st.current;
    if (!st.visited[static_cast<size_t>(u)]) {
      st.visited[static_cast<size_t>(u)] = 1;
      st.visit_log.push_back(u);
    }
    bool moved = false;
    for (int e : graph.nodes[static_cast<size_t>(u)].edges) {
      const int v = graph.other(e, u);
      if (v == u || st.visited[static_cast<size_t>(v)]) continue;
      st.stack.emplace_back(u, e);
      st.path = graph.path_from(e, u);
      st.current = v;
      moved = true;
      break;
    }
    if (!moved && !st.stack.empty()) {
      const auto [parent, e] = st.stack.back();
      st.stack.pop_back();
      st.path = graph.path_from(e, u);
      st.current = parent;
      moved = true;
    }
    if (!moved) {
      if (restarted) return clamp_twist({0, cfg.w_max}, cfg);
      std::fill(st.visited.begin(), st.visited.end(), 0);
      ++st.restarts;
      restarted = true;
      st.path.clear();
      continue;
    }
    st.progress = 0;
  }
}

}  // namespace objnav
