#include "objnav/sim.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "objnav/error.hpp"

namespace objnav {

double normalize_angle(double theta) {
  double t = std::remainder(theta, 2 * kPi);
  if (t <= -kPi) t += 2 * kPi;
  return t;
}

std::string_view collision_mode_name(CollisionMode mode) {
  return mode == CollisionMode::stuck ? "stuck" : "sliding";
}

CollisionMode parse_collision_mode(std::string_view name) {
  if (name == "stuck") return CollisionMode::stuck;
  if (name == "sliding") return CollisionMode::sliding;
  throw ParseError("unknown collision mode '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const EpisodeConfig& cfg) {
  j = nlohmann::json{
      {"max_steps", cfg.max_steps},
      {"dt", cfg.dt},
      {"collision_mode", std::string(collision_mode_name(cfg.collision_mode))},
      {"spawn", {{"d_min", cfg.spawn.d_min}, {"d_max", cfg.spawn.d_max}}},
      {"robot_radius", cfg.robot_radius},
      {"lidar", {{"rays", cfg.lidar.rays}, {"fov_deg", cfg.lidar.fov_deg}, {"max_range", cfg.lidar.max_range}}},
      {"det", {{"bins", cfg.det.bins}, {"fov_deg", cfg.det.fov_deg}, {"max_range", cfg.det.max_range}}},
      {"v_min", cfg.v_min},
      {"v_max", cfg.v_max},
      {"w_max", cfg.w_max},
  };
}

void from_json(const nlohmann::json& j, EpisodeConfig& cfg) {
  cfg.max_steps = j.value("max_steps", cfg.max_steps);
  cfg.dt = j.value("dt", cfg.dt);
  if (j.contains("collision_mode")) {
    cfg.collision_mode = parse_collision_mode(j.at("collision_mode").get<std::string>());
  }
  if (j.contains("spawn")) {
    const auto& s = j.at("spawn");
    cfg.spawn.d_min = s.value("d_min", cfg.spawn.d_min);
    cfg.spawn.d_max = s.value("d_max", cfg.spawn.d_max);
  }
  cfg.robot_radius = j.value("robot_radius", cfg.robot_radius);
  if (j.contains("lidar")) {
    const auto& l = j.at("lidar");
    cfg.lidar.rays = l.value("rays", cfg.lidar.rays);
    cfg.lidar.fov_deg = l.value("fov_deg", cfg.lidar.fov_deg);
    cfg.lidar.max_range = l.value("max_range", cfg.lidar.max_range);
  }
  if (j.contains("det")) {
    const auto& d = j.at("det");
    cfg.det.bins = d.value("bins", cfg.det.bins);
    cfg.det.fov_deg = d.value("fov_deg", cfg.det.fov_deg);
    cfg.det.max_range = d.value("max_range", cfg.det.max_range);
  }
  cfg.v_min = j.value("v_min", cfg.v_min);
  cfg.v_max = j.value("v_max", cfg.v_max);
  cfg.w_max = j.value("w_max", cfg.w_max);
  if (cfg.max_steps < 1 || !(cfg.dt > 0) || cfg.lidar.rays < 2 || cfg.det.bins < 1) {
    throw InvariantError("episode config: max_steps >= 1, dt > 0, rays >= 2, bins >= 1 required");
  }
}

Twist clamp_twist(const Twist& t, const EpisodeConfig& cfg) {
  return {std::clamp(t.v, cfg.v_min, cfg.v_max), std::clamp(t.w, -cfg.w_max, cfg.w_max)};
}

Twist twist_from_action(double a0, double a1, const EpisodeConfig& cfg) {
  a0 = std::clamp(a0, -1.0, 1.0);
  a1 = std::clamp(a1, -1.0, 1.0);
  double v = cfg.v_min + (a0 + 1.0) * 0.5 * (cfg.v_max - cfg.v_min);
  double w = a1 * cfg.w_max;
  return {v, w};
}

std::array<float, 2> action_from_twist(const Twist& t, const EpisodeConfig& cfg) {
  Twist c = clamp_twist(t, cfg);
  double a0 = 2.0 * (c.v - cfg.v_min) / (cfg.v_max - cfg.v_min) - 1.0;
  double a1 = c.w / cfg.w_max;
  return {static_cast<float>(a0), static_cast<float>(a1)};
}

std::shared_ptr<const GeodesicField> GeodesicCache::get(const std::shared_ptr<const World>& world,
                                                        int object_id, double success_radius,
                                                        double robot_radius) {
  auto key = std::make_tuple(world.get(), object_id, success_radius, robot_radius);
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  auto field = std::make_shared<const GeodesicField>(
      geodesic_field(*world, object_id, success_radius, robot_radius));
  std::lock_guard lock(mu_);
  return cache_.emplace(key, std::move(field)).first->second;
}

Pose integrate_drive(const Pose& p, const Twist& a, double dt) {
  Pose out = p;
  if (std::abs(a.w) < 1e-9) {
    out.x += a.v * dt * std::cos(p.theta);
    out.y += a.v * dt * std::sin(p.theta);
  } else {
    const double th1 = p.theta + a.w * dt;
    out.x += (a.v / a.w) * (std::sin(th1) - std::sin(p.theta));
    out.y += -(a.v / a.w) * (std::cos(th1) - std::cos(p.theta));
    out.theta = th1;
  }
  out.theta = normalize_angle(out.theta);
  return out;
}

bool swept_navigable(const World& w, double x0, double y0, double x1, double y1, double radius) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int n = std::max(1, static_cast<int>(std::ceil(len / (w.resolution() / 2))));
  for (int k = 1; k <= n; ++k) {
    const double s = static_cast<double>(k) / n;
    if (!is_navigable(w, x0 + s * (x1 - x0), y0 + s * (y1 - y0), radius)) return false;
  }
  return true;
}

CollisionResult resolve_collision(const World& w, const Pose& old, const Pose& proposed,
                                  double radius, CollisionMode mode) {
  CollisionResult out{{old.x, old.y, proposed.theta}, false};
  if (swept_navigable(w, old.x, old.y, proposed.x, proposed.y, radius)) {
    out.pose = proposed;
    return out;
  }
  out.collided = true;
  if (mode == CollisionMode::sliding) {
    const double dx = proposed.x - old.x;
    const double dy = proposed.y - old.y;
    if (swept_navigable(w, old.x, old.y, old.x + dx, old.y, radius)) {
      out.pose.x = old.x + dx;
    } else if (swept_navigable(w, old.x, old.y, old.x, old.y + dy, radius)) {
      out.pose.y = old.y + dy;
    }
  }
  return out;
}

double lidar_bearing(int k, const LidarConfig& cfg) {
  const double fov = deg2rad(cfg.fov_deg);
  return -fov / 2 + k * fov / (cfg.rays - 1);
}

double det_bearing(int j, const DetConfig& cfg) {
  const double fov = deg2rad(cfg.fov_deg);
  return -fov / 2 + (j + 0.5) * fov / cfg.bins;
}

std::vector<float> sense_lidar(const World& w, const Pose& p, const LidarConfig& cfg,
                               double robot_radius) {
  if (!is_navigable(w, p.x, p.y, robot_radius)) throw EpisodeError("sense_lidar: pose not navigable");
  std::vector<float> out(static_cast<size_t>(cfg.rays));
  for (int k = 0; k < cfg.rays; ++k) {
    out[k] = static_cast<float>(raycast(w, p.x, p.y, p.theta + lidar_bearing(k, cfg), cfg.max_range).range);
  }
  return out;
}

std::vector<uint8_t> sense_det(const World& w, const Pose& p, int goal_id, const DetConfig& cfg,
                               double robot_radius) {
  if (!is_navigable(w, p.x, p.y, robot_radius)) throw EpisodeError("sense_det: pose not navigable");
  std::vector<uint8_t> out(static_cast<size_t>(cfg.bins), 0);
  for (int j = 0; j < cfg.bins; ++j) {
    RayHit hit = raycast(w, p.x, p.y, p.theta + det_bearing(j, cfg), cfg.max_range);
    out[j] = (hit.kind == HitKind::object && hit.object_id == goal_id) ? 1 : 0;
  }
  return out;
}

bool check_success(const World& w, const Pose& p, int goal_id, const EpisodeConfig& cfg) {
  const LabeledObject* goal = w.find_object(goal_id);
  if (!goal) return false;
  if (!is_navigable(w, p.x, p.y, cfg.robot_radius)) return false;
  if (goal->box.distance_to(p.x, p.y) > cfg.success_distance) return false;
  const double half = deg2rad(cfg.det.fov_deg) * cfg.success_fov_fraction / 2;
  for (int j = 0; j < cfg.det.bins; ++j) {
    const double b = det_bearing(j, cfg.det);
    if (std::abs(b) > half) continue;
    RayHit hit = raycast(w, p.x, p.y, p.theta + b, cfg.det.max_range);
    if (hit.kind == HitKind::object && hit.object_id == goal_id) return true;
  }
  return false;
}

double compute_reward(double d_prev, double d_now, bool collided, bool success) {
  double r = collided ? -0.05 : 0.0;
  r += -0.01;
  r += 0.1 * (d_prev - d_now);
  if (success) r += 1.0;
  return r;
}

Observation observe(const EpisodeState& st, const std::array<float, 2>& prev_action, bool collided) {
  Observation obs;
  obs.lidar = sense_lidar(*st.world, st.pose, st.cfg.lidar, st.cfg.robot_radius);
  obs.det = sense_det(*st.world, st.pose, st.goal_id, st.cfg.det, st.cfg.robot_radius);
  obs.goal[static_cast<size_t>(st.goal_label)] = 1.0f;
  obs.prev_action = prev_action;
  obs.collision = collided ? 1 : 0;
  return obs;
}

namespace {

EpisodeState make_state(std::shared_ptr<const World> world, int goal_id, const EpisodeConfig& cfg,
                        GeodesicCache* cache) {
  const LabeledObject* goal = world->find_object(goal_id);
  if (!goal) throw EpisodeError("reset: unknown goal object " + std::to_string(goal_id));
  EpisodeState st;
  st.cfg = cfg;
  st.goal_id = goal_id;
  st.goal_label = goal->label;
  if (cache) {
    st.geodesic = cache->get(world, goal_id, cfg.success_distance, cfg.robot_radius);
  } else {
    st.geodesic = std::make_shared<const GeodesicField>(
        geodesic_field(*world, goal_id, cfg.success_distance, cfg.robot_radius));
  }
  st.world = std::move(world);
  return st;
}

}  // namespace

ResetResult reset(std::shared_ptr<const World> world, Label goal_label, uint64_t seed,
                  const EpisodeConfig& cfg, GeodesicCache* cache) {
  const std::vector<int> candidates = world->objects_with_label(goal_label);
  if (candidates.empty()) {
    throw EpisodeError("reset: world '" + world->name() + "' has no object labeled '" +
                       std::string(label_name(goal_label)) + "'");
  }
  std::mt19937_64 rng(seed);
  const int goal_id =
      candidates[std::uniform_int_distribution<size_t>(0, candidates.size() - 1)(rng)];
  EpisodeState st = make_state(std::move(world), goal_id, cfg, cache);
  const GeodesicField& field = *st.geodesic;
  const double d_lo = cfg.spawn.d_min;
  const double d_hi = std::min(cfg.spawn.d_max, field.max_finite());
  const double res = field.resolution();

  std::vector<int> cells;
  if (d_lo <= d_hi) {
    for (int i = 0; i < field.rows(); ++i) {
      for (int j = 0; j < field.cols(); ++j) {
        const double d = field.at(i, j);
        if (std::isfinite(d) && d >= d_lo - 2 * res && d <= d_hi + 2 * res) {
          cells.push_back(i * field.cols() + j);
        }
      }
    }
  }
  if (cells.empty()) throw EpisodeError("reset: no valid start pose (empty distance band)");

  std::uniform_int_distribution<size_t> pick(0, cells.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < cfg.spawn_attempts; ++attempt) {
    const int idx = cells[pick(rng)];
    const int i = idx / field.cols(), j = idx % field.cols();
    const double x = (j + unit(rng)) * res;
    const double y = (i + unit(rng)) * res;
    const double theta = normalize_angle(-kPi + 2 * kPi * unit(rng));
    if (!is_navigable(*st.world, x, y, cfg.robot_radius)) continue;
    const double d = field.interpolate(x, y);
    if (!(d >= d_lo && d <= d_hi)) continue;
    Pose p{x, y, theta};
    if (check_success(*st.world, p, goal_id, cfg)) continue;
    st.pose = p;
    st.start_distance = d;
    st.rng = rng;
    Observation obs = observe(st, {0.0f, 0.0f}, false);
    return {std::move(st), std::move(obs)};
  }
  throw EpisodeError("reset: no valid start pose after " + std::to_string(cfg.spawn_attempts) +
                     " attempts");
}

ResetResult reset_at(std::shared_ptr<const World> world, int goal_id, const Pose& start,
                     const EpisodeConfig& cfg, GeodesicCache* cache) {
  EpisodeState st = make_state(std::move(world), goal_id, cfg, cache);
  if (!is_navigable(*st.world, start.x, start.y, cfg.robot_radius)) {
    throw EpisodeError("reset_at: start pose not navigable");
  }
  st.pose = {start.x, start.y, normalize_angle(start.theta)};
  st.start_distance = st.geodesic->interpolate(start.x, start.y);
  st.success = check_success(*st.world, st.pose, goal_id, cfg);
  st.done = st.success;
  Observation obs = observe(st, {0.0f, 0.0f}, false);
  return {std::move(st), std::move(obs)};
}

StepResult advance(EpisodeState& st, const Pose& proposed, const std::array<float, 2>& prev_action,
                   CollisionMode mode) {
  if (st.done) throw EpisodeError("step after done");
  const World& w = *st.world;
  const double d_prev = st.geodesic->interpolate(st.pose.x, st.pose.y);
  CollisionResult moved = resolve_collision(w, st.pose, proposed, st.cfg.robot_radius, mode);
  st.pose = moved.pose;
  const double d_now = st.geodesic->interpolate(st.pose.x, st.pose.y);
  st.success = check_success(w, st.pose, st.goal_id, st.cfg);
  st.step_index += 1;
  st.done = st.success || st.step_index >= st.cfg.max_steps;
  st.last_collision = moved.collided;

  StepResult out;
  out.reward = compute_reward(d_prev, d_now, moved.collided, st.success);
  out.done = st.done;
  out.collided = moved.collided;
  out.success = st.success;
  out.obs = observe(st, prev_action, moved.collided);
  return out;
}

StepResult step(EpisodeState& st, const Twist& a) {
  if (st.done) throw EpisodeError("step after done");
  const Twist c = clamp_twist(a, st.cfg);
  const Pose proposed = integrate_drive(st.pose, c, st.cfg.dt);
  return advance(st, proposed, action_from_twist(c, st.cfg), st.cfg.collision_mode);
}

}  // namespace objnav
