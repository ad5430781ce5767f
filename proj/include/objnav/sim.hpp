#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <map>
#include <array>
#include <tuple>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "objnav/world.hpp"

namespace objnav {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }

/// Wraps an angle into (-pi, pi].
double normalize_angle(double theta);

struct Pose {
  double x = 0;
  double y = 0;
  double theta = 0;
  bool operator==(const Pose&) const = default;
};

struct Twist {
  double v = 0;
  double w = 0;
  bool operator==(const Twist&) const = default;
};

enum class CollisionMode : uint8_t { stuck, sliding };

std::string_view collision_mode_name(CollisionMode mode);
CollisionMode parse_collision_mode(std::string_view name);

struct LidarConfig {
  int rays = 222;
  double fov_deg = 220.0;
  double max_range = 5.0;
};

struct DetConfig {
  int bins = 64;
  double fov_deg = 79.0;
  double max_range = 5.0;
};

struct SpawnConfig {
  double d_min = 1.0;
  double d_max = 15.0;
};

struct EpisodeConfig {
  int max_steps = 500;
  double dt = 0.2;
  CollisionMode collision_mode = CollisionMode::stuck;
  SpawnConfig spawn;
  double robot_radius = 0.18;
  LidarConfig lidar;
  DetConfig det;
  double v_min = -0.25;
  double v_max = 0.5;
  double w_max = 1.5;
  double success_distance = 1.0;
  double success_fov_fraction = 0.2;
  int spawn_attempts = 20000;
};

void to_json(nlohmann::json& j, const EpisodeConfig& cfg);
void from_json(const nlohmann::json& j, EpisodeConfig& cfg);

/// Per-step sensor bundle handed to policies.
struct Observation {
  std::vector<float> lidar;        // meters, clamped to lidar max_range
  std::vector<uint8_t> det;        // goal mask per bearing bin
  std::array<float, kNumLabels> goal{};
  std::array<float, 2> prev_action{};  // clamped twist mapped to [-1,1]^2
  uint8_t collision = 0;
};

/// Maps a normalized action in [-1,1]^2 onto the twist box (clamping first).
Twist twist_from_action(double a0, double a1, const EpisodeConfig& cfg);
/// Inverse of twist_from_action for a clamped twist.
std::array<float, 2> action_from_twist(const Twist& t, const EpisodeConfig& cfg);
Twist clamp_twist(const Twist& t, const EpisodeConfig& cfg);

/// Process-wide memo of geodesic fields keyed on (world identity, object id).
class GeodesicCache {
 public:
  std::shared_ptr<const GeodesicField> get(const std::shared_ptr<const World>& world, int object_id,
                                           double success_radius, double robot_radius);

 private:
  std::mutex mu_;
  std::map<std::tuple<const World*, int, double, double>, std::shared_ptr<const GeodesicField>> cache_;
};

struct EpisodeState {
  std::shared_ptr<const World> world;
  std::shared_ptr<const GeodesicField> geodesic;
  EpisodeConfig cfg;
  int goal_id = -1;
  Label goal_label = Label::bed;
  Pose pose;
  int step_index = 0;
  bool done = false;
  bool success = false;
  bool last_collision = false;
  double start_distance = 0;
  std::mt19937_64 rng;
};

struct StepResult {
  Observation obs;
  double reward = 0;
  bool done = false;
  bool collided = false;
  bool success = false;
};

Pose integrate_drive(const Pose& p, const Twist& a, double dt);

struct CollisionResult {
  Pose pose;
  bool collided = false;
};

/// Straight swept-segment check sampled every resolution/2.
bool swept_navigable(const World& w, double x0, double y0, double x1, double y1, double radius);

CollisionResult resolve_collision(const World& w, const Pose& old, const Pose& proposed,
                                  double radius, CollisionMode mode);

std::vector<float> sense_lidar(const World& w, const Pose& p, const LidarConfig& cfg,
                               double robot_radius);
std::vector<uint8_t> sense_det(const World& w, const Pose& p, int goal_id, const DetConfig& cfg,
                               double robot_radius);
bool check_success(const World& w, const Pose& p, int goal_id, const EpisodeConfig& cfg);

double compute_reward(double d_prev, double d_now, bool collided, bool success);

/// Bearing (relative to heading) of lidar ray k / det bin j.
double lidar_bearing(int k, const LidarConfig& cfg);
double det_bearing(int j, const DetConfig& cfg);

Observation observe(const EpisodeState& st, const std::array<float, 2>& prev_action, bool collided);

struct ResetResult {
  EpisodeState state;
  Observation obs;
};

ResetResult reset(std::shared_ptr<const World> world, Label goal_label, uint64_t seed,
                  const EpisodeConfig& cfg, GeodesicCache* cache = nullptr);

/// Resets with a fixed start pose (used by tests and scripted scenarios).
ResetResult reset_at(std::shared_ptr<const World> world, int goal_id, const Pose& start,
                     const EpisodeConfig& cfg, GeodesicCache* cache = nullptr);

StepResult step(EpisodeState& st, const Twist& a);

/// Advances the episode to an already-proposed pose; shared by continuous and discrete control.
StepResult advance(EpisodeState& st, const Pose& proposed, const std::array<float, 2>& prev_action,
                   CollisionMode mode);

}  // namespace objnav
