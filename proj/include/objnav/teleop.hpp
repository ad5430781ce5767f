#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "objnav/eval.hpp"
#include "objnav/sim.hpp"
#include "objnav/world.hpp"
#include "objnav/ws.hpp"

namespace objnav {

enum class DiscreteAction : uint8_t { forward, turn_left, turn_right };

std::string_view action_name(DiscreteAction a);
/// Throws ParseError on anything outside the closed set.
DiscreteAction parse_action(std::string_view name);

inline constexpr double kForwardStep = 0.25;  // meters
inline constexpr double kTurnStepDeg = 15.0;

/// One discrete step; counts against max_steps like a policy step. Forward moves resolve in stuck mode.
StepResult apply_discrete(EpisodeState& st, DiscreteAction a);

enum class ColumnKind : uint8_t { none, wall, goal, other };
std::string_view column_kind_name(ColumnKind k);

inline constexpr int kFrameColumns = 160;

struct FrameData {
  std::vector<float> columns;  // perpendicular depth per column, left to right across the camera FOV
  std::vector<ColumnKind> kinds;
  std::vector<float> lidar;
  int steps_remaining = 0;
  bool collision = false;
  bool success = false;
};

/// Columns span the detector FOV; rays are cast from the robot center up to the detector range.
FrameData render_frame(const EpisodeState& st, bool collided);
nlohmann::json frame_json(const FrameData& f, Label goal);

/// Worlds offered to raters, the rater/world ledger and the finished records. Thread-safe.
class TeleopHub {
 public:
  TeleopHub(std::vector<std::shared_ptr<const World>> worlds, EpisodeConfig episode, uint64_t seed);

  /// Index of the named world, or -1.
  int find_world(const std::string& name) const;
  const std::shared_ptr<const World>& world(int k) const { return worlds_[static_cast<size_t>(k)]; }
  const EpisodeConfig& episode() const { return episode_; }
  /// Reset seed for world k; matches the first eval-suite episode in that world.
  uint64_t episode_seed(int k) const;

  /// False if the rater already has an episode in the world.
  bool claim(const std::string& rater, const std::string& world);
  void add_record(EpisodeRecord r);
  std::vector<EpisodeRecord> records() const;
  GeodesicCache& cache() { return cache_; }

 private:
  std::vector<std::shared_ptr<const World>> worlds_;
  EpisodeConfig episode_;
  uint64_t seed_;
  GeodesicCache cache_;
  mutable std::mutex mu_;
  std::set<std::pair<std::string, std::string>> ledger_;
  std::vector<EpisodeRecord> records_;
};

struct TeleopReply {
  std::vector<nlohmann::json> messages;
  bool close = false;
};

/// Protocol state for one connection.
class TeleopSession {
 public:
  explicit TeleopSession(TeleopHub& hub) : hub_(hub) {}
  TeleopReply handle(const std::string& text);
  TeleopReply handle(const nlohmann::json& msg);
  bool active() const { return state_.has_value(); }

 private:
  TeleopReply start(const nlohmann::json& msg);
  TeleopReply act(const nlohmann::json& msg);
  TeleopReply finish();

  TeleopHub& hub_;
  std::optional<EpisodeState> state_;
  EpisodeRecord record_;
  bool finished_ = false;
};

nlohmann::json error_json(const std::string& reason);

/// One TeleopSession per WebSocket connection.
WebServer::SessionFactory teleop_sessions(TeleopHub& hub);

}  // namespace objnav
