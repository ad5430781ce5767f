#include "objnav/teleop.hpp"

#include <cmath>

#include "objnav/error.hpp"
#include "objnav/seed.hpp"

namespace objnav {

std::string_view action_name(DiscreteAction a) {
  switch (a) {
    case DiscreteAction::forward:
      return "forward";
    case DiscreteAction::turn_left:
      return "turn_left";
    case DiscreteAction::turn_right:
      return "turn_right";
  }
  return "?";
}

DiscreteAction parse_action(std::string_view name) {
  if (name == "forward") return DiscreteAction::forward;
  if (name == "turn_left") return DiscreteAction::turn_left;
  if (name == "turn_right") return DiscreteAction::turn_right;
  throw ParseError("unknown action '" + std::string(name) + "'");
}

StepResult apply_discrete(EpisodeState& st, DiscreteAction a) {
  if (st.done) throw EpisodeError("episode done");
  Pose p = st.pose;
  Twist equivalent;
  switch (a) {
    case DiscreteAction::forward:
      p.x += kForwardStep * std::cos(p.theta);
      p.y += kForwardStep * std::sin(p.theta);
      equivalent = {st.cfg.v_max, 0};
      break;
    case DiscreteAction::turn_left:
      p.theta = normalize_angle(p.theta + deg2rad(kTurnStepDeg));
      equivalent = {0, st.cfg.w_max};
      break;
    case DiscreteAction::turn_right:
      p.theta = normalize_angle(p.theta - deg2rad(kTurnStepDeg));
      equivalent = {0, -st.cfg.w_max};
      break;
  }
  return advance(st, p, action_from_twist(equivalent, st.cfg), CollisionMode::stuck);
}

std::string_view column_kind_name(ColumnKind k) {
  switch (k) {
    case ColumnKind::none:
      return "none";
    case ColumnKind::wall:
      return "wall";
    case ColumnKind::goal:
      return "goal";
    case ColumnKind::other:
      return "other";
  }
  return "?";
}

FrameData render_frame(const EpisodeState& st, bool collided) {
  FrameData f;
  const double fov = deg2rad(st.cfg.det.fov_deg);
  const double range = st.cfg.det.max_range;
  f.columns.resize(kFrameColumns);
  f.kinds.resize(kFrameColumns);
  for (int c = 0; c < kFrameColumns; ++c) {
    const double bearing = fov / 2 - (c + 0.5) * fov / kFrameColumns;
    const RayHit h = raycast(*st.world, st.pose.x, st.pose.y, st.pose.theta + bearing, range);
    ColumnKind kind = ColumnKind::none;
    if (h.kind == HitKind::wall) kind = ColumnKind::wall;
    if (h.kind == HitKind::object) kind = h.object_id == st.goal_id ? ColumnKind::goal : ColumnKind::other;
    const double depth = (kind == ColumnKind::none ? range : h.range) * std::cos(bearing);
    f.columns[static_cast<size_t>(c)] = static_cast<float>(depth);
    f.kinds[static_cast<size_t>(c)] = kind;
  }
  f.lidar = sense_lidar(*st.world, st.pose, st.cfg.lidar, st.cfg.robot_radius);
  f.steps_remaining = st.cfg.max_steps - st.step_index;
  f.collision = collided;
  f.success = st.success;
  return f;
}

nlohmann::json frame_json(const FrameData& f, Label goal) {
  std::vector<std::string> kinds;
  kinds.reserve(f.kinds.size());
  for (ColumnKind k : f.kinds) kinds.emplace_back(column_kind_name(k));
  return {{"type", "frame"},         {"goal", std::string(label_name(goal))},
          {"columns", f.columns},    {"kinds", kinds},
          {"lidar", f.lidar},        {"steps_remaining", f.steps_remaining},
          {"collision", f.collision}, {"success", f.success}};
}

nlohmann::json error_json(const std::string& reason) { return {{"type", "error"}, {"reason", reason}}; }

// ---------------------------------------------------------------------------

TeleopHub::TeleopHub(std::vector<std::shared_ptr<const World>> worlds, EpisodeConfig episode, uint64_t seed)
    : worlds_(std::move(worlds)), episode_(std::move(episode)), seed_(seed) {
  episode_.collision_mode = CollisionMode::stuck;
}

int TeleopHub::find_world(const std::string& name) const {
  for (size_t k = 0; k < worlds_.size(); ++k) {
    if (worlds_[k]->name() == name) return static_cast<int>(k);
  }
  return -1;
}

uint64_t TeleopHub::episode_seed(int k) const { return derive_seed(seed_, static_cast<uint64_t>(k), 0); }

bool TeleopHub::claim(const std::string& rater, const std::string& world) {
  std::lock_guard lock(mu_);
  return ledger_.emplace(rater, world).second;
}

void TeleopHub::add_record(EpisodeRecord r) {
  std::lock_guard lock(mu_);
  records_.push_back(std::move(r));
}

std::vector<EpisodeRecord> TeleopHub::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

// ---------------------------------------------------------------------------

TeleopReply TeleopSession::handle(const std::string& text) {
  nlohmann::json msg;
  try {
    msg = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return {{error_json("malformed message: not JSON")}, false};
  }
  return handle(msg);
}

TeleopReply TeleopSession::handle(const nlohmann::json& msg) {
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    return {{error_json("malformed message: missing type")}, false};
  }
  const std::string type = msg["type"];
  try {
    if (type == "start") return start(msg);
    if (type == "act") return act(msg);
    if (type == "abandon") {
      if (!state_) return {{error_json("unknown session: no active episode")}, false};
      return finish();
    }
  } catch (const nlohmann::json::exception& e) {
    return {{error_json(std::string("malformed message: ") + e.what())}, false};
  } catch (const ParseError& e) {
    return {{error_json(std::string("malformed message: ") + e.what())}, false};
  }
  return {{error_json("malformed message: unknown type '" + type + "'")}, false};
}

TeleopReply TeleopSession::start(const nlohmann::json& msg) {
  if (state_) return {{error_json("episode already active")}, false};
  const std::string rater = msg.at("rater").get<std::string>();
  const std::string world = msg.at("world").get<std::string>();
  const std::string goal = msg.at("goal").get<std::string>();
  const int k = hub_.find_world(world);
  if (k < 0) return {{error_json("unknown world '" + world + "'")}, false};
  const auto label = parse_label(goal);
  if (!label) return {{error_json("unknown goal label '" + goal + "'")}, false};
  if (hub_.world(k)->objects_with_label(*label).empty()) {
    return {{error_json("world '" + world + "' has no " + goal)}, false};
  }
  if (!hub_.claim(rater, world)) {
    return {{error_json("duplicate home: rater '" + rater + "' already played world '" + world + "'")}, false};
  }
  const uint64_t seed = hub_.episode_seed(k);
  ResetResult rr = reset(hub_.world(k), *label, seed, hub_.episode(), &hub_.cache());
  record_ = EpisodeRecord{};
  record_.world = world;
  record_.goal = *label;
  record_.goal_id = rr.state.goal_id;
  record_.seed = seed;
  record_.optimal = rr.state.start_distance;
  record_.trajectory.push_back(rr.state.pose);
  state_ = std::move(rr.state);
  finished_ = false;
  return {{frame_json(render_frame(*state_, false), *label)}, false};
}

TeleopReply TeleopSession::act(const nlohmann::json& msg) {
  if (!state_) {
    if (finished_) return {{error_json("episode done")}, true};
    return {{error_json("unknown session: no active episode")}, false};
  }
  const DiscreteAction a = parse_action(msg.at("action").get<std::string>());
  const Pose before = state_->pose;
  const StepResult r = apply_discrete(*state_, a);
  record_step(record_, before, *state_, r);
  TeleopReply reply{{frame_json(render_frame(*state_, r.collided), state_->goal_label)}, false};
  if (state_->done) {
    TeleopReply done = finish();
    reply.messages.insert(reply.messages.end(), done.messages.begin(), done.messages.end());
  }
  return reply;
}

TeleopReply TeleopSession::finish() {
  const nlohmann::json result = {
      {"type", "result"}, {"success", record_.success}, {"spl", spl_term(record_)}, {"steps", record_.steps}};
  hub_.add_record(record_);
  state_.reset();
  finished_ = true;
  return {{result}, false};
}

WebServer::SessionFactory teleop_sessions(TeleopHub& hub) {
  return [&hub]() -> WsHandler {
    auto session = std::make_shared<TeleopSession>(hub);
    return [session](const std::string& text) {
      const TeleopReply r = session->handle(text);
      WsReply out;
      out.close = r.close;
      for (const auto& m : r.messages) out.messages.push_back(m.dump());
      return out;
    };
  };
}

}  // namespace objnav
