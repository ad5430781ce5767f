#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "objnav/baselines.hpp"
#include "objnav/nets.hpp"
#include "objnav/sim.hpp"
#include "objnav/world.hpp"

namespace objnav {

struct EpisodeRecord {
  std::string world;
  Label goal = Label::bed;
  int goal_id = -1;
  uint64_t seed = 0;
  bool success = false;
  double optimal = 0;      // geodesic distance to the success region at the start pose
  double path_length = 0;  // sum of per-step displacements
  int steps = 0;
  int collisions = 0;
  std::vector<Pose> trajectory;  // start pose plus one pose per step
};

void to_json(nlohmann::json& j, const EpisodeRecord& r);
void from_json(const nlohmann::json& j, EpisodeRecord& r);

/// S * o / max(l, o) for one record.
double spl_term(const EpisodeRecord& r);
/// Throws InvariantError on an empty set or a nonpositive optimal length.
double compute_spl(const std::vector<EpisodeRecord>& records);
double success_rate(const std::vector<EpisodeRecord>& records);

struct BucketStat {
  double lo = 0;
  double hi = 0;
  int n = 0;
  double spl = 0;
  double sr = 0;
};

/// Half-open buckets [e_k, e_{k+1}) over the optimal length; records outside all buckets are dropped.
/// Throws InvariantError unless edges are strictly increasing.
std::vector<BucketStat> bucket_by_distance(const std::vector<EpisodeRecord>& records, const std::vector<double>& edges);

struct ObjectRow {
  int n = 0;
  double spl = 0;
  double sr = 0;
};

struct ObjectTable {
  std::map<Label, ObjectRow> rows;
  /// Label means: each label with records counts once.
  double mean_spl = 0;
  double mean_sr = 0;
};

ObjectTable per_object_table(const std::vector<EpisodeRecord>& records);

nlohmann::json to_json(const std::vector<BucketStat>& buckets);
nlohmann::json to_json(const ObjectTable& table);

/// Walls, objects (goal outlined red) and the trajectory shaded green to blue.
std::string export_trajectory_svg(const EpisodeRecord& record, const World& world);

// ---------------------------------------------------------------------------
// Policies and the episode harness

class EpisodePolicy {
 public:
  virtual ~EpisodePolicy() = default;
  virtual void begin(const EpisodeState& env, uint64_t seed) = 0;
  virtual Twist act(const Observation& obs, const EpisodeState& env) = 0;
};

class StandStillPolicy : public EpisodePolicy {
 public:
  void begin(const EpisodeState&, uint64_t) override {}
  Twist act(const Observation&, const EpisodeState&) override { return {}; }
};

/// Deterministic (mean) action of a trained policy.
class SacPolicy : public EpisodePolicy {
 public:
  SacPolicy(NetConfig net, std::shared_ptr<const ParamSet<float>> params) : runner_(std::move(net), std::move(params)) {}
  void begin(const EpisodeState&, uint64_t) override { runner_.reset(); }
  Twist act(const Observation& obs, const EpisodeState& env) override;

 private:
  PolicyRunner runner_;
};

class RoombaPolicy : public EpisodePolicy {
 public:
  void begin(const EpisodeState& env, uint64_t seed) override;
  Twist act(const Observation& obs, const EpisodeState& env) override { return roomba_step(obs, env, st_); }
  const RoombaState& state() const { return st_; }

 private:
  RoombaState st_;
};

/// Caches one skeleton graph per world.
class TgtPolicy : public EpisodePolicy {
 public:
  void begin(const EpisodeState& env, uint64_t seed) override;
  Twist act(const Observation& obs, const EpisodeState& env) override { return tgt_step(obs, env, *graph_, st_); }
  const TgtState& state() const { return st_; }

 private:
  std::map<const World*, std::shared_ptr<const TopoGraph>> graphs_;
  std::shared_ptr<const TopoGraph> graph_;
  TgtState st_;
};

/// Replays a fixed twist list, then stands still.
class ReplayPolicy : public EpisodePolicy {
 public:
  explicit ReplayPolicy(std::vector<Twist> twists) : twists_(std::move(twists)) {}
  void begin(const EpisodeState&, uint64_t) override { next_ = 0; }
  Twist act(const Observation&, const EpisodeState&) override { return next_ < twists_.size() ? twists_[next_++] : Twist{}; }

 private:
  std::vector<Twist> twists_;
  size_t next_ = 0;
};

/// Drives reset/step to termination. The policy is seeded with a stream derived from `seed`.
EpisodeRecord run_episode(EpisodePolicy& policy, std::shared_ptr<const World> world, Label goal, uint64_t seed,
                          const EpisodeConfig& cfg, GeodesicCache* cache = nullptr);

/// Accumulates path length, steps, collisions and the trajectory after a step.
void record_step(EpisodeRecord& rec, const Pose& before, const EpisodeState& after, const StepResult& r);

struct SuiteConfig {
  int episodes_per_world = 10;
  uint64_t seed = 1;
  int workers = 1;
  EpisodeConfig episode;
  std::vector<double> bucket_edges{0, 2, 4, 6, 8, 10, 15};
};

void to_json(nlohmann::json& j, const SuiteConfig& cfg);
void from_json(const nlohmann::json& j, SuiteConfig& cfg);

/// Goal label and reset seed for episode `i` in world `k`: labels present in the world are cycled.
std::pair<Label, uint64_t> suite_episode(const World& world, size_t k, int i, uint64_t seed);

using PolicyFactory = std::function<std::unique_ptr<EpisodePolicy>()>;

/// Worlds x episodes, evaluated on `workers` threads; record order is independent of scheduling.
std::vector<EpisodeRecord> run_suite(const PolicyFactory& make_policy, const std::vector<std::shared_ptr<const World>>& worlds,
                                     const SuiteConfig& cfg);

/// {"config", "records", "spl", "sr", "buckets", "per_object"}.
nlohmann::json results_json(const std::vector<EpisodeRecord>& records, const SuiteConfig& cfg, const nlohmann::json& extra = {});

}  // namespace objnav
