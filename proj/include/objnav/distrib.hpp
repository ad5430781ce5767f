#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "objnav/net.hpp"
#include "objnav/nets.hpp"
#include "objnav/replay.hpp"
#include "objnav/sac.hpp"
#include "objnav/sim.hpp"
#include "objnav/weights.hpp"

namespace objnav {

// ---------------------------------------------------------------------------
// Role-facing service interfaces

class ExperienceSink {
 public:
  virtual ~ExperienceSink() = default;
  virtual void add(const Unroll& u) = 0;
};

class ExperienceSource {
 public:
  virtual ~ExperienceSource() = default;
  /// Throws UnderfilledError below min_fill.
  virtual Batch<float> sample(int batch_size, uint64_t seed) = 0;
  virtual BufferStats stats() = 0;
};

class WeightChannel {
 public:
  virtual ~WeightChannel() = default;
  /// nullopt means not modified.
  virtual std::optional<WeightSnapshot> fetch(uint64_t min_version) = 0;
  virtual void publish(uint64_t version, const ParamSet<float>& params) = 0;
};

/// In-process buffer and weight store.
class LocalService : public ExperienceSink, public ExperienceSource, public WeightChannel {
 public:
  LocalService(ReplayBuffer& buffer, WeightStore& weights) : buffer_(buffer), weights_(weights) {}

  void add(const Unroll& u) override { buffer_.add(u); }
  Batch<float> sample(int batch_size, uint64_t seed) override;
  BufferStats stats() override { return buffer_.stats(); }
  std::optional<WeightSnapshot> fetch(uint64_t min_version) override { return weights_.fetch(min_version); }
  void publish(uint64_t version, const ParamSet<float>& params) override { weights_.publish(version, params); }

 private:
  ReplayBuffer& buffer_;
  WeightStore& weights_;
};

struct RetryPolicy {
  int attempts = 8;
  int backoff_ms = 50;
};

/// Replay and weight service over one TCP connection. Transport failures reconnect with doubling
/// backoff; after `attempts` consecutive failures the TransportError propagates. Thread-safe.
class RemoteService : public ExperienceSink, public ExperienceSource, public WeightChannel {
 public:
  RemoteService(Endpoint ep, RetryPolicy retry = {});

  void add(const Unroll& u) override;
  Batch<float> sample(int batch_size, uint64_t seed) override;
  BufferStats stats() override;
  std::optional<WeightSnapshot> fetch(uint64_t min_version) override;
  void publish(uint64_t version, const ParamSet<float>& params) override;
  uint64_t weights_version();

 private:
  Message call(const Message& req);
  MsgStatsResponse stats_response();

  Endpoint ep_;
  RetryPolicy retry_;
  std::mutex mu_;
  FrameClient client_;
};

// ---------------------------------------------------------------------------
// Collector

struct CollectorConfig {
  int id = 0;
  uint64_t seed = 1;
  EpisodeConfig episode = [] {
    EpisodeConfig c;
    c.max_steps = kMaxUnrollLen;
    return c;
  }();
  NetConfig net;
};

/// Steps a stochastic recurrent policy through episodes and packs each episode into an unroll.
/// Episode k of collector i targets label (i + k) mod 9, skipping labels absent from the world.
class Collector {
 public:
  Collector(std::vector<std::shared_ptr<const World>> worlds, CollectorConfig cfg, GeodesicCache* cache = nullptr);

  /// Takes effect at the next episode start.
  void set_weights(const WeightSnapshot& snap);
  uint64_t weights_version() const { return pending_.version; }
  bool has_weights() const { return pending_.params != nullptr; }
  bool in_episode() const { return active_; }

  /// Advances one environment step, starting an episode first when none is active.
  /// Returns the finished unroll when the episode ends.
  std::optional<Unroll> step();

  uint64_t env_steps() const { return env_steps_; }
  uint64_t episodes() const { return episodes_; }

 private:
  void begin_episode();

  std::vector<std::shared_ptr<const World>> worlds_;
  CollectorConfig cfg_;
  GeodesicCache* cache_;
  std::mt19937_64 rng_;
  WeightSnapshot pending_;
  std::unique_ptr<PolicyRunner> runner_;
  EpisodeState state_;
  Unroll unroll_;
  bool active_ = false;
  uint64_t env_steps_ = 0;
  uint64_t episodes_ = 0;
};

struct CollectorLimits {
  int64_t max_episodes = -1;  // <0: unlimited
  int poll_ms = 50;
};

struct CollectorReport {
  uint64_t episodes = 0;
  uint64_t env_steps = 0;
  uint64_t last_version = 0;
};

/// Fetch-if-newer, run one episode, send it; repeats until `stop` or the episode limit.
/// Waits for the first snapshot before collecting. Transport errors propagate.
CollectorReport collector_loop(Collector& collector, WeightChannel& weights, ExperienceSink& sink,
                               const CollectorLimits& limits, const std::atomic<bool>* stop = nullptr);

// ---------------------------------------------------------------------------
// Trainer

struct TrainerConfig {
  int64_t steps = 0;
  int publish_every = 50;
  int metrics_every = 100;
  uint64_t seed = 1;
  int poll_ms = 100;
};

using MetricsSink = std::function<void(const nlohmann::json&)>;

/// One metrics row; `env_steps` and `avg_return` come from buffer statistics.
nlohmann::json metrics_row(int64_t step, const TrainMetrics& m, const BufferStats& s, uint64_t version);

struct TrainerReport {
  int64_t steps = 0;
  uint64_t version = 0;
};

/// Publishes version 1 immediately, waits out underfilled responses, then trains for `steps` updates,
/// publishing every `publish_every` updates and after the last one.
TrainerReport trainer_loop(SacState<float>& st, ExperienceSource& source, WeightChannel& weights,
                           const TrainerConfig& cfg, const MetricsSink& metrics,
                           const std::atomic<bool>* stop = nullptr);

// ---------------------------------------------------------------------------
// Single-process training

struct LocalRunConfig {
  uint64_t seed = 1;
  int collectors = 4;
  int64_t env_steps = 300000;
  /// Trainer updates are scheduled one per this many env steps after min_fill is reached.
  double env_steps_per_train = 16.0;
  int64_t max_train_steps = -1;  // <0: unlimited
  int publish_every = 50;
  int metrics_every = 100;
  int64_t eval_every = 0;  // env steps between eval hook calls; 0 disables
  /// Lock-step round robin (deterministic) when false; real threads when true.
  bool threaded = false;
  EpisodeConfig episode = CollectorConfig{}.episode;
  BufferConfig buffer;
};

void to_json(nlohmann::json& j, const LocalRunConfig& cfg);
void from_json(const nlohmann::json& j, LocalRunConfig& cfg);

/// Called with the current policy; returning true stops the run.
using EvalHook = std::function<bool(const ParamSet<float>& policy, int64_t env_steps, int64_t train_steps)>;

struct LocalRunResult {
  int64_t env_steps = 0;
  int64_t train_steps = 0;
  uint64_t version = 0;
  BufferStats buffer;
  bool stopped_by_eval = false;
};

LocalRunResult train_local(const std::vector<std::shared_ptr<const World>>& worlds, const LocalRunConfig& cfg,
                           SacState<float>& st, const MetricsSink& metrics = {}, const EvalHook& eval = {});

}  // namespace objnav
