#include "objnav/distrib.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "objnav/error.hpp"
#include "objnav/seed.hpp"

namespace objnav {

namespace {

void sleep_ms(int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); }

bool stop_requested(const std::atomic<bool>* stop) { return stop && stop->load(); }

}  // namespace

// ---------------------------------------------------------------------------
// Services

Batch<float> LocalService::sample(int batch_size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return buffer_.sample(rng, batch_size);
}

RemoteService::RemoteService(Endpoint ep, RetryPolicy retry) : ep_(std::move(ep)), retry_(retry) {
  if (retry_.attempts < 1) throw InvariantError("retry policy: attempts must be >= 1");
}

Message RemoteService::call(const Message& req) {
  std::lock_guard lock(mu_);
  Message resp;
  for (int i = 0;; ++i) {
    try {
      if (!client_.connected()) client_.connect(ep_);
      resp = client_.request(req);
      break;
    } catch (const TransportError&) {
      client_.close();
      if (i + 1 >= retry_.attempts) throw;
      sleep_ms(retry_.backoff_ms << std::min(i, 10));
    }
  }
  if (const auto* e = std::get_if<MsgError>(&resp)) {
    if (e->reason.rfind("sample: buffer holds", 0) == 0) throw UnderfilledError(e->reason);
    throw Error("service error: " + e->reason);
  }
  return resp;
}

void RemoteService::add(const Unroll& u) {
  const Message resp = call(MsgAddUnroll{u});
  if (!std::holds_alternative<MsgAck>(resp)) throw ProtocolError("add: expected Ack");
}

Batch<float> RemoteService::sample(int batch_size, uint64_t seed) {
  Message resp = call(MsgSampleRequest{static_cast<uint32_t>(batch_size), seed});
  auto* s = std::get_if<MsgSampleResponse>(&resp);
  if (!s) throw ProtocolError("sample: expected SampleResponse");
  return std::move(s->batch);
}

MsgStatsResponse RemoteService::stats_response() {
  const Message resp = call(MsgStats{});
  const auto* s = std::get_if<MsgStatsResponse>(&resp);
  if (!s) throw ProtocolError("stats: expected StatsResponse");
  return *s;
}

BufferStats RemoteService::stats() { return stats_response().stats; }

uint64_t RemoteService::weights_version() { return stats_response().weights_version; }

std::optional<WeightSnapshot> RemoteService::fetch(uint64_t min_version) {
  Message resp = call(MsgFetchWeights{min_version});
  auto* w = std::get_if<MsgWeightsResponse>(&resp);
  if (!w) throw ProtocolError("fetch: expected WeightsResponse");
  if (!w->modified) return std::nullopt;
  return WeightSnapshot{w->version, std::make_shared<const ParamSet<float>>(std::move(w->params))};
}

void RemoteService::publish(uint64_t version, const ParamSet<float>& params) {
  MsgWeightsResponse m;
  m.version = version;
  m.modified = true;
  m.params = params;
  const Message resp = call(m);
  if (!std::holds_alternative<MsgAck>(resp)) throw ProtocolError("publish: expected Ack");
}

// ---------------------------------------------------------------------------
// Collector

Collector::Collector(std::vector<std::shared_ptr<const World>> worlds, CollectorConfig cfg, GeodesicCache* cache)
    : worlds_(std::move(worlds)), cfg_(std::move(cfg)), cache_(cache), rng_(derive_seed(cfg_.seed, cfg_.id, 0)) {
  if (worlds_.empty()) throw InvariantError("collector: no worlds");
}

void Collector::set_weights(const WeightSnapshot& snap) {
  if (!snap.params) throw InvariantError("collector: empty weight snapshot");
  pending_ = snap;
}

void Collector::begin_episode() {
  if (!pending_.params) throw InvariantError("collector: no weights");
  for (int attempt = 0;; ++attempt) {
    const uint64_t k = episodes_;
    std::mt19937_64 erng(derive_seed(cfg_.seed, cfg_.id + 1, k * 64 + static_cast<uint64_t>(attempt)));
    const auto& world = worlds_[erng() % worlds_.size()];
    std::optional<Label> label;
    for (int off = 0; off < kNumLabels && !label; ++off) {
      const auto cand = static_cast<Label>((static_cast<uint64_t>(cfg_.id) + k + off) % kNumLabels);
      if (!world->objects_with_label(cand).empty()) label = cand;
    }
    if (!label) throw InvariantError("collector: world '" + world->name() + "' has no labeled objects");
    ResetResult rr = reset(world, *label, erng(), cfg_.episode, cache_);
    if (rr.state.done) {
      if (attempt >= 63) throw EpisodeError("collector: every reset started inside the success region");
      continue;
    }
    if (!runner_) {
      runner_ = std::make_unique<PolicyRunner>(cfg_.net, pending_.params);
    } else {
      runner_->set_params(pending_.params);
    }
    runner_->reset();
    state_ = std::move(rr.state);
    unroll_ = Unroll{};
    unroll_.episode_id = (static_cast<uint64_t>(cfg_.id) << 40) | k;
    unroll_.policy_version = pending_.version;
    unroll_.world = world->name();
    unroll_.goal = *label;
    unroll_.obs.push_back(std::move(rr.obs));
    active_ = true;
    return;
  }
}

std::optional<Unroll> Collector::step() {
  if (!active_) begin_episode();
  std::normal_distribution<float> normal;
  const std::array<float, 2> noise{normal(rng_), normal(rng_)};
  const std::array<float, 2> a = runner_->act(unroll_.obs.back(), &noise);
  StepResult r = objnav::step(state_, twist_from_action(a[0], a[1], state_.cfg));
  ++env_steps_;
  unroll_.action.push_back(a);
  unroll_.reward.push_back(static_cast<float>(r.reward));
  unroll_.done.push_back(r.success ? 1 : 0);
  unroll_.obs.push_back(std::move(r.obs));
  if (r.done) {
    active_ = false;
    ++episodes_;
    return std::move(unroll_);
  }
  if (unroll_.length() == kMaxUnrollLen) {
    // Long episode: emit a segment and continue from its last observation.
    Unroll next;
    next.episode_id = unroll_.episode_id;
    next.policy_version = unroll_.policy_version;
    next.world = unroll_.world;
    next.goal = unroll_.goal;
    next.obs.push_back(unroll_.obs.back());
    std::swap(next, unroll_);
    return next;
  }
  return std::nullopt;
}

CollectorReport collector_loop(Collector& collector, WeightChannel& weights, ExperienceSink& sink,
                               const CollectorLimits& limits, const std::atomic<bool>* stop) {
  CollectorReport rep;
  while (!stop_requested(stop) && (limits.max_episodes < 0 || static_cast<int64_t>(rep.episodes) < limits.max_episodes)) {
    if (auto snap = weights.fetch(collector.weights_version())) collector.set_weights(*snap);
    if (!collector.has_weights()) {
      sleep_ms(limits.poll_ms);
      continue;
    }
    do {
      if (auto u = collector.step()) {
        sink.add(*u);
        rep.env_steps += static_cast<uint64_t>(u->length());
      }
    } while (collector.in_episode());
    ++rep.episodes;
  }
  rep.last_version = collector.weights_version();
  return rep;
}

// ---------------------------------------------------------------------------
// Trainer

nlohmann::json metrics_row(int64_t step, const TrainMetrics& m, const BufferStats& s, uint64_t version) {
  return {{"step", step},
          {"env_steps", s.transitions_added},
          {"critic_loss", m.critic_loss},
          {"actor_loss", m.actor_loss},
          {"alpha", m.alpha},
          {"entropy", m.entropy},
          {"avg_return", s.recent_return},
          {"weights_version", version}};
}

TrainerReport trainer_loop(SacState<float>& st, ExperienceSource& source, WeightChannel& weights,
                           const TrainerConfig& cfg, const MetricsSink& metrics, const std::atomic<bool>* stop) {
  if (cfg.publish_every < 1 || cfg.metrics_every < 1) throw InvariantError("trainer: cadences must be >= 1");
  TrainerReport rep;
  weights.publish(++rep.version, st.policy);
  std::mt19937_64 rng(cfg.seed);
  while (rep.steps < cfg.steps && !stop_requested(stop)) {
    const uint64_t sample_seed = rng() | 1;
    const uint64_t noise_seed = rng();
    Batch<float> batch;
    for (;;) {
      try {
        batch = source.sample(st.cfg.batch_size, sample_seed);
        break;
      } catch (const UnderfilledError&) {
        if (stop_requested(stop)) return rep;
        sleep_ms(cfg.poll_ms);
      }
    }
    const TrainMetrics m = train_step(st, batch, noise_seed);
    ++rep.steps;
    if (rep.steps % cfg.publish_every == 0 || rep.steps == cfg.steps) weights.publish(++rep.version, st.policy);
    if (metrics && (rep.steps % cfg.metrics_every == 0 || rep.steps == cfg.steps)) {
      metrics(metrics_row(rep.steps, m, source.stats(), rep.version));
    }
  }
  // Stopped early: publish the updates since the last snapshot.
  if (rep.steps % cfg.publish_every != 0 && rep.steps != cfg.steps) weights.publish(++rep.version, st.policy);
  return rep;
}

// ---------------------------------------------------------------------------
// Single-process training

void to_json(nlohmann::json& j, const LocalRunConfig& cfg) {
  j = {{"seed", cfg.seed},
       {"collectors", cfg.collectors},
       {"env_steps", cfg.env_steps},
       {"env_steps_per_train", cfg.env_steps_per_train},
       {"max_train_steps", cfg.max_train_steps},
       {"publish_every", cfg.publish_every},
       {"metrics_every", cfg.metrics_every},
       {"eval_every", cfg.eval_every},
       {"threaded", cfg.threaded},
       {"episode", cfg.episode},
       {"buffer", cfg.buffer}};
}

void from_json(const nlohmann::json& j, LocalRunConfig& cfg) {
  cfg.seed = j.value("seed", cfg.seed);
  cfg.collectors = j.value("collectors", cfg.collectors);
  cfg.env_steps = j.value("env_steps", cfg.env_steps);
  cfg.env_steps_per_train = j.value("env_steps_per_train", cfg.env_steps_per_train);
  cfg.max_train_steps = j.value("max_train_steps", cfg.max_train_steps);
  cfg.publish_every = j.value("publish_every", cfg.publish_every);
  cfg.metrics_every = j.value("metrics_every", cfg.metrics_every);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.threaded = j.value("threaded", cfg.threaded);
  if (j.contains("episode")) j.at("episode").get_to(cfg.episode);
  if (j.contains("buffer")) j.at("buffer").get_to(cfg.buffer);
}

namespace {

std::vector<Collector> make_collectors(const std::vector<std::shared_ptr<const World>>& worlds,
                                       const LocalRunConfig& cfg, const NetConfig& net, GeodesicCache* cache) {
  std::vector<Collector> out;
  for (int i = 0; i < cfg.collectors; ++i) {
    CollectorConfig cc;
    cc.id = i;
    cc.seed = cfg.seed;
    cc.episode = cfg.episode;
    cc.net = net;
    out.emplace_back(worlds, cc, cache);
  }
  return out;
}

LocalRunResult run_threaded(const std::vector<std::shared_ptr<const World>>& worlds, const LocalRunConfig& cfg,
                            SacState<float>& st, const MetricsSink& metrics, const EvalHook& eval) {
  ReplayBuffer buffer(cfg.buffer);
  WeightStore store;
  LocalService svc(buffer, store);
  GeodesicCache cache;
  std::vector<Collector> collectors = make_collectors(worlds, cfg, st.net, &cache);
  std::atomic<bool> stop_collect{false}, stop_train{false};
  std::mutex metrics_mu;
  MetricsSink guarded = [&](const nlohmann::json& row) {
    std::lock_guard lock(metrics_mu);
    if (metrics) metrics(row);
  };

  TrainerConfig tc;
  tc.steps = cfg.max_train_steps >= 0 ? cfg.max_train_steps : std::numeric_limits<int64_t>::max();
  tc.publish_every = cfg.publish_every;
  tc.metrics_every = cfg.metrics_every;
  tc.seed = derive_seed(cfg.seed, 0x7261696eull);
  tc.poll_ms = 20;
  TrainerReport trep;
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto guard = [&](auto&& fn) {
    try {
      fn();
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
      stop_collect = true;
      stop_train = true;
    }
  };
  std::thread trainer([&] { guard([&] { trep = trainer_loop(st, svc, svc, tc, guarded, &stop_train); }); });
  std::vector<std::thread> threads;
  for (auto& c : collectors) {
    threads.emplace_back([&] { guard([&] { collector_loop(c, svc, svc, CollectorLimits{}, &stop_collect); }); });
  }

  LocalRunResult res;
  int64_t next_eval = cfg.eval_every;
  while (!stop_collect) {
    sleep_ms(10);
    const BufferStats s = buffer.stats();
    const auto env = static_cast<int64_t>(s.transitions_added);
    if (env >= cfg.env_steps) break;
    if (cfg.eval_every > 0 && env >= next_eval) {
      next_eval += cfg.eval_every;
      if (auto snap = store.fetch(0); snap && eval && eval(*snap->params, env, trep.steps)) {
        res.stopped_by_eval = true;
        break;
      }
    }
  }
  stop_collect = true;
  for (auto& t : threads) t.join();
  stop_train = true;
  trainer.join();
  if (failure) std::rethrow_exception(failure);
  res.buffer = buffer.stats();
  res.env_steps = static_cast<int64_t>(res.buffer.transitions_added);
  res.train_steps = trep.steps;
  res.version = trep.version;
  return res;
}

}  // namespace

LocalRunResult train_local(const std::vector<std::shared_ptr<const World>>& worlds, const LocalRunConfig& cfg,
                           SacState<float>& st, const MetricsSink& metrics, const EvalHook& eval) {
  if (cfg.collectors < 1) throw InvariantError("train-local: collectors must be >= 1");
  if (!(cfg.env_steps_per_train > 0)) throw InvariantError("train-local: env_steps_per_train must be > 0");
  if (cfg.publish_every < 1 || cfg.metrics_every < 1) throw InvariantError("train-local: cadences must be >= 1");
  if (cfg.buffer.crop_len != st.cfg.crop_len) throw InvariantError("train-local: buffer and SAC crop lengths differ");
  if (cfg.threaded) return run_threaded(worlds, cfg, st, metrics, eval);

  ReplayBuffer buffer(cfg.buffer);
  WeightStore store;
  LocalService svc(buffer, store);
  GeodesicCache cache;
  std::vector<Collector> collectors = make_collectors(worlds, cfg, st.net, &cache);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x7261696eull));

  LocalRunResult res;
  store.publish(++res.version, st.policy);
  int64_t added = 0;
  int64_t fill_at = -1;
  int64_t next_eval = cfg.eval_every;
  const auto train_cap = cfg.max_train_steps;
  bool finished = false;

  while (!finished && res.env_steps < cfg.env_steps) {
    for (auto& c : collectors) {
      if (res.env_steps >= cfg.env_steps) break;
      if (!c.in_episode()) {
        if (auto snap = store.fetch(c.weights_version())) c.set_weights(*snap);
      }
      if (auto u = c.step()) {
        added += u->length();
        buffer.add(std::move(*u));
      }
      ++res.env_steps;
    }
    if (fill_at < 0 && added >= cfg.buffer.min_fill) fill_at = res.env_steps;
    if (fill_at >= 0) {
      const auto due = static_cast<int64_t>(std::floor(static_cast<double>(res.env_steps - fill_at) /
                                                       cfg.env_steps_per_train));
      while (res.train_steps < due && (train_cap < 0 || res.train_steps < train_cap)) {
        const uint64_t sample_seed = rng() | 1;
        const uint64_t noise_seed = rng();
        const TrainMetrics m = train_step(st, svc.sample(st.cfg.batch_size, sample_seed), noise_seed);
        ++res.train_steps;
        if (res.train_steps % cfg.publish_every == 0) store.publish(++res.version, st.policy);
        if (metrics && res.train_steps % cfg.metrics_every == 0) {
          metrics(metrics_row(res.train_steps, m, buffer.stats(), res.version));
        }
      }
      if (train_cap >= 0 && res.train_steps >= train_cap) finished = true;
    }
    if (cfg.eval_every > 0 && res.env_steps >= next_eval) {
      next_eval += cfg.eval_every;
      if (eval && eval(st.policy, res.env_steps, res.train_steps)) {
        res.stopped_by_eval = true;
        finished = true;
      }
    }
  }
  res.buffer = buffer.stats();
  return res;
}

}  // namespace objnav
