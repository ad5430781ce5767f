#include "objnav/replay.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <mutex>

#include "objnav/bytes.hpp"
#include "objnav/error.hpp"

namespace objnav {

// ---------------------------------------------------------------------------
// Unroll and buffer

void Unroll::validate(int lidar_rays, int det_bins) const {
  const int L = length();
  if (L < 1 || L > kMaxUnrollLen) {
    throw InvariantError("unroll: length " + std::to_string(L) + " outside [1, " + std::to_string(kMaxUnrollLen) + "]");
  }
  if (static_cast<int>(obs.size()) != L + 1 || static_cast<int>(reward.size()) != L ||
      static_cast<int>(done.size()) != L) {
    throw InvariantError("unroll: expected " + std::to_string(L + 1) + " observations and " + std::to_string(L) +
                         " rewards/done flags");
  }
  for (int t = 0; t + 1 < L; ++t) {
    if (done[static_cast<size_t>(t)]) throw InvariantError("unroll: done flag at step " + std::to_string(t) + " is not final");
  }
  for (int t = 0; t < L; ++t) {
    const auto& a = action[static_cast<size_t>(t)];
    if (!(std::abs(a[0]) <= 1.f && std::abs(a[1]) <= 1.f)) {
      throw InvariantError("unroll: action at step " + std::to_string(t) + " outside [-1,1]^2");
    }
    if (!std::isfinite(reward[static_cast<size_t>(t)])) throw InvariantError("unroll: non-finite reward");
  }
  for (const auto& o : obs) {
    if ((lidar_rays >= 0 && static_cast<int>(o.lidar.size()) != lidar_rays) ||
        (det_bins >= 0 && static_cast<int>(o.det.size()) != det_bins)) {
      throw InvariantError("unroll: observation sensor sizes do not match the buffer");
    }
  }
}

void BufferConfig::validate() const {
  if (crop_len < 1) throw InvariantError("buffer config: crop_len must be >= 1");
  if (min_fill < crop_len) throw InvariantError("buffer config: min_fill must be >= crop_len");
  if (capacity < min_fill) throw InvariantError("buffer config: capacity must be >= min_fill");
}

void to_json(nlohmann::json& j, const BufferConfig& cfg) {
  j = {{"capacity", cfg.capacity},       {"crop_len", cfg.crop_len},     {"min_fill", cfg.min_fill},
       {"lidar_max_range", cfg.lidar_max_range}, {"lidar_rays", cfg.lidar_rays}, {"det_bins", cfg.det_bins}};
}

void from_json(const nlohmann::json& j, BufferConfig& cfg) {
  cfg.capacity = j.value("capacity", cfg.capacity);
  cfg.crop_len = j.value("crop_len", cfg.crop_len);
  cfg.min_fill = j.value("min_fill", cfg.min_fill);
  cfg.lidar_max_range = j.value("lidar_max_range", cfg.lidar_max_range);
  cfg.lidar_rays = j.value("lidar_rays", cfg.lidar_rays);
  cfg.det_bins = j.value("det_bins", cfg.det_bins);
}

ReplayBuffer::ReplayBuffer(BufferConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void ReplayBuffer::add(Unroll u) {
  u.validate(cfg_.lidar_rays, cfg_.det_bins);
  const int L = u.length();
  double ret = 0;
  for (float r : u.reward) ret += r;
  std::unique_lock lock(mu_);
  returns_.push_back(ret);
  returns_sum_ += ret;
  if (returns_.size() > kReturnWindow) {
    returns_sum_ -= returns_.front();
    returns_.pop_front();
  }
  entries_.push_back(Entry{next_index_, std::move(u)});
  next_index_ += L;
  stored_ += L;
  stats_.unrolls_added += 1;
  stats_.transitions_added += static_cast<uint64_t>(L);
  // Whole-unroll FIFO eviction; the newest unroll always survives.
  while (stored_ > cfg_.capacity && entries_.size() > 1) {
    stored_ -= entries_.front().u.length();
    entries_.pop_front();
    stats_.unrolls_evicted += 1;
  }
}

BufferStats ReplayBuffer::stats() const {
  std::shared_lock lock(mu_);
  BufferStats s = stats_;
  s.unrolls_stored = entries_.size();
  s.transitions_stored = static_cast<uint64_t>(stored_);
  s.batches_sampled = sampled_.load();
  s.recent_return = returns_.empty() ? 0.0 : returns_sum_ / static_cast<double>(returns_.size());
  return s;
}

Batch<float> ReplayBuffer::sample(std::mt19937_64& rng, int batch_size, SampleTrace* trace) const {
  if (batch_size < 1) throw InvariantError("sample: batch_size must be >= 1");
  std::shared_lock lock(mu_);
  if (stored_ < cfg_.min_fill || stored_ == 0) {
    throw UnderfilledError("sample: buffer holds " + std::to_string(stored_) + " transitions, min_fill is " +
                           std::to_string(cfg_.min_fill));
  }
  const int64_t base = entries_.front().first;
  std::uniform_int_distribution<int64_t> pick(0, stored_ - 1);
  std::vector<const Unroll*> chosen;
  std::vector<int> starts;
  if (trace) *trace = SampleTrace{};
  for (int i = 0; i < batch_size; ++i) {
    const int64_t anchor = base + pick(rng);
    auto it = std::upper_bound(entries_.begin(), entries_.end(), anchor,
                               [](int64_t a, const Entry& e) { return a < e.first; });
    const Entry& e = *std::prev(it);
    const int L = e.u.length();
    const int start = std::uniform_int_distribution<int>(0, std::max(0, L - cfg_.crop_len))(rng);
    chosen.push_back(&e.u);
    starts.push_back(start);
    if (trace) {
      trace->anchor.push_back(anchor);
      trace->episode.push_back(e.u.episode_id);
      trace->start.push_back(start);
    }
  }
  Batch<float> b = assemble_batch(chosen, starts, cfg_.crop_len, cfg_.lidar_max_range);
  sampled_.fetch_add(1);
  return b;
}

Batch<float> assemble_batch(const std::vector<const Unroll*>& unrolls, const std::vector<int>& starts, int crop_len,
                            double lidar_max_range) {
  const int B = static_cast<int>(unrolls.size());
  const int S = crop_len;
  if (B == 0 || static_cast<int>(starts.size()) != B) throw InvariantError("assemble_batch: empty or mismatched input");
  NetConfig net;
  net.lidar_rays = static_cast<int>(unrolls[0]->obs[0].lidar.size());
  net.det_bins = static_cast<int>(unrolls[0]->obs[0].det.size());
  net.lidar_max_range = lidar_max_range;

  std::vector<const Observation*> rows(static_cast<size_t>((S + 1) * B));
  Batch<float> out;
  out.batch = B;
  out.steps = S;
  out.action = ad::Tensor<float>({S * B, 2});
  out.reward = ad::Tensor<float>({S * B, 1});
  out.done = ad::Tensor<float>({S * B, 1});
  out.mask = ad::Tensor<float>({S * B, 1});
  for (int b = 0; b < B; ++b) {
    const Unroll& u = *unrolls[static_cast<size_t>(b)];
    const int L = u.length();
    const int s0 = starts[static_cast<size_t>(b)];
    for (int t = 0; t <= S; ++t) {
      // Padding rows repeat the last stored observation.
      rows[static_cast<size_t>(t * B + b)] = &u.obs[static_cast<size_t>(std::min(s0 + t, L))];
    }
    for (int t = 0; t < S && s0 + t < L; ++t) {
      const size_t r = static_cast<size_t>(t * B + b);
      const size_t k = static_cast<size_t>(s0 + t);
      out.action[2 * r] = u.action[k][0];
      out.action[2 * r + 1] = u.action[k][1];
      out.reward[r] = u.reward[k];
      out.done[r] = u.done[k] ? 1.f : 0.f;
      out.mask[r] = 1.f;
    }
  }
  out.obs = make_obs_batch<float>(rows, net);
  return out;
}

// ---------------------------------------------------------------------------
// Arrays

namespace {

size_t dtype_size(DType d) { return d == DType::u8 ? 1 : 4; }

void put_array(ByteWriter& w, const WireArray& a) {
  w.put_string16(a.name);
  w.put<uint8_t>(static_cast<uint8_t>(a.dtype));
  if (a.dims.size() > 255) throw LengthOverflowError("array '" + a.name + "': too many dimensions");
  w.put<uint8_t>(static_cast<uint8_t>(a.dims.size()));
  for (uint32_t d : a.dims) w.put<uint32_t>(d);
  if (a.data.size() != a.count() * dtype_size(a.dtype)) {
    throw ProtocolError("array '" + a.name + "': data size does not match dims");
  }
  w.put_bytes(a.data.data(), a.data.size());
}

WireArray get_array(ByteReader& r) {
  WireArray a;
  a.name = r.get_string16();
  const uint8_t dt = r.get<uint8_t>();
  if (dt > 2) throw ProtocolError("array '" + a.name + "': unknown dtype " + std::to_string(dt));
  a.dtype = static_cast<DType>(dt);
  const uint8_t nd = r.get<uint8_t>();
  uint64_t n = 1;
  for (int i = 0; i < nd; ++i) {
    a.dims.push_back(r.get<uint32_t>());
    n *= a.dims.back();
    if (n > kMaxPayload) throw LengthOverflowError("array '" + a.name + "': element count exceeds payload limit");
  }
  a.data = std::string(r.get_bytes(n * dtype_size(a.dtype)));
  return a;
}

void put_arrays(ByteWriter& w, const std::vector<WireArray>& arrays) {
  if (arrays.size() > 0xFFFF) throw LengthOverflowError("too many arrays in one payload");
  w.put<uint16_t>(static_cast<uint16_t>(arrays.size()));
  for (const auto& a : arrays) put_array(w, a);
}

std::vector<WireArray> get_arrays(ByteReader& r) {
  const uint16_t n = r.get<uint16_t>();
  std::vector<WireArray> out;
  out.reserve(n);
  for (uint16_t i = 0; i < n; ++i) out.push_back(get_array(r));
  return out;
}

const WireArray& find(const std::vector<WireArray>& arrays, std::string_view name) {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw ProtocolError("payload is missing array '" + std::string(name) + "'");
}

void expect(const WireArray& a, DType dt, std::vector<uint32_t> dims) {
  if (a.dtype != dt || a.dims != dims) throw ProtocolError("array '" + a.name + "': unexpected dtype or shape");
}

template <class V>
std::string raw(const V* p, size_t n) {
  return std::string(reinterpret_cast<const char*>(p), n * sizeof(V));
}

}  // namespace

size_t WireArray::count() const {
  size_t n = 1;
  for (uint32_t d : dims) n *= d;
  return n;
}

WireArray to_wire(std::string name, const ad::Tensor<float>& t) {
  WireArray a;
  a.name = std::move(name);
  a.dtype = DType::f32;
  for (int d : t.shape()) a.dims.push_back(static_cast<uint32_t>(d));
  a.data = raw(t.data(), t.size());
  return a;
}

WireArray to_wire_i32(std::string name, std::vector<uint32_t> dims, const std::vector<int32_t>& v) {
  WireArray a{std::move(name), DType::i32, std::move(dims), raw(v.data(), v.size())};
  if (a.count() != v.size()) throw ShapeError("to_wire_i32: dims do not match data");
  return a;
}

WireArray to_wire_u8(std::string name, std::vector<uint32_t> dims, const std::vector<uint8_t>& v) {
  WireArray a{std::move(name), DType::u8, std::move(dims), raw(v.data(), v.size())};
  if (a.count() != v.size()) throw ShapeError("to_wire_u8: dims do not match data");
  return a;
}

ad::Tensor<float> tensor_from_wire(const WireArray& a) {
  if (a.dtype != DType::f32) throw ProtocolError("array '" + a.name + "': expected f32");
  ad::Shape s;
  for (uint32_t d : a.dims) s.push_back(static_cast<int>(d));
  ad::Tensor<float> t(s);
  std::memcpy(t.data(), a.data.data(), a.data.size());
  return t;
}

std::vector<int32_t> i32_from_wire(const WireArray& a) {
  if (a.dtype != DType::i32) throw ProtocolError("array '" + a.name + "': expected i32");
  std::vector<int32_t> v(a.count());
  std::memcpy(v.data(), a.data.data(), a.data.size());
  return v;
}

std::vector<uint8_t> u8_from_wire(const WireArray& a) {
  if (a.dtype != DType::u8) throw ProtocolError("array '" + a.name + "': expected u8");
  return std::vector<uint8_t>(a.data.begin(), a.data.end());
}

// ---------------------------------------------------------------------------
// Payloads

namespace {

std::vector<WireArray> unroll_arrays(const Unroll& u) {
  const uint32_t L = static_cast<uint32_t>(u.length());
  const uint32_t n = L + 1;
  const uint32_t R = u.obs.empty() ? 0 : static_cast<uint32_t>(u.obs[0].lidar.size());
  const uint32_t D = u.obs.empty() ? 0 : static_cast<uint32_t>(u.obs[0].det.size());
  if (u.obs.size() != n) throw InvariantError("unroll: expected L+1 observations");
  std::vector<float> lidar, goal, prev;
  std::vector<uint8_t> det, coll;
  for (const auto& o : u.obs) {
    if (o.lidar.size() != R || o.det.size() != D) throw InvariantError("unroll: ragged observations");
    lidar.insert(lidar.end(), o.lidar.begin(), o.lidar.end());
    det.insert(det.end(), o.det.begin(), o.det.end());
    goal.insert(goal.end(), o.goal.begin(), o.goal.end());
    prev.insert(prev.end(), o.prev_action.begin(), o.prev_action.end());
    coll.push_back(o.collision);
  }
  std::vector<float> act;
  for (const auto& a : u.action) act.insert(act.end(), a.begin(), a.end());
  if (u.reward.size() != L || u.done.size() != L) throw InvariantError("unroll: reward/done length mismatch");
  auto f32 = [](std::string name, std::vector<uint32_t> dims, const std::vector<float>& v) {
    return WireArray{std::move(name), DType::f32, std::move(dims), raw(v.data(), v.size())};
  };
  std::vector<uint8_t> world(u.world.begin(), u.world.end());
  return {to_wire_u8("world", {static_cast<uint32_t>(world.size())}, world),
          to_wire_i32("goal_label", {}, {static_cast<int32_t>(u.goal)}),
          f32("obs/lidar", {n, R}, lidar),
          to_wire_u8("obs/det", {n, D}, det),
          f32("obs/goal", {n, static_cast<uint32_t>(kNumLabels)}, goal),
          f32("obs/prev_action", {n, 2}, prev),
          to_wire_u8("obs/collision", {n}, coll),
          f32("action", {L, 2}, act),
          f32("reward", {L}, u.reward),
          to_wire_u8("done", {L}, u.done)};
}

Unroll unroll_from_arrays(const std::vector<WireArray>& arrays) {
  Unroll u;
  const WireArray& world = find(arrays, "world");
  if (world.dtype != DType::u8 || world.dims.size() != 1) throw ProtocolError("array 'world': expected u8 vector");
  u.world = world.data;
  const WireArray& gl = find(arrays, "goal_label");
  expect(gl, DType::i32, {});
  const int32_t label = i32_from_wire(gl)[0];
  if (label < 0 || label >= kNumLabels) throw ProtocolError("goal_label out of range");
  u.goal = static_cast<Label>(label);

  const WireArray& act = find(arrays, "action");
  if (act.dims.size() != 2) throw ProtocolError("array 'action': expected [L,2]");
  const uint32_t L = act.dims[0];
  const uint32_t n = L + 1;
  const WireArray& lidar = find(arrays, "obs/lidar");
  const WireArray& det = find(arrays, "obs/det");
  if (lidar.dims.size() != 2 || det.dims.size() != 2) throw ProtocolError("observation arrays must be 2-d");
  const uint32_t R = lidar.dims[1], D = det.dims[1];
  expect(act, DType::f32, {L, 2});
  expect(lidar, DType::f32, {n, R});
  expect(det, DType::u8, {n, D});
  const WireArray& goal = find(arrays, "obs/goal");
  expect(goal, DType::f32, {n, static_cast<uint32_t>(kNumLabels)});
  const WireArray& prev = find(arrays, "obs/prev_action");
  expect(prev, DType::f32, {n, 2});
  const WireArray& coll = find(arrays, "obs/collision");
  expect(coll, DType::u8, {n});
  const WireArray& rew = find(arrays, "reward");
  expect(rew, DType::f32, {L});
  const WireArray& done = find(arrays, "done");
  expect(done, DType::u8, {L});

  const ad::Tensor<float> lt = tensor_from_wire(lidar), gt = tensor_from_wire(goal), pt = tensor_from_wire(prev),
                          at = tensor_from_wire(act), rt = tensor_from_wire(rew);
  const std::vector<uint8_t> dv = u8_from_wire(det), cv = u8_from_wire(coll);
  u.obs.resize(n);
  for (uint32_t t = 0; t < n; ++t) {
    Observation& o = u.obs[t];
    o.lidar.assign(lt.data() + t * R, lt.data() + (t + 1) * R);
    o.det.assign(dv.begin() + t * D, dv.begin() + (t + 1) * D);
    for (int k = 0; k < kNumLabels; ++k) o.goal[static_cast<size_t>(k)] = gt[t * kNumLabels + static_cast<uint32_t>(k)];
    o.prev_action = {pt[2 * t], pt[2 * t + 1]};
    o.collision = cv[t];
  }
  for (uint32_t t = 0; t < L; ++t) u.action.push_back({at[2 * t], at[2 * t + 1]});
  u.reward.assign(rt.data(), rt.data() + L);
  u.done = u8_from_wire(done);
  return u;
}

std::vector<WireArray> batch_arrays(const Batch<float>& b, const SampleTrace& tr) {
  std::vector<WireArray> out = {to_wire("obs/lidar", b.obs.lidar),
                                to_wire("obs/det", b.obs.det),
                                to_wire("obs/goal", b.obs.goal),
                                to_wire("obs/prev_action", b.obs.prev_action),
                                to_wire("obs/collision", b.obs.collision),
                                to_wire("action", b.action),
                                to_wire("reward", b.reward),
                                to_wire("done", b.done),
                                to_wire("mask", b.mask)};
  if (!tr.anchor.empty()) {
    const uint32_t n = static_cast<uint32_t>(tr.anchor.size());
    std::vector<int32_t> anchor, start;
    std::vector<uint8_t> episode(static_cast<size_t>(n) * 8);
    for (uint32_t i = 0; i < n; ++i) {
      if (tr.anchor[i] > INT32_MAX) throw LengthOverflowError("sample trace: anchor index exceeds i32");
      anchor.push_back(static_cast<int32_t>(tr.anchor[i]));
      start.push_back(tr.start[i]);
      std::memcpy(episode.data() + 8 * i, &tr.episode[i], 8);
    }
    out.push_back(to_wire_i32("trace/anchor", {n}, anchor));
    out.push_back(to_wire_i32("trace/start", {n}, start));
    out.push_back(to_wire_u8("trace/episode", {n, 8}, episode));
  }
  return out;
}

MsgSampleResponse batch_from_arrays(uint32_t batch, uint32_t steps, const std::vector<WireArray>& arrays) {
  MsgSampleResponse m;
  Batch<float>& b = m.batch;
  b.batch = static_cast<int>(batch);
  b.steps = static_cast<int>(steps);
  b.obs.lidar = tensor_from_wire(find(arrays, "obs/lidar"));
  b.obs.det = tensor_from_wire(find(arrays, "obs/det"));
  b.obs.goal = tensor_from_wire(find(arrays, "obs/goal"));
  b.obs.prev_action = tensor_from_wire(find(arrays, "obs/prev_action"));
  b.obs.collision = tensor_from_wire(find(arrays, "obs/collision"));
  b.obs.rows = b.obs.lidar.ndim() > 0 ? b.obs.lidar.dim(0) : 0;
  b.action = tensor_from_wire(find(arrays, "action"));
  b.reward = tensor_from_wire(find(arrays, "reward"));
  b.done = tensor_from_wire(find(arrays, "done"));
  b.mask = tensor_from_wire(find(arrays, "mask"));
  try {
    b.validate(2);
  } catch (const Error& e) {
    throw ProtocolError(std::string("sample response: ") + e.what());
  }
  for (const auto& a : arrays) {
    if (a.name == "trace/anchor") {
      for (int32_t v : i32_from_wire(a)) m.trace.anchor.push_back(v);
    } else if (a.name == "trace/start") {
      m.trace.start = i32_from_wire(a);
    } else if (a.name == "trace/episode") {
      const auto bytes = u8_from_wire(a);
      for (size_t i = 0; i + 8 <= bytes.size(); i += 8) {
        uint64_t e;
        std::memcpy(&e, bytes.data() + i, 8);
        m.trace.episode.push_back(e);
      }
    }
  }
  return m;
}

template <class... F>
struct Overloaded : F... {
  using F::operator()...;
};

}  // namespace

MsgType message_type(const Message& m) {
  static constexpr MsgType kTypes[] = {MsgType::AddUnroll,       MsgType::SampleRequest, MsgType::SampleResponse,
                                       MsgType::FetchWeights,    MsgType::WeightsResponse, MsgType::Stats,
                                       MsgType::StatsResponse,   MsgType::Ack,           MsgType::Error};
  return kTypes[m.index()];
}

std::string encode_payload(const Message& m) {
  ByteWriter w;
  std::visit(Overloaded{
                 [&](const MsgAddUnroll& x) {
                   w.put<uint64_t>(x.unroll.episode_id);
                   w.put<uint64_t>(x.unroll.policy_version);
                   put_arrays(w, unroll_arrays(x.unroll));
                 },
                 [&](const MsgSampleRequest& x) {
                   w.put<uint32_t>(x.batch_size);
                   w.put<uint64_t>(x.seed);
                 },
                 [&](const MsgSampleResponse& x) {
                   w.put<uint32_t>(static_cast<uint32_t>(x.batch.batch));
                   w.put<uint32_t>(static_cast<uint32_t>(x.batch.steps));
                   put_arrays(w, batch_arrays(x.batch, x.trace));
                 },
                 [&](const MsgFetchWeights& x) { w.put<uint64_t>(x.min_version); },
                 [&](const MsgWeightsResponse& x) {
                   w.put<uint64_t>(x.version);
                   w.put<uint8_t>(x.modified ? 1 : 0);
                   std::vector<WireArray> arrays;
                   for (const auto& e : x.params) arrays.push_back(to_wire(e.name, e.value));
                   put_arrays(w, arrays);
                 },
                 [&](const MsgStats&) {},
                 [&](const MsgStatsResponse& x) {
                   const BufferStats& s = x.stats;
                   for (uint64_t v : {s.unrolls_added, s.transitions_added, s.unrolls_stored, s.transitions_stored,
                                      s.unrolls_evicted, s.batches_sampled, x.weights_version}) {
                     w.put<uint64_t>(v);
                   }
                   w.put<uint64_t>(std::bit_cast<uint64_t>(s.recent_return));
                 },
                 [&](const MsgAck&) {},
                 [&](const MsgError& x) { w.put_bytes(x.reason.data(), x.reason.size()); },
             },
             m);
  return w.take();
}

Message decode_payload(MsgType type, std::string_view payload) {
  ByteReader r(payload);
  Message out;
  switch (type) {
    case MsgType::AddUnroll: {
      MsgAddUnroll m;
      const uint64_t id = r.get<uint64_t>();
      const uint64_t ver = r.get<uint64_t>();
      m.unroll = unroll_from_arrays(get_arrays(r));
      m.unroll.episode_id = id;
      m.unroll.policy_version = ver;
      out = std::move(m);
      break;
    }
    case MsgType::SampleRequest: {
      MsgSampleRequest m;
      m.batch_size = r.get<uint32_t>();
      m.seed = r.get<uint64_t>();
      out = m;
      break;
    }
    case MsgType::SampleResponse: {
      const uint32_t batch = r.get<uint32_t>();
      const uint32_t steps = r.get<uint32_t>();
      out = batch_from_arrays(batch, steps, get_arrays(r));
      break;
    }
    case MsgType::FetchWeights:
      out = MsgFetchWeights{r.get<uint64_t>()};
      break;
    case MsgType::WeightsResponse: {
      MsgWeightsResponse m;
      m.version = r.get<uint64_t>();
      m.modified = r.get<uint8_t>() != 0;
      for (auto& a : get_arrays(r)) m.params.add(a.name, tensor_from_wire(a));
      out = std::move(m);
      break;
    }
    case MsgType::Stats:
      out = MsgStats{};
      break;
    case MsgType::StatsResponse: {
      MsgStatsResponse m;
      BufferStats& s = m.stats;
      for (uint64_t* f : {&s.unrolls_added, &s.transitions_added, &s.unrolls_stored, &s.transitions_stored,
                          &s.unrolls_evicted, &s.batches_sampled, &m.weights_version}) {
        *f = r.get<uint64_t>();
      }
      s.recent_return = std::bit_cast<double>(r.get<uint64_t>());
      out = m;
      break;
    }
    case MsgType::Ack:
      out = MsgAck{};
      break;
    case MsgType::Error:
      out = MsgError{std::string(r.get_bytes(r.remaining()))};
      break;
    default:
      throw UnknownTypeError("unknown message type 0x" + std::to_string(static_cast<int>(type)));
  }
  if (!r.done()) throw ProtocolError("payload has " + std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

namespace {

bool known_type(uint8_t t) {
  return (t >= 0x01 && t <= 0x07) || t == 0x10 || t == 0x11;
}

char hex_digit(int v) { return "0123456789ABCDEF"[v & 15]; }

/// Validates the 5-byte header; returns the payload length.
uint32_t check_header(std::string_view in) {
  ByteReader r(in);
  const uint32_t len = r.get<uint32_t>();
  const uint8_t type = r.get<uint8_t>();
  if (!known_type(type)) {
    throw UnknownTypeError(std::string("unknown message type 0x") + hex_digit(type >> 4) + hex_digit(type));
  }
  if (len > kMaxPayload) {
    throw LengthOverflowError("payload length " + std::to_string(len) + " exceeds limit " + std::to_string(kMaxPayload));
  }
  return len;
}

}  // namespace

std::string encode_message(const Message& m) {
  std::string payload = encode_payload(m);
  if (payload.size() > kMaxPayload) throw LengthOverflowError("payload of " + std::to_string(payload.size()) + " bytes");
  ByteWriter w;
  w.put<uint32_t>(static_cast<uint32_t>(payload.size()));
  w.put<uint8_t>(static_cast<uint8_t>(message_type(m)));
  w.put_bytes(payload.data(), payload.size());
  return w.take();
}

Message decode_message(std::string_view frame) {
  const uint32_t len = check_header(frame);
  if (frame.size() - 5 < len) {
    throw TruncatedFrameError("truncated frame: payload " + std::to_string(len) + " bytes, have " +
                              std::to_string(frame.size() - 5));
  }
  if (frame.size() - 5 > len) throw ProtocolError("frame has trailing bytes");
  return decode_payload(static_cast<MsgType>(static_cast<uint8_t>(frame[4])), frame.substr(5));
}

bool FrameReader::next(Message* out) {
  if (buf_.size() < 5) return false;
  const uint32_t len = check_header(buf_);
  if (buf_.size() - 5 < len) return false;
  *out = decode_payload(static_cast<MsgType>(static_cast<uint8_t>(buf_[4])), std::string_view(buf_).substr(5, len));
  buf_.erase(0, 5 + static_cast<size_t>(len));
  return true;
}

// ---------------------------------------------------------------------------
// Structural equality (bitwise on floats)

namespace {

template <class T>
bool bits_equal(const T* a, const T* b, size_t n) {
  return n == 0 || std::memcmp(a, b, n * sizeof(T)) == 0;
}

bool tensor_eq(const ad::Tensor<float>& a, const ad::Tensor<float>& b) {
  return a.shape() == b.shape() && bits_equal(a.data(), b.data(), a.size());
}

bool obs_eq(const Observation& a, const Observation& b) {
  return a.lidar.size() == b.lidar.size() && bits_equal(a.lidar.data(), b.lidar.data(), a.lidar.size()) &&
         a.det == b.det && bits_equal(a.goal.data(), b.goal.data(), a.goal.size()) &&
         bits_equal(a.prev_action.data(), b.prev_action.data(), 2) && a.collision == b.collision;
}

bool unroll_eq(const Unroll& a, const Unroll& b) {
  if (a.episode_id != b.episode_id || a.policy_version != b.policy_version || a.world != b.world ||
      a.goal != b.goal || a.obs.size() != b.obs.size() || a.action.size() != b.action.size() ||
      a.reward.size() != b.reward.size() || a.done != b.done) {
    return false;
  }
  for (size_t i = 0; i < a.obs.size(); ++i) {
    if (!obs_eq(a.obs[i], b.obs[i])) return false;
  }
  return bits_equal(a.action.data(), b.action.data(), a.action.size()) &&
         bits_equal(a.reward.data(), b.reward.data(), a.reward.size());
}

bool batch_eq(const Batch<float>& a, const Batch<float>& b) {
  return a.batch == b.batch && a.steps == b.steps && a.obs.rows == b.obs.rows && tensor_eq(a.obs.lidar, b.obs.lidar) &&
         tensor_eq(a.obs.det, b.obs.det) && tensor_eq(a.obs.goal, b.obs.goal) &&
         tensor_eq(a.obs.prev_action, b.obs.prev_action) && tensor_eq(a.obs.collision, b.obs.collision) &&
         tensor_eq(a.action, b.action) && tensor_eq(a.reward, b.reward) && tensor_eq(a.done, b.done) &&
         tensor_eq(a.mask, b.mask);
}

bool stats_eq(const BufferStats& a, const BufferStats& b) {
  return a.unrolls_added == b.unrolls_added && a.transitions_added == b.transitions_added &&
         a.unrolls_stored == b.unrolls_stored && a.transitions_stored == b.transitions_stored &&
         a.unrolls_evicted == b.unrolls_evicted && a.batches_sampled == b.batches_sampled &&
         std::bit_cast<uint64_t>(a.recent_return) == std::bit_cast<uint64_t>(b.recent_return);
}

}  // namespace

bool messages_equal(const Message& a, const Message& b) {
  if (a.index() != b.index()) return false;
  return std::visit(
      Overloaded{
          [&](const MsgAddUnroll& x) { return unroll_eq(x.unroll, std::get<MsgAddUnroll>(b).unroll); },
          [&](const MsgSampleRequest& x) {
            const auto& y = std::get<MsgSampleRequest>(b);
            return x.batch_size == y.batch_size && x.seed == y.seed;
          },
          [&](const MsgSampleResponse& x) {
            const auto& y = std::get<MsgSampleResponse>(b);
            return batch_eq(x.batch, y.batch) && x.trace.anchor == y.trace.anchor &&
                   x.trace.start == y.trace.start && x.trace.episode == y.trace.episode;
          },
          [&](const MsgFetchWeights& x) { return x.min_version == std::get<MsgFetchWeights>(b).min_version; },
          [&](const MsgWeightsResponse& x) {
            const auto& y = std::get<MsgWeightsResponse>(b);
            if (x.version != y.version || x.modified != y.modified || !x.params.same_layout(y.params)) return false;
            for (size_t i = 0; i < x.params.size(); ++i) {
              if (!tensor_eq(x.params[i].value, y.params[i].value)) return false;
            }
            return true;
          },
          [&](const MsgStats&) { return true; },
          [&](const MsgStatsResponse& x) {
            const auto& y = std::get<MsgStatsResponse>(b);
            return stats_eq(x.stats, y.stats) && x.weights_version == y.weights_version;
          },
          [&](const MsgAck&) { return true; },
          [&](const MsgError& x) { return x.reason == std::get<MsgError>(b).reason; },
      },
      a);
}

}  // namespace objnav
