#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <random>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "objnav/params.hpp"
#include "objnav/sac.hpp"
#include "objnav/sim.hpp"

namespace objnav {

inline constexpr int kMaxUnrollLen = 100;

/// One episode segment. `obs` holds L+1 observations: obs[t] precedes action[t], obs[L] bootstraps.
struct Unroll {
  uint64_t episode_id = 0;
  uint64_t policy_version = 0;
  std::string world;
  Label goal = Label::bed;
  std::vector<Observation> obs;
  std::vector<std::array<float, 2>> action;
  std::vector<float> reward;
  std::vector<uint8_t> done;

  int length() const { return static_cast<int>(action.size()); }
  /// Throws InvariantError on bad lengths, misplaced done flags or out-of-box actions.
  void validate(int lidar_rays = -1, int det_bins = -1) const;
};

struct BufferConfig {
  int64_t capacity = 500000;
  int crop_len = 20;
  int64_t min_fill = 5000;
  /// Lidar normalization applied when batches are assembled.
  double lidar_max_range = 5.0;
  int lidar_rays = 222;
  int det_bins = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const BufferConfig& cfg);
void from_json(const nlohmann::json& j, BufferConfig& cfg);

struct BufferStats {
  uint64_t unrolls_added = 0;
  uint64_t transitions_added = 0;
  uint64_t unrolls_stored = 0;
  uint64_t transitions_stored = 0;
  uint64_t unrolls_evicted = 0;
  uint64_t batches_sampled = 0;
  /// Mean undiscounted return of the most recent unrolls (up to kReturnWindow).
  double recent_return = 0;
};

inline constexpr size_t kReturnWindow = 100;

/// Where each batch element came from.
struct SampleTrace {
  std::vector<int64_t> anchor;  // global transition index (stable across eviction)
  std::vector<uint64_t> episode;
  std::vector<int> start;  // crop start inside the unroll
};

/// Stores unrolls FIFO and samples anchor-then-crop batches. Safe for concurrent add and sample.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(BufferConfig cfg);

  void add(Unroll u);
  /// Throws UnderfilledError below min_fill.
  Batch<float> sample(std::mt19937_64& rng, int batch_size, SampleTrace* trace = nullptr) const;

  BufferStats stats() const;
  const BufferConfig& config() const { return cfg_; }

 private:
  struct Entry {
    int64_t first;  // global index of transition 0
    Unroll u;
  };
  BufferConfig cfg_;
  mutable std::shared_mutex mu_;
  std::deque<Entry> entries_;
  int64_t next_index_ = 0;
  int64_t stored_ = 0;
  BufferStats stats_;
  std::deque<double> returns_;
  double returns_sum_ = 0;
  mutable std::atomic<uint64_t> sampled_{0};
};

/// Assembles crops of stored unrolls into a training batch; exposed for tests.
Batch<float> assemble_batch(const std::vector<const Unroll*>& unrolls, const std::vector<int>& starts, int crop_len,
                            double lidar_max_range);

// ---------------------------------------------------------------------------
// Wire protocol

enum class MsgType : uint8_t {
  AddUnroll = 0x01,
  SampleRequest = 0x02,
  SampleResponse = 0x03,
  FetchWeights = 0x04,
  WeightsResponse = 0x05,
  Stats = 0x06,
  StatsResponse = 0x07,
  Ack = 0x10,
  Error = 0x11,
};

enum class DType : uint8_t { f32 = 0, i32 = 1, u8 = 2 };

/// Named n-d array as carried on the wire; `data` holds raw little-endian bytes.
struct WireArray {
  std::string name;
  DType dtype = DType::f32;
  std::vector<uint32_t> dims;
  std::string data;

  size_t count() const;
  bool operator==(const WireArray&) const = default;
};

WireArray to_wire(std::string name, const ad::Tensor<float>& t);
WireArray to_wire_i32(std::string name, std::vector<uint32_t> dims, const std::vector<int32_t>& v);
WireArray to_wire_u8(std::string name, std::vector<uint32_t> dims, const std::vector<uint8_t>& v);
ad::Tensor<float> tensor_from_wire(const WireArray& a);
std::vector<int32_t> i32_from_wire(const WireArray& a);
std::vector<uint8_t> u8_from_wire(const WireArray& a);

struct MsgAddUnroll {
  Unroll unroll;
};
struct MsgSampleRequest {
  uint32_t batch_size = 0;
  uint64_t seed = 0;  // 0: server-side stream
};
struct MsgSampleResponse {
  Batch<float> batch;
  SampleTrace trace;
};
struct MsgFetchWeights {
  uint64_t min_version = 0;
};
struct MsgWeightsResponse {
  uint64_t version = 0;
  bool modified = false;
  ParamSet<float> params;
};
struct MsgStats {};
struct MsgStatsResponse {
  BufferStats stats;
  uint64_t weights_version = 0;
};
struct MsgAck {};
struct MsgError {
  std::string reason;
};

using Message = std::variant<MsgAddUnroll, MsgSampleRequest, MsgSampleResponse, MsgFetchWeights,
                             MsgWeightsResponse, MsgStats, MsgStatsResponse, MsgAck, MsgError>;

inline constexpr uint32_t kMaxPayload = 256u << 20;

MsgType message_type(const Message& m);
std::string encode_payload(const Message& m);
Message decode_payload(MsgType type, std::string_view payload);

/// Full frame: u32 payload length, u8 type, payload.
std::string encode_message(const Message& m);
/// Decodes exactly one frame. Throws TruncatedFrameError, UnknownTypeError, LengthOverflowError or
/// ProtocolError (trailing bytes, bad dtype).
Message decode_message(std::string_view frame);

/// Incremental decoder for a byte stream. Returns false until a full frame is buffered.
class FrameReader {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }
  bool next(Message* out);
  size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
};

bool messages_equal(const Message& a, const Message& b);

}  // namespace objnav
