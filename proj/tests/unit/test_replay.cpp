#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <boost/math/distributions/chi_squared.hpp>
#include <cstring>
#include <map>
#include <random>
#include <thread>

#include "objnav/error.hpp"
#include "objnav/net.hpp"
#include "objnav/replay.hpp"
#include "oracles.hpp"

using namespace objnav;
using namespace oracle;

namespace {

BufferConfig small_cfg() {
  BufferConfig c;
  c.capacity = 1000;
  c.min_fill = 20;
  c.crop_len = 20;
  c.lidar_rays = kRays;
  c.det_bins = kBins;
  return c;
}

}  // namespace

TEST_CASE("add and whole-unroll eviction") {
  BufferConfig c = small_cfg();
  ReplayBuffer buf(c);
  buf.add(make_unroll(100, 1, false));
  CHECK(buf.stats().transitions_stored == 100);

  c.capacity = 150;
  ReplayBuffer small(c);
  small.add(make_unroll(100, 1, false));
  small.add(make_unroll(100, 2, true));
  BufferStats s = small.stats();
  CHECK(s.transitions_stored == 100);
  CHECK(s.unrolls_stored == 1);
  CHECK(s.unrolls_evicted == 1);
  CHECK(s.transitions_added == 200);
  std::mt19937_64 rng(1);
  SampleTrace tr;
  small.sample(rng, 8, &tr);
  for (uint64_t e : tr.episode) CHECK(e == 2);
}

TEST_CASE("invalid unrolls are rejected") {
  ReplayBuffer buf(small_cfg());
  Unroll mid = make_unroll(10, 1, false);
  mid.done[4] = 1;
  CHECK_THROWS_AS(buf.add(mid), InvariantError);
  Unroll empty = make_unroll(1, 2, false);
  empty.action.clear();
  empty.reward.clear();
  empty.done.clear();
  empty.obs.resize(1);
  CHECK_THROWS_AS(buf.add(empty), InvariantError);
  CHECK_THROWS_AS(buf.add(make_unroll(101, 3, false)), InvariantError);
  Unroll wide = make_unroll(5, 4, false);
  wide.action[2][0] = 1.5f;
  CHECK_THROWS_AS(buf.add(wide), InvariantError);
  Unroll short_obs = make_unroll(5, 5, false);
  short_obs.obs.pop_back();
  CHECK_THROWS_AS(buf.add(short_obs), InvariantError);
  CHECK(buf.stats().unrolls_added == 0);
}

TEST_CASE("config invariants") {
  BufferConfig c = small_cfg();
  c.min_fill = 10;
  CHECK_THROWS_AS(ReplayBuffer{c}, InvariantError);
  c = small_cfg();
  c.capacity = 10;
  CHECK_THROWS_AS(ReplayBuffer{c}, InvariantError);
}

TEST_CASE("sampling before min_fill fails") {
  ReplayBuffer buf(small_cfg());
  buf.add(make_unroll(10, 1, false));
  std::mt19937_64 rng(2);
  CHECK_THROWS_AS(buf.sample(rng, 4), UnderfilledError);
}

TEST_CASE("full-length crop") {
  ReplayBuffer buf(small_cfg());
  buf.add(make_unroll(20, 1, true));
  std::mt19937_64 rng(3);
  Batch<float> b = buf.sample(rng, 3);
  CHECK(b.batch == 3);
  CHECK(b.steps == 20);
  CHECK_NOTHROW(b.validate(2));
  for (float m : b.mask.values()) CHECK(m == 1.f);
  for (int t = 0; t <= 20; ++t) {
    for (int i = 0; i < 3; ++i) {
      CHECK(b.obs.lidar[static_cast<size_t>((t * 3 + i) * kRays)] == doctest::Approx(t / 100.0 / 5.0));
    }
  }
  CHECK(b.done[static_cast<size_t>(19 * 3)] == 1.f);
  CHECK(b.reward[static_cast<size_t>(7 * 3 + 1)] == 7.f);
}

TEST_CASE("short unroll is padded with mask zeros") {
  BufferConfig c = small_cfg();
  c.min_fill = 20;
  ReplayBuffer buf(c);
  for (int i = 0; i < 4; ++i) buf.add(make_unroll(5, static_cast<uint64_t>(i), true));
  std::mt19937_64 rng(4);
  Batch<float> b = buf.sample(rng, 2);
  CHECK_NOTHROW(b.validate(2));
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 20; ++t) {
      CHECK(b.mask[static_cast<size_t>(t * 2 + s)] == (t < 5 ? 1.f : 0.f));
      if (t >= 5) {
        CHECK(b.reward[static_cast<size_t>(t * 2 + s)] == 0.f);
        CHECK(b.action[static_cast<size_t>(2 * (t * 2 + s))] == 0.f);
      }
    }
  }
}

TEST_CASE("crop starts are uniform") {
  ReplayBuffer buf(small_cfg());
  buf.add(make_unroll(100, 1, false));
  std::mt19937_64 rng(5);
  std::vector<double> counts(81, 0);
  SampleTrace tr;
  for (int i = 0; i < 10000 / 50; ++i) {
    buf.sample(rng, 50, &tr);
    for (int s : tr.start) counts[static_cast<size_t>(s)] += 1;
  }
  const double p = chi_square_p(counts, std::vector<double>(81, 10000.0 / 81));
  INFO("p=", p);
  CHECK(p > 0.01);
}

TEST_CASE("anchors are uniform over transitions across unequal unrolls") {
  ReplayBuffer buf(small_cfg());
  buf.add(make_unroll(100, 1, false));
  buf.add(make_unroll(40, 2, false));
  buf.add(make_unroll(5, 3, true));
  std::mt19937_64 rng(6);
  std::vector<double> counts(145, 0);
  std::map<uint64_t, double> per_unroll;
  SampleTrace tr;
  for (int i = 0; i < 100; ++i) {
    buf.sample(rng, 100, &tr);
    for (size_t k = 0; k < tr.anchor.size(); ++k) {
      counts[static_cast<size_t>(tr.anchor[k])] += 1;
      per_unroll[tr.episode[k]] += 1;
    }
  }
  CHECK(chi_square_p(counts, std::vector<double>(145, 10000.0 / 145)) > 0.01);
  CHECK(chi_square_p({per_unroll[1], per_unroll[2], per_unroll[3]},
                     {10000.0 * 100 / 145, 10000.0 * 40 / 145, 10000.0 * 5 / 145}) > 0.01);
}

TEST_CASE("sampling is reproducible from the rng") {
  ReplayBuffer buf(small_cfg());
  std::mt19937_64 gen(7);
  for (int i = 0; i < 5; ++i) buf.add(make_unroll(30 + i, static_cast<uint64_t>(i), false, &gen));
  std::mt19937_64 a(9), b(9);
  Batch<float> x = buf.sample(a, 4), y = buf.sample(b, 4);
  CHECK(messages_equal(MsgSampleResponse{x, {}}, MsgSampleResponse{y, {}}));
}

TEST_CASE("codec examples") {
  std::mt19937_64 rng(8);
  Message m = MsgAddUnroll{make_unroll(3, 42, true, &rng)};
  const std::string frame = encode_message(m);
  CHECK(static_cast<uint8_t>(frame[4]) == 0x01);
  uint32_t len;
  std::memcpy(&len, frame.data(), 4);
  CHECK(len == frame.size() - 5);
  CHECK(messages_equal(decode_message(frame), m));

  std::string bad = frame;
  bad[4] = static_cast<char>(0xFF);
  CHECK_THROWS_AS(decode_message(bad), UnknownTypeError);
  CHECK_THROWS_AS(decode_message(frame.substr(0, frame.size() - 1)), TruncatedFrameError);
  CHECK_THROWS_AS(decode_message(frame.substr(0, 3)), TruncatedFrameError);
  std::string huge = frame.substr(0, 5);
  const uint32_t big = kMaxPayload + 1;
  std::memcpy(huge.data(), &big, 4);
  CHECK_THROWS_AS(decode_message(huge), LengthOverflowError);
  CHECK_THROWS_AS(decode_message(frame + "x"), ProtocolError);

  // Corrupt the dtype byte of the first array (after u64 id, u64 version, u16 count, u16 len + "world").
  std::string dtype = frame;
  dtype[5 + 8 + 8 + 2 + 2 + 5] = 9;
  CHECK_THROWS_AS(decode_message(dtype), ProtocolError);
}

TEST_CASE("fuzzed messages round trip bit-exact") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Message m = random_message(rng);
    const std::string bytes = encode_message(m);
    Message back = decode_message(bytes);
    REQUIRE(messages_equal(back, m));
    CHECK(encode_message(back) == bytes);
  }
}

TEST_CASE("frame reader handles split and coalesced input") {
  std::mt19937_64 rng(10);
  std::string stream;
  std::vector<Message> sent;
  for (int i = 0; i < 20; ++i) {
    sent.push_back(MsgAddUnroll{make_unroll(1 + i, static_cast<uint64_t>(i), false, &rng)});
    stream += encode_message(sent.back());
  }
  FrameReader r;
  std::vector<Message> got;
  size_t pos = 0;
  while (pos < stream.size()) {
    const size_t n = std::min<size_t>(1 + rng() % 700, stream.size() - pos);
    r.feed(std::string_view(stream).substr(pos, n));
    pos += n;
    Message m;
    while (r.next(&m)) got.push_back(m);
  }
  REQUIRE(got.size() == sent.size());
  for (size_t i = 0; i < got.size(); ++i) CHECK(messages_equal(got[i], sent[i]));
  CHECK(r.buffered() == 0);
}

TEST_CASE("service: concurrent producers, underfill error, malformed frames") {
  BufferConfig c = small_cfg();
  c.capacity = 100000;
  c.min_fill = 100;
  ReplayBuffer buf(c);
  FrameServer server(replay_handler(buf, 1));
  server.start(Endpoint{"127.0.0.1", 0});
  const Endpoint ep{"127.0.0.1", server.port()};

  FrameClient consumer;
  consumer.connect(ep);
  Message early = consumer.request(MsgSampleRequest{4, 0});
  REQUIRE(std::holds_alternative<MsgError>(early));
  // Still open after an Error reply.
  CHECK(std::holds_alternative<MsgStatsResponse>(consumer.request(MsgStats{})));

  std::atomic<uint64_t> sent{0};
  std::vector<std::thread> producers;
  for (int p = 0; p < 4; ++p) {
    producers.emplace_back([&, p] {
      FrameClient cl;
      cl.connect(ep);
      std::mt19937_64 rng(static_cast<uint64_t>(p));
      uint64_t mine = 0;
      for (int i = 0; mine < 2500; ++i) {
        const int L = 1 + static_cast<int>(rng() % 100);
        Message ack = cl.request(MsgAddUnroll{make_unroll(L, static_cast<uint64_t>(p * 100000 + i), rng() % 2, &rng)});
        REQUIRE(std::holds_alternative<MsgAck>(ack));
        mine += static_cast<uint64_t>(L);
      }
      sent += mine;
    });
  }

  // A rogue client sends garbage mid-run.
  FrameClient rogue;
  rogue.connect(ep);
  rogue.send_raw(std::string("\x03\x00\x00\x00\xEE\x01\x02\x03", 8));
  Message reply = rogue.receive();
  CHECK(std::holds_alternative<MsgError>(reply));
  CHECK_THROWS_AS(rogue.receive(), TransportError);

  for (auto& t : producers) t.join();
  auto stats = std::get<MsgStatsResponse>(consumer.request(MsgStats{}));
  CHECK(stats.stats.transitions_added == sent.load());
  CHECK(stats.stats.transitions_stored == sent.load());
  Message batch = consumer.request(MsgSampleRequest{8, 123});
  REQUIRE(std::holds_alternative<MsgSampleResponse>(batch));
  CHECK(std::get<MsgSampleResponse>(batch).batch.batch == 8);
  CHECK(server.dropped_connections() >= 1);
  server.stop();
}

TEST_CASE("endpoint parsing") {
  Endpoint e = parse_endpoint("localhost:7000");
  CHECK(e.host == "localhost");
  CHECK(e.port == 7000);
  CHECK_THROWS_AS(parse_endpoint("nope"), ParseError);
  CHECK_THROWS_AS(parse_endpoint("h:99999"), ParseError);
  FrameClient cl;
  CHECK_THROWS_AS(cl.connect(Endpoint{"127.0.0.1", 1}), TransportError);
}
