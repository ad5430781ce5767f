#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include "objnav/replay.hpp"
#include "objnav/weights.hpp"

namespace objnav {

struct Endpoint {
  std::string host = "127.0.0.1";
  uint16_t port = 0;
  std::string str() const { return host + ":" + std::to_string(port); }
};

/// Parses "host:port"; throws ParseError.
Endpoint parse_endpoint(const std::string& s);

/// Blocking TCP server: one thread per connection, one request frame answered by one response frame.
/// Handler exceptions become Error frames; malformed frames close only the offending connection.
class FrameServer {
 public:
  using Handler = std::function<Message(const Message&)>;

  explicit FrameServer(Handler handler);
  ~FrameServer();
  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;

  /// Binds and starts accepting; port 0 picks an ephemeral port.
  void start(const Endpoint& ep);
  void stop();
  uint16_t port() const { return port_; }
  uint64_t dropped_connections() const { return dropped_.load(); }

 private:
  void accept_loop();
  void serve(int fd);

  Handler handler_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<uint64_t> dropped_{0};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<std::thread> workers_;
  std::list<int> conns_;
};

/// Synchronous client for one connection.
class FrameClient {
 public:
  FrameClient() = default;
  ~FrameClient();
  FrameClient(const FrameClient&) = delete;
  FrameClient& operator=(const FrameClient&) = delete;

  /// Throws TransportError.
  void connect(const Endpoint& ep, int timeout_ms = 5000);
  /// Retries `attempts` times with doubling backoff starting at `backoff_ms`.
  void connect_retry(const Endpoint& ep, int attempts, int backoff_ms);
  bool connected() const { return fd_ >= 0; }
  void close();

  void send(const Message& m);
  void send_raw(std::string_view bytes);
  Message receive();
  Message request(const Message& m);

 private:
  int fd_ = -1;
  FrameReader reader_;
};

/// Writes all bytes; throws TransportError.
void write_all(int fd, std::string_view bytes);

/// Request handler for a replay buffer: AddUnroll, SampleRequest, Stats. With a weight store it also
/// answers FetchWeights and accepts WeightsResponse frames as publishes.
FrameServer::Handler replay_handler(ReplayBuffer& buffer, uint64_t seed, WeightStore* weights = nullptr);

}  // namespace objnav
