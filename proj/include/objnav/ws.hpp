#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "objnav/net.hpp"

namespace objnav {

/// Sec-WebSocket-Accept value for a client key.
std::string websocket_accept_key(std::string_view client_key);

namespace ws {
inline constexpr uint8_t kText = 0x1;
inline constexpr uint8_t kClose = 0x8;
inline constexpr uint8_t kPing = 0x9;
inline constexpr uint8_t kPong = 0xA;
inline constexpr size_t kMaxPayload = 1 << 20;
}  // namespace ws

/// One final frame; clients must pass a mask.
std::string encode_ws_frame(uint8_t opcode, std::string_view payload, std::optional<uint32_t> mask = std::nullopt);

struct WsReply {
  std::vector<std::string> messages;
  bool close = false;
};

/// Handles text messages for one connection.
using WsHandler = std::function<WsReply(const std::string&)>;

/// HTTP/1.1 server: static files under `root` and a WebSocket endpoint at `ws_path`.
/// One thread per connection.
class WebServer {
 public:
  using SessionFactory = std::function<WsHandler()>;

  WebServer(std::string root, std::string ws_path, SessionFactory factory);
  ~WebServer();
  WebServer(const WebServer&) = delete;
  WebServer& operator=(const WebServer&) = delete;

  void start(const Endpoint& ep);
  void stop();
  uint16_t port() const { return port_; }

 private:
  void accept_loop();
  void serve(int fd);
  void serve_static(int fd, const std::string& target);
  void serve_websocket(int fd, std::string pending);

  std::string root_;
  std::string ws_path_;
  SessionFactory factory_;
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<std::thread> workers_;
  std::list<int> conns_;
};

/// Blocking WebSocket client (text messages only).
class WsClient {
 public:
  WsClient() = default;
  ~WsClient();
  WsClient(const WsClient&) = delete;
  WsClient& operator=(const WsClient&) = delete;

  /// Throws TransportError on connection or handshake failure.
  void connect(const Endpoint& ep, const std::string& path, int timeout_ms = 5000);
  void send_text(std::string_view text);
  /// Sends raw bytes (tests use it for malformed frames).
  void send_raw(std::string_view bytes);
  /// Next text message; nullopt once the server closes.
  std::optional<std::string> receive();
  void close();

 private:
  bool fill();

  int fd_ = -1;
  std::string buf_;
  uint32_t mask_state_ = 0x9e3779b9u;
};

}  // namespace objnav
