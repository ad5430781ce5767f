#include "objnav/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>

#include "objnav/error.hpp"

namespace objnav {

Endpoint parse_endpoint(const std::string& s) {
  const size_t colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
    throw ParseError("endpoint '" + s + "': expected host:port");
  }
  Endpoint ep;
  ep.host = s.substr(0, colon);
  int port = 0;
  try {
    size_t used = 0;
    port = std::stoi(s.substr(colon + 1), &used);
    if (used != s.size() - colon - 1) throw std::invalid_argument("tail");
  } catch (const std::exception&) {
    throw ParseError("endpoint '" + s + "': bad port");
  }
  if (port < 0 || port > 65535) throw ParseError("endpoint '" + s + "': port out of range");
  ep.port = static_cast<uint16_t>(port);
  return ep;
}

namespace {

std::string sys_error(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
    throw TransportError("cannot resolve host '" + ep.host + "'");
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

void write_all(int fd, std::string_view bytes) {
  size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(sys_error("send"));
    }
    off += static_cast<size_t>(n);
  }
}

// ---------------------------------------------------------------------------
// Server

FrameServer::FrameServer(Handler handler) : handler_(std::move(handler)) {}

FrameServer::~FrameServer() { stop(); }

void FrameServer::start(const Endpoint& ep) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError(sys_error("socket"));
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(ep);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string msg = sys_error(("bind " + ep.str()).c_str());
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(msg);
  }
  if (::listen(listen_fd_, 64) != 0) throw TransportError(sys_error("listen"));
  socklen_t len = sizeof(addr);
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void FrameServer::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  listen_fd_ = -1;
  std::list<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : conns_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void FrameServer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int r = ::poll(&p, 1, 100);
    if (r <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    set_nodelay(fd);
    std::lock_guard lock(mu_);
    if (!running_) {
      ::close(fd);
      break;
    }
    conns_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void FrameServer::serve(int fd) {
  FrameReader reader;
  char buf[1 << 16];
  bool open = true;
  while (open && running_) {
    const ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
    if (n == 0) break;
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    reader.feed(std::string_view(buf, static_cast<size_t>(n)));
    try {
      Message req;
      while (reader.next(&req)) {
        Message resp;
        try {
          resp = handler_(req);
        } catch (const std::exception& e) {
          resp = MsgError{e.what()};
        }
        write_all(fd, encode_message(resp));
      }
    } catch (const ProtocolError& e) {
      // Malformed input: report, then drop this connection only.
      try {
        write_all(fd, encode_message(MsgError{e.what()}));
      } catch (const TransportError&) {
      }
      dropped_.fetch_add(1);
      open = false;
    } catch (const TransportError&) {
      dropped_.fetch_add(1);
      open = false;
    }
  }
  std::lock_guard lock(mu_);
  conns_.remove(fd);
  ::close(fd);
}

// ---------------------------------------------------------------------------
// Client

FrameClient::~FrameClient() { close(); }

void FrameClient::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  reader_ = FrameReader{};
}

void FrameClient::connect(const Endpoint& ep, int timeout_ms) {
  close();
  sockaddr_in addr = resolve(ep);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError(sys_error("socket"));
  timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string msg = sys_error(("connect " + ep.str()).c_str());
    ::close(fd);
    throw TransportError(msg);
  }
  set_nodelay(fd);
  fd_ = fd;
}

void FrameClient::connect_retry(const Endpoint& ep, int attempts, int backoff_ms) {
  for (int i = 0;; ++i) {
    try {
      connect(ep);
      return;
    } catch (const TransportError&) {
      if (i + 1 >= attempts) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms << std::min(i, 10)));
    }
  }
}

void FrameClient::send(const Message& m) { send_raw(encode_message(m)); }

void FrameClient::send_raw(std::string_view bytes) {
  if (fd_ < 0) throw TransportError("not connected");
  write_all(fd_, bytes);
}

Message FrameClient::receive() {
  if (fd_ < 0) throw TransportError("not connected");
  Message m;
  char buf[1 << 16];
  while (!reader_.next(&m)) {
    const ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n == 0) throw TransportError("connection closed by peer");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(sys_error("recv"));
    }
    reader_.feed(std::string_view(buf, static_cast<size_t>(n)));
  }
  return m;
}

Message FrameClient::request(const Message& m) {
  send(m);
  return receive();
}

// ---------------------------------------------------------------------------
// Replay service

FrameServer::Handler replay_handler(ReplayBuffer& buffer, uint64_t seed, WeightStore* weights) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  auto rng_mu = std::make_shared<std::mutex>();
  return [&buffer, rng, rng_mu, weights](const Message& req) -> Message {
    if (const auto* add = std::get_if<MsgAddUnroll>(&req)) {
      buffer.add(add->unroll);
      return MsgAck{};
    }
    if (const auto* s = std::get_if<MsgSampleRequest>(&req)) {
      MsgSampleResponse resp;
      if (s->seed != 0) {
        std::mt19937_64 local(s->seed);
        resp.batch = buffer.sample(local, static_cast<int>(s->batch_size), &resp.trace);
      } else {
        std::lock_guard lock(*rng_mu);
        resp.batch = buffer.sample(*rng, static_cast<int>(s->batch_size), &resp.trace);
      }
      return resp;
    }
    if (std::holds_alternative<MsgStats>(req)) return MsgStatsResponse{buffer.stats(), weights ? weights->version() : 0};
    if (weights) {
      if (const auto* f = std::get_if<MsgFetchWeights>(&req)) {
        MsgWeightsResponse resp;
        if (auto snap = weights->fetch(f->min_version)) {
          resp.version = snap->version;
          resp.modified = true;
          resp.params = *snap->params;
        } else {
          resp.version = weights->version();
        }
        return resp;
      }
      if (const auto* w = std::get_if<MsgWeightsResponse>(&req)) {
        weights->publish(w->version, w->params);
        return MsgAck{};
      }
    }
    return MsgError{"replay service: unsupported request type"};
  };
}

}  // namespace objnav
