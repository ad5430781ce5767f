#include "objnav/ws.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "objnav/error.hpp"

namespace objnav {

namespace {

constexpr size_t kMaxHeader = 16 * 1024;

std::string base64(const unsigned char* data, size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<size_t>(len));
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

struct Request {
  std::string method;
  std::string target;
  std::map<std::string, std::string> headers;  // lower-case names
};

Request parse_request(const std::string& head) {
  Request r;
  std::istringstream in(head);
  std::string line;
  std::getline(in, line);
  std::istringstream first(line);
  std::string version;
  first >> r.method >> r.target >> version;
  if (r.method.empty() || r.target.empty() || version.rfind("HTTP/1.", 0) != 0) throw ProtocolError("bad request line");
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;
    const size_t colon = line.find(':');
    if (colon == std::string::npos) throw ProtocolError("bad header line");
    r.headers[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 1));
  }
  return r;
}

bool header_has_token(const Request& r, const std::string& name, const std::string& token) {
  const auto it = r.headers.find(name);
  if (it == r.headers.end()) return false;
  std::istringstream in(lower(it->second));
  std::string part;
  while (std::getline(in, part, ',')) {
    if (trim(part) == token) return true;
  }
  return false;
}

void send_http(int fd, int status, const std::string& reason, const std::string& type, const std::string& body) {
  std::ostringstream s;
  s << "HTTP/1.1 " << status << ' ' << reason << "\r\n"
    << "Content-Type: " << type << "\r\n"
    << "Content-Length: " << body.size() << "\r\n"
    << "Connection: close\r\n\r\n"
    << body;
  write_all(fd, s.str());
}

std::string content_type(const std::string& path) {
  static const std::map<std::string, std::string> types = {
      {".html", "text/html; charset=utf-8"}, {".js", "text/javascript"},  {".css", "text/css"},
      {".json", "application/json"},         {".svg", "image/svg+xml"},   {".png", "image/png"},
      {".ts", "text/plain"},                 {".map", "application/json"}};
  const size_t dot = path.rfind('.');
  if (dot != std::string::npos) {
    const auto it = types.find(path.substr(dot));
    if (it != types.end()) return it->second;
  }
  return "application/octet-stream";
}

struct WsFrame {
  bool fin = true;
  uint8_t opcode = 0;
  std::string payload;
};

/// Pops one frame from `buf`; false if incomplete. Throws ProtocolError on violations.
bool pop_frame(std::string& buf, bool expect_mask, WsFrame* out) {
  if (buf.size() < 2) return false;
  const auto b0 = static_cast<uint8_t>(buf[0]), b1 = static_cast<uint8_t>(buf[1]);
  if (b0 & 0x70) throw ProtocolError("websocket: reserved bits set");
  const bool masked = (b1 & 0x80) != 0;
  if (masked != expect_mask) throw ProtocolError(expect_mask ? "websocket: client frame not masked" : "websocket: server frame masked");
  uint64_t len = b1 & 0x7f;
  size_t pos = 2;
  if (len == 126) {
    if (buf.size() < 4) return false;
    len = (static_cast<uint64_t>(static_cast<uint8_t>(buf[2])) << 8) | static_cast<uint8_t>(buf[3]);
    pos = 4;
  } else if (len == 127) {
    if (buf.size() < 10) return false;
    len = 0;
    for (int k = 0; k < 8; ++k) len = (len << 8) | static_cast<uint8_t>(buf[2 + static_cast<size_t>(k)]);
    pos = 10;
  }
  if (len > ws::kMaxPayload) throw ProtocolError("websocket: payload too large");
  uint8_t mask[4] = {0, 0, 0, 0};
  if (masked) {
    if (buf.size() < pos + 4) return false;
    std::memcpy(mask, buf.data() + pos, 4);
    pos += 4;
  }
  if (buf.size() < pos + len) return false;
  out->fin = (b0 & 0x80) != 0;
  out->opcode = b0 & 0x0f;
  out->payload.assign(buf, pos, static_cast<size_t>(len));
  if (masked) {
    for (size_t k = 0; k < out->payload.size(); ++k) out->payload[k] = static_cast<char>(out->payload[k] ^ mask[k % 4]);
  }
  buf.erase(0, pos + static_cast<size_t>(len));
  return true;
}

std::string close_payload(uint16_t code) {
  return std::string{static_cast<char>(code >> 8), static_cast<char>(code & 0xff)};
}

/// Reads more bytes into `buf`; false on EOF or error.
bool read_some(int fd, std::string& buf) {
  char tmp[1 << 14];
  for (;;) {
    const ssize_t n = ::recv(fd, tmp, sizeof(tmp), 0);
    if (n > 0) {
      buf.append(tmp, static_cast<size_t>(n));
      return true;
    }
    if (n < 0 && errno == EINTR) continue;
    return false;
  }
}

}  // namespace

std::string websocket_accept_key(std::string_view client_key) {
  const std::string s = std::string(client_key) + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, sizeof(digest));
}

std::string encode_ws_frame(uint8_t opcode, std::string_view payload, std::optional<uint32_t> mask) {
  std::string out;
  out.push_back(static_cast<char>(0x80 | (opcode & 0x0f)));
  const uint8_t mbit = mask ? 0x80 : 0;
  const uint64_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(mbit | n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(mbit | 126));
    out.push_back(static_cast<char>(n >> 8));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(mbit | 127));
    for (int k = 7; k >= 0; --k) out.push_back(static_cast<char>((n >> (8 * k)) & 0xff));
  }
  if (!mask) {
    out.append(payload);
    return out;
  }
  const uint8_t m[4] = {static_cast<uint8_t>(*mask >> 24), static_cast<uint8_t>(*mask >> 16), static_cast<uint8_t>(*mask >> 8),
                        static_cast<uint8_t>(*mask)};
  out.append(reinterpret_cast<const char*>(m), 4);
  for (size_t k = 0; k < payload.size(); ++k) out.push_back(static_cast<char>(payload[k] ^ m[k % 4]));
  return out;
}

// ---------------------------------------------------------------------------
// Server

WebServer::WebServer(std::string root, std::string ws_path, SessionFactory factory)
    : root_(std::move(root)), ws_path_(std::move(ws_path)), factory_(std::move(factory)) {}

WebServer::~WebServer() { stop(); }

void WebServer::start(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0 || !res) {
    throw TransportError("cannot resolve " + ep.str());
  }
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const int rc = ::bind(listen_fd_, res->ai_addr, res->ai_addrlen);
  freeaddrinfo(res);
  if (rc != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string msg = "bind " + ep.str() + ": " + std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(msg);
  }
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void WebServer::stop() {
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

void WebServer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(mu_);
    if (!running_) {
      ::close(fd);
      break;
    }
    conns_.push_back(fd);
    workers_.emplace_back([this, fd] {
      serve(fd);
      std::lock_guard l(mu_);
      conns_.remove(fd);
      ::close(fd);
    });
  }
}

void WebServer::serve(int fd) {
  try {
    std::string buf;
    size_t end;
    while ((end = buf.find("\r\n\r\n")) == std::string::npos) {
      if (buf.size() > kMaxHeader || !read_some(fd, buf)) return;
    }
    Request req;
    try {
      req = parse_request(buf.substr(0, end + 2));
    } catch (const ProtocolError& e) {
      send_http(fd, 400, "Bad Request", "text/plain", e.what());
      return;
    }
    const std::string path = req.target.substr(0, req.target.find('?'));
    if (path == ws_path_) {
      const auto key = req.headers.find("sec-websocket-key");
      if (req.method != "GET" || !header_has_token(req, "upgrade", "websocket") ||
          !header_has_token(req, "connection", "upgrade") || key == req.headers.end()) {
        send_http(fd, 426, "Upgrade Required", "text/plain", "websocket upgrade required\n");
        return;
      }
      const auto ver = req.headers.find("sec-websocket-version");
      if (ver == req.headers.end() || ver->second != "13") {
        write_all(fd, "HTTP/1.1 426 Upgrade Required\r\nSec-WebSocket-Version: 13\r\nContent-Length: 0\r\n\r\n");
        return;
      }
      write_all(fd, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: " +
                        websocket_accept_key(key->second) + "\r\n\r\n");
      serve_websocket(fd, buf.substr(end + 4));
      return;
    }
    if (req.method != "GET" && req.method != "HEAD") {
      send_http(fd, 405, "Method Not Allowed", "text/plain", "method not allowed\n");
      return;
    }
    serve_static(fd, path);
  } catch (const TransportError&) {
  }
}

void WebServer::serve_static(int fd, const std::string& target) {
  std::string rel = target == "/" ? "/index.html" : target;
  if (rel.find("..") != std::string::npos || rel.empty() || rel[0] != '/') {
    send_http(fd, 404, "Not Found", "text/plain", "not found\n");
    return;
  }
  std::ifstream in(root_ + rel, std::ios::binary);
  if (!in) {
    send_http(fd, 404, "Not Found", "text/plain", "not found\n");
    return;
  }
  std::ostringstream body;
  body << in.rdbuf();
  send_http(fd, 200, "OK", content_type(rel), body.str());
}

void WebServer::serve_websocket(int fd, std::string pending) {
  WsHandler handler = factory_();
  std::string message;
  bool in_message = false;
  for (;;) {
    WsFrame f;
    try {
      while (!pop_frame(pending, true, &f)) {
        if (!running_ || !read_some(fd, pending)) return;
      }
    } catch (const ProtocolError&) {
      write_all(fd, encode_ws_frame(ws::kClose, close_payload(1002)));
      return;
    }
    if (f.opcode == ws::kClose) {
      write_all(fd, encode_ws_frame(ws::kClose, f.payload.substr(0, 2)));
      return;
    }
    if (f.opcode == ws::kPing) {
      write_all(fd, encode_ws_frame(ws::kPong, f.payload));
      continue;
    }
    if (f.opcode == ws::kPong) continue;
    if (f.opcode == 0x0) {
      if (!in_message) {
        write_all(fd, encode_ws_frame(ws::kClose, close_payload(1002)));
        return;
      }
      message += f.payload;
    } else if (f.opcode == ws::kText) {
      message = f.payload;
      in_message = true;
    } else {
      write_all(fd, encode_ws_frame(ws::kClose, close_payload(1003)));
      return;
    }
    if (message.size() > ws::kMaxPayload) {
      write_all(fd, encode_ws_frame(ws::kClose, close_payload(1009)));
      return;
    }
    if (!f.fin) continue;
    in_message = false;
    const WsReply reply = handler(message);
    for (const auto& m : reply.messages) write_all(fd, encode_ws_frame(ws::kText, m));
    if (reply.close) {
      write_all(fd, encode_ws_frame(ws::kClose, close_payload(1000)));
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Client

WsClient::~WsClient() { close(); }

void WsClient::connect(const Endpoint& ep, const std::string& path, int timeout_ms) {
  close();
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0 || !res) {
    throw TransportError("cannot resolve " + ep.str());
  }
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
  setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  const int rc = ::connect(fd_, res->ai_addr, res->ai_addrlen);
  freeaddrinfo(res);
  if (rc != 0) {
    const std::string msg = "connect " + ep.str() + ": " + std::strerror(errno);
    close();
    throw TransportError(msg);
  }
  const std::string key = "b2JqbmF2LXRlbGVvcC1rZXk=";
  write_all(fd_, "GET " + path + " HTTP/1.1\r\nHost: " + ep.str() +
                     "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Version: 13\r\nSec-WebSocket-Key: " + key +
                     "\r\n\r\n");
  size_t end;
  while ((end = buf_.find("\r\n\r\n")) == std::string::npos) {
    if (buf_.size() > kMaxHeader || !read_some(fd_, buf_)) {
      close();
      throw TransportError("websocket handshake: connection closed");
    }
  }
  const std::string head = buf_.substr(0, end + 2);
  buf_.erase(0, end + 4);
  const Request resp = [&] {
    // Status line is not a request line; reuse the header parser after it.
    Request r;
    const size_t eol = head.find("\r\n");
    const std::string status = head.substr(0, eol);
    if (status.find(" 101 ") == std::string::npos) throw TransportError("websocket handshake refused: " + status);
    std::istringstream in(head.substr(eol + 2));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const size_t colon = line.find(':');
      if (colon != std::string::npos) r.headers[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 1));
    }
    return r;
  }();
  const auto accept = resp.headers.find("sec-websocket-accept");
  if (accept == resp.headers.end() || accept->second != websocket_accept_key(key)) {
    close();
    throw TransportError("websocket handshake: bad accept key");
  }
}

void WsClient::send_text(std::string_view text) {
  mask_state_ = mask_state_ * 1664525u + 1013904223u;
  write_all(fd_, encode_ws_frame(ws::kText, text, mask_state_));
}

void WsClient::send_raw(std::string_view bytes) { write_all(fd_, bytes); }

bool WsClient::fill() { return fd_ >= 0 && read_some(fd_, buf_); }

std::optional<std::string> WsClient::receive() {
  for (;;) {
    WsFrame f;
    while (!pop_frame(buf_, false, &f)) {
      if (!fill()) return std::nullopt;
    }
    if (f.opcode == ws::kText) return f.payload;
    if (f.opcode == ws::kClose) {
      close();
      return std::nullopt;
    }
  }
}

void WsClient::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  buf_.clear();
}

}  // namespace objnav
