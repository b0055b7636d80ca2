#include "smc/transport.hpp"

#include <algorithm>
#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fmt/format.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "smc/error.hpp"

namespace smc {
namespace {

[[noreturn]] void io_fail(const std::string& what) {
  fail(ErrorCode::TransportError, fmt::format("{}: {}", what, std::strerror(errno)));
}

// Reads exactly n bytes; returns the count actually read before EOF.
std::size_t read_full(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) break;
    if (r < 0) {
      if (errno == EINTR) continue;
      io_fail("recv");
    }
    got += static_cast<std::size_t>(r);
  }
  return got;
}

void write_full(int fd, const std::uint8_t* buf, std::size_t n) {
  std::size_t sent = 0;
  while (sent < n) {
    const ssize_t r = ::send(fd, buf + sent, n - sent, MSG_NOSIGNAL);
    if (r < 0) {
      if (errno == EINTR) continue;
      io_fail("send");
    }
    sent += static_cast<std::size_t>(r);
  }
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  require(::getaddrinfo(h.c_str(), nullptr, &hints, &res) == 0 && res, ErrorCode::TransportError,
          "cannot resolve host " + host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

}  // namespace

Socket::~Socket() {
  if (fd_ >= 0) ::close(fd_);
}

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = o.release();
  }
  return *this;
}

std::vector<std::uint8_t> encode_frame(std::span<const std::uint8_t> payload) {
  require(payload.size() <= kMaxFrame, ErrorCode::ProtocolError, "payload exceeds the frame limit");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> out(kFrameHeader + payload.size());
  out[0] = static_cast<std::uint8_t>(n >> 24);
  out[1] = static_cast<std::uint8_t>(n >> 16);
  out[2] = static_cast<std::uint8_t>(n >> 8);
  out[3] = static_cast<std::uint8_t>(n);
  std::copy(payload.begin(), payload.end(), out.begin() + kFrameHeader);
  return out;
}

void send_frame(const Socket& s, std::span<const std::uint8_t> payload) {
  const auto frame = encode_frame(payload);
  write_full(s.fd(), frame.data(), frame.size());
}

void send_raw(const Socket& s, std::span<const std::uint8_t> bytes) { write_full(s.fd(), bytes.data(), bytes.size()); }

std::vector<std::uint8_t> recv_frame(const Socket& s, std::size_t max_frame) {
  std::uint8_t head[kFrameHeader];
  const std::size_t got = read_full(s.fd(), head, kFrameHeader);
  require(got == kFrameHeader, ErrorCode::ProtocolError, fmt::format("connection closed after {} header bytes", got));
  const std::size_t n = (std::size_t{head[0]} << 24) | (std::size_t{head[1]} << 16) | (std::size_t{head[2]} << 8) | head[3];
  require(n <= max_frame, ErrorCode::ProtocolError, fmt::format("frame of {} bytes exceeds the {} byte limit", n, max_frame));
  std::vector<std::uint8_t> payload(n);
  const std::size_t body = read_full(s.fd(), payload.data(), n);
  require(body == n, ErrorCode::ProtocolError, fmt::format("frame announced {} bytes but carried {}", n, body));
  return payload;
}

Socket connect_to(const std::string& host, std::uint16_t port) {
  const sockaddr_in addr = resolve(host, port);
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) io_fail("socket");
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    io_fail(fmt::format("connect to {}:{}", host, port));
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

std::vector<std::uint8_t> request_once(const std::string& host, std::uint16_t port,
                                       std::span<const std::uint8_t> payload) {
  Socket s = connect_to(host, port);
  send_frame(s, payload);
  return recv_frame(s);
}

FrameServer::FrameServer(const std::string& host, std::uint16_t port, Handler handler) : handler_(std::move(handler)) {
  const sockaddr_in addr = resolve(host, port);
  listener_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
  if (!listener_.valid()) io_fail("socket");
  const int one = 1;
  ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(listener_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    io_fail(fmt::format("bind {}:{}", host, port));
  if (::listen(listener_.fd(), 16) != 0) io_fail("listen");
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

FrameServer::~FrameServer() { stop(); }

void FrameServer::serve(std::size_t max_requests) {
  running_ = true;
  loop(max_requests);
}

void FrameServer::loop(std::size_t max_requests) {
  std::size_t served = 0;
  while (running_ && (max_requests == 0 || served < max_requests)) {
    pollfd pfd{listener_.fd(), POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 50);
    if (ready <= 0) continue;
    Socket conn(::accept(listener_.fd(), nullptr, nullptr));
    if (!conn.valid()) continue;
    ++served;
    try {
      const auto request = recv_frame(conn);
      send_frame(conn, handler_(request));
      ++handled_;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ProtocolError) ++protocol_errors_;
    } catch (const std::exception&) {
      // the handler failed; the client sees a closed connection
    }
  }
  running_ = false;
}

void FrameServer::start() {
  running_ = true;
  thread_ = std::thread([this] { loop(0); });
}

void FrameServer::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
  listener_ = Socket();  // later connects are refused
}

}  // namespace smc
