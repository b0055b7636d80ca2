#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace smc {

/// Frames are a 4-byte big-endian length followed by that many bytes.
inline constexpr std::size_t kMaxFrame = std::size_t{1} << 30;
inline constexpr std::size_t kFrameHeader = 4;

/// Owned file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int fd = fd_;
    fd_ = -1;
    return fd;
  }

 private:
  int fd_ = -1;
};

/// Header + payload as sent on the wire.
std::vector<std::uint8_t> encode_frame(std::span<const std::uint8_t> payload);

/// Throws TransportError on I/O failure and ProtocolError for an oversize
/// length or a peer that closes before the announced length arrives.
void send_frame(const Socket& s, std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> recv_frame(const Socket& s, std::size_t max_frame = kMaxFrame);

/// Writes raw bytes (used to send deliberately malformed frames).
void send_raw(const Socket& s, std::span<const std::uint8_t> bytes);

Socket connect_to(const std::string& host, std::uint16_t port);

/// Connects, sends one frame, reads one frame, closes.
std::vector<std::uint8_t> request_once(const std::string& host, std::uint16_t port,
                                       std::span<const std::uint8_t> payload);

/// One request per connection, handled sequentially: read a frame, reply
/// with the handler's frame, close.
class FrameServer {
 public:
  using Handler = std::function<std::vector<std::uint8_t>(const std::vector<std::uint8_t>&)>;

  /// Binds and listens; port 0 picks a free port.
  FrameServer(const std::string& host, std::uint16_t port, Handler handler);
  ~FrameServer();
  FrameServer(const FrameServer&) = delete;
  FrameServer& operator=(const FrameServer&) = delete;

  std::uint16_t port() const { return port_; }

  /// Serves until stop() or until max_requests connections were handled
  /// (0 = unlimited).
  void serve(std::size_t max_requests = 0);
  /// serve() on a background thread.
  void start();
  /// Stops serving and closes the listening socket.
  void stop();

  std::size_t handled() const { return handled_.load(); }
  /// Framing failures seen from clients (they do not stop the server).
  std::size_t protocol_errors() const { return protocol_errors_.load(); }

 private:
  void loop(std::size_t max_requests);

  Socket listener_;
  std::uint16_t port_ = 0;
  Handler handler_;
  std::atomic<bool> running_{false};
  std::atomic<std::size_t> handled_{0};
  std::atomic<std::size_t> protocol_errors_{0};
  std::thread thread_;
};

}  // namespace smc
