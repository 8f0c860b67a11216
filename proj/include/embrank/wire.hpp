#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "embrank/errors.hpp"
#include "json.hpp"

namespace embrank::wire {

// Shared service protocol: UTF-8 JSON documents framed by a 4-byte big-endian
// length prefix over TCP.

class WireError : public Error {
 public:
  using Error::Error;
};

class WireTimeout : public WireError {
 public:
  using WireError::WireError;
};

class WireClosed : public WireError {
 public:
  using WireError::WireError;
};

struct Addr {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Addr parse(const std::string& s);  // "host:port"
  std::string str() const;
};

inline constexpr std::size_t kMaxFrameBytes = 64ull << 20;

// RAII TCP socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  static Socket connect_to(const Addr& addr);

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  void set_recv_timeout_ms(int ms);
  void send_all(const void* data, std::size_t n);
  // Throws WireClosed on orderly EOF, WireTimeout when the receive timeout
  // elapses mid-message.
  void recv_all(void* data, std::size_t n);
  void shutdown_both() noexcept;
  void close() noexcept;

 private:
  int fd_ = -1;
};

void write_frame_bytes(Socket& s, const std::vector<std::uint8_t>& payload);
std::vector<std::uint8_t> read_frame_bytes(Socket& s);
void write_frame(Socket& s, const nlohmann::json& doc);
nlohmann::json read_frame(Socket& s);

// One-connection request/response client. send()/receive() split one call so
// the caller can overlap local work with the in-flight RPC.
class Client {
 public:
  explicit Client(const Addr& addr, int timeout_ms = 5000);
  nlohmann::json call(const nlohmann::json& request);
  void send(const nlohmann::json& request);
  nlohmann::json receive();
  const Addr& addr() const { return addr_; }

 private:
  Addr addr_;
  int timeout_ms_;
  Socket socket_;
};

// Thread-per-connection framed-JSON server. The handler maps one request
// document to one response document; exceptions become {"error": {...}}
// responses with code "internal".
class Server {
 public:
  using Handler = std::function<nlohmann::json(const nlohmann::json&)>;

  // Binds immediately (port 0 picks an ephemeral port) and serves until
  // stop() or destruction.
  Server(const Addr& bind_addr, Handler handler);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  Addr addr() const { return addr_; }
  std::uint16_t port() const { return addr_.port; }
  void stop();

 private:
  void accept_loop();
  void serve_connection(int fd);

  Addr addr_;
  Handler handler_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex conns_mutex_;
  std::vector<int> conn_fds_;
  std::vector<std::thread> conn_threads_;
};

// Standard error response body.
nlohmann::json error_response(const std::string& request_id, const std::string& code,
                              const std::string& message);

}  // namespace embrank::wire
