#include "embrank/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace embrank::wire {

namespace {

sockaddr_in to_sockaddr(const Addr& addr) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(addr.port);
  if (inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) != 1)
    throw WireError("bad address: " + addr.host);
  return sa;
}

std::string errno_str(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

}  // namespace

Addr Addr::parse(const std::string& s) {
  const std::size_t colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address must be host:port, got '" + s + "'");
  Addr addr;
  addr.host = s.substr(0, colon);
  if (addr.host.empty()) addr.host = "127.0.0.1";
  const std::string port_str = s.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_str.c_str(), &end, 10);
  if (end == port_str.c_str() || *end != '\0' || port < 0 || port > 65535)
    throw ConfigError("bad port in address '" + s + "'");
  addr.port = static_cast<std::uint16_t>(port);
  return addr;
}

std::string Addr::str() const { return host + ":" + std::to_string(port); }

Socket::~Socket() { close(); }

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

Socket Socket::connect_to(const Addr& addr) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw WireError(errno_str("socket"));
  Socket s(fd);
  const sockaddr_in sa = to_sockaddr(addr);
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0)
    throw WireError("connect to " + addr.str() + " failed: " + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

void Socket::set_recv_timeout_ms(int ms) {
  timeval tv{};
  tv.tv_sec = ms / 1000;
  tv.tv_usec = (ms % 1000) * 1000;
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
}

void Socket::send_all(const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  while (n > 0) {
    const ssize_t sent = ::send(fd_, p, n, MSG_NOSIGNAL);
    if (sent < 0) {
      if (errno == EINTR) continue;
      throw WireError(errno_str("send"));
    }
    p += sent;
    n -= static_cast<std::size_t>(sent);
  }
}

void Socket::recv_all(void* data, std::size_t n) {
  char* p = static_cast<char*>(data);
  while (n > 0) {
    const ssize_t got = ::recv(fd_, p, n, 0);
    if (got == 0) throw WireClosed("connection closed");
    if (got < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw WireTimeout("receive timed out");
      throw WireError(errno_str("recv"));
    }
    p += got;
    n -= static_cast<std::size_t>(got);
  }
}

void Socket::shutdown_both() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::close() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void write_frame_bytes(Socket& s, const std::vector<std::uint8_t>& payload) {
  if (payload.size() > kMaxFrameBytes) throw WireError("frame too large");
  std::vector<std::uint8_t> buf;
  buf.reserve(4 + payload.size());
  const std::uint32_t n = static_cast<std::uint32_t>(payload.size());
  buf.push_back(static_cast<std::uint8_t>(n >> 24));
  buf.push_back(static_cast<std::uint8_t>(n >> 16));
  buf.push_back(static_cast<std::uint8_t>(n >> 8));
  buf.push_back(static_cast<std::uint8_t>(n));
  buf.insert(buf.end(), payload.begin(), payload.end());
  s.send_all(buf.data(), buf.size());
}

std::vector<std::uint8_t> read_frame_bytes(Socket& s) {
  std::uint8_t header[4];
  s.recv_all(header, 4);
  const std::uint32_t n = (static_cast<std::uint32_t>(header[0]) << 24) |
                          (static_cast<std::uint32_t>(header[1]) << 16) |
                          (static_cast<std::uint32_t>(header[2]) << 8) |
                          static_cast<std::uint32_t>(header[3]);
  if (n > kMaxFrameBytes) throw WireError("incoming frame too large");
  std::vector<std::uint8_t> payload(n);
  if (n > 0) s.recv_all(payload.data(), n);
  return payload;
}

void write_frame(Socket& s, const nlohmann::json& doc) {
  const std::string text = doc.dump();
  std::vector<std::uint8_t> payload(text.begin(), text.end());
  write_frame_bytes(s, payload);
}

nlohmann::json read_frame(Socket& s) {
  const std::vector<std::uint8_t> payload = read_frame_bytes(s);
  try {
    return nlohmann::json::parse(payload.begin(), payload.end());
  } catch (const nlohmann::json::exception& e) {
    throw WireError(std::string("bad frame json: ") + e.what());
  }
}

Client::Client(const Addr& addr, int timeout_ms) : addr_(addr), timeout_ms_(timeout_ms) {
  socket_ = Socket::connect_to(addr_);
  socket_.set_recv_timeout_ms(timeout_ms_);
}

nlohmann::json Client::call(const nlohmann::json& request) {
  write_frame(socket_, request);
  return read_frame(socket_);
}

void Client::send(const nlohmann::json& request) { write_frame(socket_, request); }

nlohmann::json Client::receive() { return read_frame(socket_); }

nlohmann::json error_response(const std::string& request_id, const std::string& code,
                              const std::string& message) {
  return {{"request_id", request_id}, {"error", {{"code", code}, {"message", message}}}};
}

Server::Server(const Addr& bind_addr, Handler handler) : handler_(std::move(handler)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw WireError(errno_str("socket"));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa = to_sockaddr(bind_addr);
  if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
    const std::string msg = errno_str(("bind " + bind_addr.str()).c_str());
    ::close(listen_fd_);
    throw WireError(msg);
  }
  if (::listen(listen_fd_, 128) != 0) {
    const std::string msg = errno_str("listen");
    ::close(listen_fd_);
    throw WireError(msg);
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  addr_.host = bind_addr.host;
  addr_.port = ntohs(bound.sin_port);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

Server::~Server() { stop(); }

void Server::stop() {
  bool expected = false;
  if (!stopping_.compare_exchange_strong(expected, true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (accept_thread_.joinable()) accept_thread_.join();
  {
    std::lock_guard lock(conns_mutex_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(conns_mutex_);
    threads.swap(conn_threads_);
  }
  for (auto& t : threads)
    if (t.joinable()) t.join();
}

void Server::accept_loop() {
  while (!stopping_.load()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_.load()) return;
      if (errno == EINTR) continue;
      return;  // listener closed
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(conns_mutex_);
    conn_fds_.push_back(fd);
    conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void Server::serve_connection(int fd) {
  // Deregister before the fd closes so stop() never shuts down a reused fd.
  struct Dereg {
    Server* server;
    int fd;
    ~Dereg() {
      std::lock_guard lock(server->conns_mutex_);
      std::erase(server->conn_fds_, fd);
    }
  } dereg{this, fd};

  Socket socket(fd);
  while (!stopping_.load()) {
    nlohmann::json request;
    try {
      request = read_frame(socket);
    } catch (const WireError&) {
      return;  // peer closed or stop() shut the socket down
    }
    nlohmann::json response;
    try {
      response = handler_(request);
    } catch (const std::exception& e) {
      const std::string id = request.is_object() ? request.value("request_id", "") : "";
      response = error_response(id, "internal", e.what());
    }
    try {
      write_frame(socket, response);
    } catch (const WireError&) {
      return;
    }
  }
}

}  // namespace embrank::wire
