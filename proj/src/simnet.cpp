#include "embrank/simnet.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

#include "embrank/errors.hpp"

namespace embrank {

double LatencyDist::sample_ms(Rng& rng) const {
  switch (kind) {
    case Kind::FIXED: return a;
    case Kind::UNIFORM: return rng.uniform(a, b);
    case Kind::LOGNORMAL: return rng.lognormal(a, b);
  }
  return 0.0;
}

LatencyDist LatencyDist::from_json(const nlohmann::json& j) {
  LatencyDist d;
  const std::string kind = j.value("dist", "fixed");
  if (kind == "fixed") {
    d.kind = Kind::FIXED;
    d.a = j.value("ms", j.value("a", 0.0));
  } else if (kind == "uniform") {
    d.kind = Kind::UNIFORM;
    d.a = j.at("a").get<double>();
    d.b = j.at("b").get<double>();
    if (d.b < d.a) throw ConfigError("latency uniform: b < a");
  } else if (kind == "lognormal") {
    d.kind = Kind::LOGNORMAL;
    d.a = j.at("mu").get<double>();
    d.b = j.at("sigma").get<double>();
  } else {
    throw ConfigError("latency dist must be fixed|uniform|lognormal, got '" + kind + "'");
  }
  if (d.a < 0) throw ConfigError("latency: negative parameter");
  return d;
}

nlohmann::json LatencyDist::to_json() const {
  switch (kind) {
    case Kind::FIXED: return {{"dist", "fixed"}, {"ms", a}};
    case Kind::UNIFORM: return {{"dist", "uniform"}, {"a", a}, {"b", b}};
    case Kind::LOGNORMAL: return {{"dist", "lognormal"}, {"mu", a}, {"sigma", b}};
  }
  return {};
}

LinkConfig LinkConfig::from_json(const nlohmann::json& j) {
  LinkConfig cfg;
  if (j.contains("latency")) cfg.latency = LatencyDist::from_json(j.at("latency"));
  cfg.drop_prob = j.value("drop_prob", 0.0);
  if (cfg.drop_prob < 0.0 || cfg.drop_prob >= 1.0)
    throw ConfigError("drop_prob must lie in [0, 1)");
  return cfg;
}

nlohmann::json LinkConfig::to_json() const {
  return {{"latency", latency.to_json()}, {"drop_prob", drop_prob}};
}

SimNetProxy::SimNetProxy(const wire::Addr& upstream, LinkConfig link, std::uint64_t seed,
                         const wire::Addr& listen)
    : upstream_(upstream), link_(link), seed_(seed) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw wire::WireError("simnet: socket failed");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(listen.port);
  if (inet_pton(AF_INET, listen.host.c_str(), &sa.sin_addr) != 1) {
    ::close(listen_fd_);
    throw wire::WireError("simnet: bad listen host");
  }
  if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0 ||
      ::listen(listen_fd_, 128) != 0) {
    ::close(listen_fd_);
    throw wire::WireError("simnet: bind/listen failed");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  addr_.host = listen.host;
  addr_.port = ntohs(bound.sin_port);
  accept_thread_ = std::thread([this] { accept_loop(); });
}

SimNetProxy::~SimNetProxy() { stop(); }

void SimNetProxy::stop() {
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

void SimNetProxy::accept_loop() {
  while (!stopping_.load()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_.load() || errno != EINTR) return;
      continue;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    const std::uint64_t conn_index = conn_counter_.fetch_add(1);
    std::lock_guard lock(conns_mutex_);
    conn_fds_.push_back(fd);
    conn_threads_.emplace_back([this, fd, conn_index] { pump(fd, conn_index); });
  }
}

void SimNetProxy::pump(int client_fd, std::uint64_t conn_index) {
  struct Dereg {
    SimNetProxy* proxy;
    int fd;
    ~Dereg() {
      std::lock_guard lock(proxy->conns_mutex_);
      std::erase(proxy->conn_fds_, fd);
    }
  } dereg{this, client_fd};

  wire::Socket client(client_fd);
  wire::Socket upstream;
  try {
    upstream = wire::Socket::connect_to(upstream_);
  } catch (const wire::WireError&) {
    return;  // upstream down: the client sees a closed connection
  }
  {
    std::lock_guard lock(conns_mutex_);
    conn_fds_.push_back(upstream.fd());
  }
  struct DeregUp {
    SimNetProxy* proxy;
    int fd;
    ~DeregUp() {
      std::lock_guard lock(proxy->conns_mutex_);
      std::erase(proxy->conn_fds_, fd);
    }
  } dereg_up{this, upstream.fd()};

  Rng rng(derive_seed(seed_, conn_index));

  // Responses stream back on a sibling thread, verbatim and undelayed.
  std::thread back([&] {
    try {
      while (!stopping_.load()) {
        const auto frame = wire::read_frame_bytes(upstream);
        wire::write_frame_bytes(client, frame);
      }
    } catch (const wire::WireError&) {
    }
    client.shutdown_both();
  });

  try {
    while (!stopping_.load()) {
      const auto frame = wire::read_frame_bytes(client);
      const double delay_ms = link_.latency.sample_ms(rng);
      const bool drop = link_.drop_prob > 0.0 && rng.bernoulli(link_.drop_prob);
      if (delay_ms > 0)
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms));
      if (drop) {
        dropped_.fetch_add(1);
        continue;  // swallowed; the caller's timeout handles it
      }
      wire::write_frame_bytes(upstream, frame);
      forwarded_.fetch_add(1);
    }
  } catch (const wire::WireError&) {
  }
  upstream.shutdown_both();
  back.join();
}

}  // namespace embrank
