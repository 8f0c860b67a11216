#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <thread>
#include <vector>

#include "embrank/rng.hpp"
#include "embrank/wire.hpp"
#include "json.hpp"

namespace embrank {

// Per-message latency model: fixed delay, uniform[a,b], or lognormal with
// log-space parameters (a = mu, b = sigma). Milliseconds.
struct LatencyDist {
  enum class Kind : std::uint8_t { FIXED = 0, UNIFORM = 1, LOGNORMAL = 2 };
  Kind kind = Kind::FIXED;
  double a = 0.0;
  double b = 0.0;

  double sample_ms(Rng& rng) const;
  static LatencyDist from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct LinkConfig {
  LatencyDist latency;
  double drop_prob = 0.0;  // probability a request frame is swallowed

  static LinkConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Userspace proxy that forwards framed messages to an upstream service,
// delaying (and occasionally dropping) each request frame. Deterministic for
// a given seed: connection k draws from substream derive_seed(seed, k).
// Responses flow back verbatim and undelayed.
class SimNetProxy {
 public:
  SimNetProxy(const wire::Addr& upstream, LinkConfig link, std::uint64_t seed,
              const wire::Addr& listen = {"127.0.0.1", 0});
  ~SimNetProxy();

  wire::Addr addr() const { return addr_; }
  std::uint64_t forwarded() const { return forwarded_.load(); }
  std::uint64_t dropped() const { return dropped_.load(); }
  void stop();

 private:
  void accept_loop();
  void pump(int client_fd, std::uint64_t conn_index);

  wire::Addr upstream_;
  LinkConfig link_;
  std::uint64_t seed_;
  wire::Addr addr_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> conn_counter_{0};
  std::atomic<std::uint64_t> forwarded_{0};
  std::atomic<std::uint64_t> dropped_{0};
  std::thread accept_thread_;
  std::mutex conns_mutex_;
  std::vector<int> conn_fds_;
  std::vector<std::thread> conn_threads_;
};

}  // namespace embrank
