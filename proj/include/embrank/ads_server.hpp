#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>

#include "embrank/wire.hpp"
#include "json.hpp"

namespace embrank {

// Request counters and a sliding latency window, safe under concurrent update.
class PipelineMetrics {
 public:
  explicit PipelineMetrics(std::size_t window = 8192) : window_(window) {}

  void record_ok(double total_ms);
  void record_error(const std::string& code);
  void count_version_mismatch();

  nlohmann::json snapshot() const;

 private:
  std::size_t window_;
  mutable std::mutex mutex_;
  std::uint64_t requests_ = 0;
  std::uint64_t ok_ = 0;
  std::uint64_t version_mismatch_count_ = 0;
  std::map<std::string, std::uint64_t> errors_;
  std::deque<double> latencies_ms_;
};

struct AdsServerConfig {
  wire::Addr cpu_leaf;
  wire::Addr gpu_leaf;
  bool sequential = false;  // benchmarking mode: fetch, then other work, then score
  int upstream_timeout_ms = 5000;
  std::filesystem::path request_log;  // empty = disabled
};

// The orchestrator: per request, fetch version-tagged embeddings from the
// CPU leaf while the simulated other-feature work runs, then score with the
// GPU-leaf model whose version matches the payload.
class AdsServer {
 public:
  explicit AdsServer(AdsServerConfig config);

  // Framed-protocol entry point: ops infer, metrics.
  nlohmann::json handle(const nlohmann::json& request);

  const PipelineMetrics& metrics() const { return metrics_; }

 private:
  nlohmann::json handle_infer(const nlohmann::json& request);
  nlohmann::json call_upstream(const wire::Addr& addr, const nlohmann::json& request);
  void log_request(const nlohmann::json& entry);

  AdsServerConfig config_;
  PipelineMetrics metrics_;
  std::mutex log_mutex_;
  std::ofstream log_stream_;
};

}  // namespace embrank
