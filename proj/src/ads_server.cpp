#include "embrank/ads_server.hpp"

#include <algorithm>
#include <chrono>
#include <thread>
#include <vector>

#include "embrank/errors.hpp"
#include "embrank/metrics.hpp"

namespace embrank {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Per-thread persistent upstream connections, rebuilt on transport failure.
std::map<std::string, std::unique_ptr<wire::Client>>& upstream_clients() {
  thread_local std::map<std::string, std::unique_ptr<wire::Client>> clients;
  return clients;
}

}  // namespace

void PipelineMetrics::record_ok(double total_ms) {
  std::lock_guard lock(mutex_);
  ++requests_;
  ++ok_;
  latencies_ms_.push_back(total_ms);
  while (latencies_ms_.size() > window_) latencies_ms_.pop_front();
}

void PipelineMetrics::record_error(const std::string& code) {
  std::lock_guard lock(mutex_);
  ++requests_;
  ++errors_[code];
}

void PipelineMetrics::count_version_mismatch() {
  std::lock_guard lock(mutex_);
  ++version_mismatch_count_;
}

nlohmann::json PipelineMetrics::snapshot() const {
  std::lock_guard lock(mutex_);
  nlohmann::json errors = nlohmann::json::object();
  std::uint64_t error_total = 0;
  for (const auto& [code, n] : errors_) {
    errors[code] = n;
    error_total += n;
  }
  std::vector<double> window(latencies_ms_.begin(), latencies_ms_.end());
  return {{"requests", requests_},
          {"ok", ok_},
          {"errors", errors},
          {"error_total", error_total},
          {"version_mismatch_count", version_mismatch_count_},
          {"latency_ms", {{"p50", quantile(window, 0.5)}, {"p99", quantile(window, 0.99)}}},
          {"window_size", window.size()}};
}

AdsServer::AdsServer(AdsServerConfig config) : config_(std::move(config)) {
  if (!config_.request_log.empty()) {
    log_stream_.open(config_.request_log, std::ios::trunc);
    if (!log_stream_) throw IoError("ads server: cannot open request log");
  }
}

void AdsServer::log_request(const nlohmann::json& entry) {
  if (!log_stream_.is_open()) return;
  std::lock_guard lock(log_mutex_);
  log_stream_ << entry.dump() << "\n";
  log_stream_.flush();
}

nlohmann::json AdsServer::call_upstream(const wire::Addr& addr, const nlohmann::json& request) {
  // One retry per phase, on a fresh connection; the fresh connection is kept
  // for later requests on this thread.
  auto& clients = upstream_clients();
  auto& slot = clients[addr.str()];
  if (slot) {
    try {
      return slot->call(request);
    } catch (const wire::WireError&) {
      slot.reset();
    }
  }
  slot = std::make_unique<wire::Client>(addr, config_.upstream_timeout_ms);
  try {
    return slot->call(request);
  } catch (const wire::WireError&) {
    slot.reset();
    throw;
  }
}

nlohmann::json AdsServer::handle_infer(const nlohmann::json& request) {
  const std::string id = request.value("request_id", "");
  const auto t0 = Clock::now();
  const int sim_other_ms = request.value("sim_other_ms", 0);

  nlohmann::json fetch_request = {{"op", "generate_embeddings"},
                                  {"request_id", id},
                                  {"ids", request.value("ids", nlohmann::json::object())}};

  double fetch_ms = 0, other_ms = 0, score_ms = 0;

  auto run_other_work = [&] {
    const auto start = Clock::now();
    if (sim_other_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sim_other_ms));
    other_ms = ms_since(start);
  };

  auto fetch_once = [&]() -> nlohmann::json {
    const auto start = Clock::now();
    nlohmann::json response = call_upstream(config_.cpu_leaf, fetch_request);
    fetch_ms = ms_since(start);
    return response;
  };

  // Step 1: embedding retrieval, initiated the moment the request arrives.
  // In the normal mode the RPC is written out first and awaited only after
  // the other-feature work finishes, so fetch and other work proceed
  // simultaneously; the sequential mode exists for the latency benchmark.
  nlohmann::json fetch_response;
  try {
    if (config_.sequential) {
      fetch_response = fetch_once();
      run_other_work();
    } else {
      const auto fetch_start = Clock::now();
      auto& slot = upstream_clients()[config_.cpu_leaf.str()];
      bool initiated = false;
      if (slot) {
        try {
          slot->send(fetch_request);
          initiated = true;
        } catch (const wire::WireError&) {
          slot.reset();
        }
      }
      if (!initiated) {
        slot = std::make_unique<wire::Client>(config_.cpu_leaf, config_.upstream_timeout_ms);
        slot->send(fetch_request);
      }
      run_other_work();
      try {
        fetch_response = slot->receive();
      } catch (const wire::WireTimeout&) {
        throw;
      } catch (const wire::WireError&) {
        // Connection died mid-flight: one retry on a fresh connection.
        slot.reset();
        slot = std::make_unique<wire::Client>(config_.cpu_leaf, config_.upstream_timeout_ms);
        fetch_response = slot->call(fetch_request);
      }
      fetch_ms = ms_since(fetch_start);
    }
  } catch (const wire::WireTimeout&) {
    metrics_.record_error("timeout");
    return wire::error_response(id, "timeout", "phase: fetch");
  } catch (const wire::WireError& e) {
    metrics_.record_error("embedding_unavailable");
    return wire::error_response(id, "embedding_unavailable", e.what());
  }

  if (fetch_response.contains("error")) {
    const std::string code = fetch_response["error"].value("code", "internal");
    metrics_.record_error(code);
    return fetch_response;
  }

  // Step 2: version-aware scoring with the V carried by this response, never
  // a cached or defaulted one. On version_mismatch the whole pipeline
  // restarts once from Step 1 (covers operator error; counted regardless).
  for (int attempt = 0;; ++attempt) {
    const std::string version = fetch_response.at("version_id").get<std::string>();
    nlohmann::json score_request = {{"op", "score"},
                                    {"request_id", id},
                                    {"version_id", version},
                                    {"embeddings", fetch_response.at("embeddings")},
                                    {"dense", request.value("dense", std::vector<float>{})},
                                    {"head", request.value("head", "ctr")}};
    nlohmann::json score_response;
    const auto score_start = Clock::now();
    try {
      score_response = call_upstream(config_.gpu_leaf, score_request);
    } catch (const wire::WireTimeout&) {
      metrics_.record_error("timeout");
      return wire::error_response(id, "timeout", "phase: score");
    } catch (const wire::WireError& e) {
      metrics_.record_error("scoring_unavailable");
      return wire::error_response(id, "scoring_unavailable", e.what());
    }
    score_ms = ms_since(score_start);

    if (score_response.contains("error")) {
      const std::string code = score_response["error"].value("code", "internal");
      if (code == "version_mismatch") {
        metrics_.count_version_mismatch();
        if (attempt == 0) {
          // Restart from Step 1: refetch so V and E move together.
          try {
            fetch_response = fetch_once();
          } catch (const wire::WireError& e) {
            metrics_.record_error("embedding_unavailable");
            return wire::error_response(id, "embedding_unavailable", e.what());
          }
          if (fetch_response.contains("error")) {
            const std::string fetch_code = fetch_response["error"].value("code", "internal");
            metrics_.record_error(fetch_code);
            return fetch_response;
          }
          continue;
        }
      }
      metrics_.record_error(code);
      return score_response;
    }

    const double total_ms = ms_since(t0);
    nlohmann::json response = {{"request_id", id},
                               {"version_id", version},
                               {"fingerprint", score_response.value("fingerprint", "")},
                               {"timing",
                                {{"fetch_ms", fetch_ms},
                                 {"other_ms", other_ms},
                                 {"score_ms", score_ms},
                                 {"total_ms", total_ms}}}};
    if (score_response.contains("score"))
      response["score"] = score_response["score"];
    else
      response["scores"] = score_response["scores"];
    metrics_.record_ok(total_ms);
    log_request({{"request_id", id},
                 {"version_id", version},
                 {"total_ms", total_ms},
                 {"fetch_ms", fetch_ms},
                 {"other_ms", other_ms},
                 {"score_ms", score_ms}});
    return response;
  }
}

nlohmann::json AdsServer::handle(const nlohmann::json& request) {
  const std::string id = request.is_object() ? request.value("request_id", "") : "";
  if (!request.is_object() || !request.contains("op"))
    return wire::error_response(id, "bad_request", "missing op");
  const std::string op = request.at("op").get<std::string>();
  if (op == "infer") return handle_infer(request);
  if (op == "metrics") {
    nlohmann::json snapshot = metrics_.snapshot();
    snapshot["request_id"] = id;
    return snapshot;
  }
  return wire::error_response(id, "bad_request", "unknown op '" + op + "'");
}

}  // namespace embrank
