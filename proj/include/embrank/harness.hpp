#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "embrank/simnet.hpp"
#include "embrank/table.hpp"
#include "json.hpp"

namespace embrank {

// Generated deployable release: paired CPU manifest directory and upper-model
// file sharing one version_id.
struct ArtifactSpec {
  std::vector<std::string> tables = {"user", "pin"};
  std::uint32_t dim = 16;
  std::uint64_t rows = 1024;
  std::uint32_t dense_dim = 2;
  Dtype dtype = Dtype::F32;
  std::uint32_t group_size = 16;  // INT4Q only
  std::uint32_t shards = 0;       // 0 or 1 = unsharded
  std::string head = "ctr";

  static ArtifactSpec from_json(const nlohmann::json& j);
};

struct VersionArtifacts {
  std::string version_id;
  std::filesystem::path dir;  // contains cpu/ and upper_model.json
  std::string fingerprint;
};

std::vector<VersionArtifacts> make_artifacts(const std::filesystem::path& root,
                                             std::uint32_t num_versions, const ArtifactSpec& spec,
                                             std::uint64_t seed);

struct TrafficConfig {
  std::uint32_t requests = 1000;
  std::uint32_t concurrency = 8;
  std::uint32_t ids_per_table = 1;
  int sim_other_ms = 0;
  std::string head = "ctr";
  int timeout_ms = 3000;
};

struct ScenarioEvent {
  std::uint64_t at_request = 0;  // fires once this many requests completed
  std::string action;            // deploy | deploy_partial | rollback | resume | crash | restart
  std::uint32_t candidate = 0;   // deploy*: index into v1..vN
  int until_phase = 3;           // deploy_partial
  std::string service;           // crash/restart: cpu | gpu | ads
};

struct ScenarioConfig {
  std::string mode = "inproc";  // inproc | subprocess
  std::uint64_t seed = 1;
  std::uint32_t versions = 2;
  ArtifactSpec artifacts;
  TrafficConfig traffic;
  LinkConfig cpu_link;
  LinkConfig gpu_link;
  int drain_window_ms = 150;
  int poll_ms = 20;
  int drain_timeout_ms = 20000;
  std::string binary;  // subprocess mode: path to the CLI binary
  std::filesystem::path workdir;  // empty = fresh temp dir

  static ScenarioConfig from_json(const nlohmann::json& j);
  static ScenarioConfig load(const std::filesystem::path& path);
  std::vector<ScenarioEvent> events;
};

// Counts that must reproduce bit-for-bit given a seed live under
// "deterministic"; wall-clock figures live under "measured".
struct ScenarioResult {
  nlohmann::json deterministic;
  nlohmann::json measured;

  nlohmann::json to_json() const { return {{"deterministic", deterministic}, {"measured", measured}}; }
};

ScenarioResult run_scenario(const ScenarioConfig& config);

struct BenchConfig {
  std::uint64_t seed = 1;
  ArtifactSpec artifacts;
  LinkConfig cpu_link;   // fetch latency
  LinkConfig gpu_link;   // score latency
  int sim_other_ms = 20;
  std::uint32_t requests = 200;
  std::uint32_t concurrency = 8;
  int timeout_ms = 10000;

  static BenchConfig from_json(const nlohmann::json& j);
  static BenchConfig load(const std::filesystem::path& path);
};

// Runs the pipeline twice, early-fetch enabled and deliberately
// sequentialized, against identical seeded links.
struct BenchResult {
  double parallel_p50 = 0, parallel_p99 = 0;
  double sequential_p50 = 0, sequential_p99 = 0;

  nlohmann::json to_json() const {
    return {{"parallel", {{"p50", parallel_p50}, {"p99", parallel_p99}}},
            {"sequential", {{"p50", sequential_p50}, {"p99", sequential_p99}}}};
  }
};

BenchResult bench_latency(const BenchConfig& config);

}  // namespace embrank
