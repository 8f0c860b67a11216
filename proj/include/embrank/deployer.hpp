#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "embrank/wire.hpp"
#include "json.hpp"

namespace embrank {

enum class DeployPhase : std::uint8_t {
  STEADY = 0,
  PHASE1_GPU_DEPLOYED = 1,
  PHASE2_TRANSITION = 2,
  PHASE3_CLEANUP = 3,
};

const char* deploy_phase_name(DeployPhase p);
DeployPhase deploy_phase_from_name(const std::string& name);

// Persisted between invocations for crash recovery; addresses live here so a
// bare `rollback --state <path>` can find the services again.
struct DeployState {
  DeployPhase phase = DeployPhase::STEADY;
  std::string stable_version;
  std::string candidate_version;
  std::string stable_cpu_dir;
  std::string candidate_dir;
  std::string cpu_addr;
  std::string gpu_addr;

  nlohmann::json to_json() const;
  static DeployState from_json(const nlohmann::json& j);
};

struct ReportEntry {
  std::string phase;
  std::int64_t timestamp_ms = 0;  // wall clock, epoch ms
  std::string action;
  std::string outcome;
};

struct DeployReport {
  std::vector<ReportEntry> entries;
  bool success = false;
  std::string final_phase;

  nlohmann::json to_json() const;
};

struct DeployerOptions {
  wire::Addr cpu_leaf;
  wire::Addr gpu_leaf;
  std::filesystem::path state_path;
  int drain_window_ms = 5000;  // old-version silence required before retiring
  int poll_ms = 50;
  int drain_timeout_ms = 60000;
  int rpc_timeout_ms = 10000;
};

// Executes the version-consistent rollout: install the candidate on the
// scorer first, switch the embedding service second, retire the old scorer
// model only after a drain window with no old-version traffic. One deployer
// instance at a time (lock file beside the state file).
class Deployer {
 public:
  explicit Deployer(DeployerOptions options);

  // Candidate directory layout: <dir>/cpu/manifest.json (+ tables) and
  // <dir>/upper_model.json sharing one version_id.
  DeployReport deploy(const std::filesystem::path& candidate_dir);

  // Reverse the steps taken so far; safe no-op in STEADY.
  DeployReport rollback();

  // Continue a deployment episode from the persisted state (crash recovery).
  DeployReport resume();

  DeployState state() const;

  // Testing hook: stop after finishing the given phase (1 or 2); deploy()
  // then leaves the system mid-transition for rollback/resume scenarios.
  void set_stop_after_phase(int phase) { stop_after_phase_ = phase; }

 private:
  class LockFile {
   public:
    explicit LockFile(const std::filesystem::path& path);
    ~LockFile();
    LockFile(const LockFile&) = delete;

   private:
    std::filesystem::path path_;
  };

  nlohmann::json call(const wire::Addr& addr, nlohmann::json request);
  void persist();
  void load_state_or_bootstrap();
  void note(DeployReport& report, const std::string& action, const std::string& outcome);

  bool run_phase1(DeployReport& report);                     // install candidate on gpu leaf
  bool run_phase2(DeployReport& report);                     // switch cpu leaf to candidate
  bool run_phase3(DeployReport& report, std::string drain_version,
                  std::string next_stable);                  // drain + retire
  bool wait_drained(const std::string& version, DeployReport& report);

  DeployerOptions options_;
  DeployState state_;
  int stop_after_phase_ = 3;
};

}  // namespace embrank
