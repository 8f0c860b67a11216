#include "embrank/deployer.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <thread>

#include "embrank/cpu_leaf.hpp"
#include "embrank/errors.hpp"
#include "embrank/gpu_leaf.hpp"

namespace embrank {

namespace {

std::int64_t now_epoch_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

const char* deploy_phase_name(DeployPhase p) {
  switch (p) {
    case DeployPhase::STEADY: return "steady";
    case DeployPhase::PHASE1_GPU_DEPLOYED: return "phase1_gpu_deployed";
    case DeployPhase::PHASE2_TRANSITION: return "phase2_transition";
    case DeployPhase::PHASE3_CLEANUP: return "phase3_cleanup";
  }
  return "?";
}

DeployPhase deploy_phase_from_name(const std::string& name) {
  for (int i = 0; i <= 3; ++i)
    if (name == deploy_phase_name(static_cast<DeployPhase>(i))) return static_cast<DeployPhase>(i);
  throw ConfigError("unknown deploy phase: " + name);
}

nlohmann::json DeployState::to_json() const {
  return {{"phase", deploy_phase_name(phase)},
          {"stable_version", stable_version},
          {"candidate_version", candidate_version},
          {"stable_cpu_dir", stable_cpu_dir},
          {"candidate_dir", candidate_dir},
          {"cpu_addr", cpu_addr},
          {"gpu_addr", gpu_addr}};
}

DeployState DeployState::from_json(const nlohmann::json& j) {
  DeployState s;
  s.phase = deploy_phase_from_name(j.at("phase").get<std::string>());
  s.stable_version = j.value("stable_version", "");
  s.candidate_version = j.value("candidate_version", "");
  s.stable_cpu_dir = j.value("stable_cpu_dir", "");
  s.candidate_dir = j.value("candidate_dir", "");
  s.cpu_addr = j.value("cpu_addr", "");
  s.gpu_addr = j.value("gpu_addr", "");
  return s;
}

nlohmann::json DeployReport::to_json() const {
  nlohmann::json lines = nlohmann::json::array();
  for (const auto& e : entries)
    lines.push_back({{"phase", e.phase},
                     {"timestamp_ms", e.timestamp_ms},
                     {"action", e.action},
                     {"outcome", e.outcome}});
  return {{"success", success}, {"final_phase", final_phase}, {"entries", lines}};
}

Deployer::LockFile::LockFile(const std::filesystem::path& path) : path_(path) {
  const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw Unavailable("deployer: another instance holds the lock file " + path.string());
  ::close(fd);
}

Deployer::LockFile::~LockFile() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

Deployer::Deployer(DeployerOptions options) : options_(std::move(options)) {
  load_state_or_bootstrap();
}

nlohmann::json Deployer::call(const wire::Addr& addr, nlohmann::json request) {
  request["request_id"] = "deployer";
  wire::Client client(addr, options_.rpc_timeout_ms);
  nlohmann::json response = client.call(request);
  return response;
}

void Deployer::persist() {
  std::ofstream out(options_.state_path, std::ios::trunc);
  if (!out) throw IoError("deployer: cannot write state file " + options_.state_path.string());
  out << state_.to_json().dump(2) << "\n";
}

void Deployer::load_state_or_bootstrap() {
  std::ifstream in(options_.state_path);
  if (in) {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("deployer: bad state file: " + std::string(e.what()));
    }
    state_ = DeployState::from_json(j);
  } else {
    // First run against a live system: adopt the serving version as stable.
    state_ = DeployState{};
    try {
      const nlohmann::json status = call(options_.cpu_leaf, {{"op", "status"}});
      state_.stable_version = status.value("version_id", "");
    } catch (const wire::WireError&) {
      state_.stable_version = "";
    }
  }
  state_.cpu_addr = options_.cpu_leaf.str();
  state_.gpu_addr = options_.gpu_leaf.str();
}

void Deployer::note(DeployReport& report, const std::string& action, const std::string& outcome) {
  report.entries.push_back({deploy_phase_name(state_.phase), now_epoch_ms(), action, outcome});
}

DeployState Deployer::state() const { return state_; }

bool Deployer::run_phase1(DeployReport& report) {
  const std::filesystem::path gpu_model = std::filesystem::path(state_.candidate_dir) / "upper_model.json";
  nlohmann::json response = call(options_.gpu_leaf, {{"op", "install_model"}, {"path", gpu_model.string()}});
  if (response.contains("error")) {
    note(report, "gpu install " + state_.candidate_version,
         "failed: " + response["error"].value("message", ""));
    return false;
  }
  const nlohmann::json status = call(options_.gpu_leaf, {{"op", "status"}});
  bool listed = false;
  for (const auto& v : status.value("versions", nlohmann::json::array()))
    listed |= v.get<std::string>() == state_.candidate_version;
  if (!listed) {
    note(report, "gpu install " + state_.candidate_version, "failed: not listed after install");
    return false;
  }
  state_.phase = DeployPhase::PHASE1_GPU_DEPLOYED;
  persist();
  note(report, "gpu install " + state_.candidate_version, "ok");
  return true;
}

bool Deployer::run_phase2(DeployReport& report) {
  const std::filesystem::path cpu_dir = std::filesystem::path(state_.candidate_dir) / "cpu";
  nlohmann::json response = call(options_.cpu_leaf, {{"op", "load_model"}, {"path", cpu_dir.string()}});
  if (response.contains("error")) {
    note(report, "cpu load " + state_.candidate_version,
         "failed: " + response["error"].value("message", ""));
    return false;
  }
  const std::string serving = response.value("version_id", "");
  if (serving != state_.candidate_version) {
    note(report, "cpu load " + state_.candidate_version, "failed: serving '" + serving + "'");
    return false;
  }
  state_.phase = DeployPhase::PHASE2_TRANSITION;
  persist();
  note(report, "cpu switch to " + state_.candidate_version, "ok");
  return true;
}

bool Deployer::wait_drained(const std::string& version, DeployReport& report) {
  const auto start = std::chrono::steady_clock::now();
  while (true) {
    const nlohmann::json status = call(options_.gpu_leaf, {{"op", "status"}});
    bool installed = false;
    for (const auto& v : status.value("versions", nlohmann::json::array()))
      installed |= v.get<std::string>() == version;
    if (!installed) return true;  // already gone

    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
            .count();
    std::int64_t silent_ms = -1;
    if (status.contains("scored_ms_ago") && status["scored_ms_ago"].contains(version))
      silent_ms = status["scored_ms_ago"][version].get<std::int64_t>();
    if (silent_ms < 0) silent_ms = elapsed;  // never scored since install
    if (silent_ms >= options_.drain_window_ms) return true;
    if (elapsed > options_.drain_timeout_ms) {
      note(report, "drain " + version, "timeout: old-version traffic still present");
      return false;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(options_.poll_ms));
  }
}

bool Deployer::run_phase3(DeployReport& report, std::string drain_version,
                          std::string next_stable) {
  state_.phase = DeployPhase::PHASE3_CLEANUP;
  persist();
  if (!drain_version.empty()) {
    if (!wait_drained(drain_version, report)) return false;  // stays in PHASE3_CLEANUP
    const nlohmann::json status = call(options_.gpu_leaf, {{"op", "status"}});
    bool installed = false;
    for (const auto& v : status.value("versions", nlohmann::json::array()))
      installed |= v.get<std::string>() == drain_version;
    if (installed) {
      nlohmann::json response =
          call(options_.gpu_leaf, {{"op", "retire_model"}, {"version_id", drain_version}});
      if (response.contains("error")) {
        note(report, "gpu retire " + drain_version,
             "failed: " + response["error"].value("message", ""));
        return false;
      }
    }
    note(report, "gpu retire " + drain_version, "ok");
  }
  state_.phase = DeployPhase::STEADY;
  state_.stable_version = next_stable;
  if (next_stable == state_.candidate_version)
    state_.stable_cpu_dir = (std::filesystem::path(state_.candidate_dir) / "cpu").string();
  state_.candidate_version.clear();
  state_.candidate_dir.clear();
  persist();
  note(report, "steady on " + next_stable, "ok");
  return true;
}

DeployReport Deployer::deploy(const std::filesystem::path& candidate_dir) {
  LockFile lock(options_.state_path.string() + ".lock");
  DeployReport report;

  if (state_.phase != DeployPhase::STEADY) {
    note(report, "deploy", "refused: not in steady state (resume or rollback first)");
    report.final_phase = deploy_phase_name(state_.phase);
    return report;
  }

  // Pairing check before anything touches the services.
  std::string candidate_version;
  try {
    const UpperModel gpu_model = UpperModel::load(candidate_dir / "upper_model.json");
    const auto cpu_model = load_embedding_model(candidate_dir / "cpu");
    if (gpu_model.version_id != cpu_model->version_id) {
      note(report, "pair check",
           "paired_version_mismatch: gpu '" + gpu_model.version_id + "' vs cpu '" +
               cpu_model->version_id + "'");
      report.final_phase = deploy_phase_name(state_.phase);
      return report;
    }
    candidate_version = gpu_model.version_id;
  } catch (const std::exception& e) {
    note(report, "pair check", std::string("failed: ") + e.what());
    report.final_phase = deploy_phase_name(state_.phase);
    return report;
  }
  if (candidate_version == state_.stable_version) {
    note(report, "pair check", "refused: candidate version equals stable version");
    report.final_phase = deploy_phase_name(state_.phase);
    return report;
  }

  state_.candidate_version = candidate_version;
  state_.candidate_dir = candidate_dir.string();
  persist();
  note(report, "deploy " + candidate_version, "started");

  const std::string old_stable = state_.stable_version;

  if (!run_phase1(report)) {
    state_.phase = DeployPhase::STEADY;
    state_.candidate_version.clear();
    state_.candidate_dir.clear();
    persist();
    report.final_phase = deploy_phase_name(state_.phase);
    return report;
  }
  if (stop_after_phase_ == 1) {
    report.final_phase = deploy_phase_name(state_.phase);
    report.success = true;
    return report;
  }

  if (!run_phase2(report)) {
    // CPU switch failed: retire the never-activated candidate from the gpu
    // leaf and stay consistently on stable.
    nlohmann::json response =
        call(options_.gpu_leaf, {{"op", "retire_model"}, {"version_id", candidate_version}});
    note(report, "rollback gpu retire " + candidate_version,
         response.contains("error") ? "failed: " + response["error"].value("message", "") : "ok");
    state_.phase = DeployPhase::STEADY;
    state_.candidate_version.clear();
    state_.candidate_dir.clear();
    persist();
    report.final_phase = deploy_phase_name(state_.phase);
    return report;
  }
  if (stop_after_phase_ == 2) {
    report.final_phase = deploy_phase_name(state_.phase);
    report.success = true;
    return report;
  }

  report.success = run_phase3(report, old_stable, candidate_version);
  report.final_phase = deploy_phase_name(state_.phase);
  return report;
}

DeployReport Deployer::rollback() {
  LockFile lock(options_.state_path.string() + ".lock");
  DeployReport report;

  switch (state_.phase) {
    case DeployPhase::STEADY:
      note(report, "rollback", "no-op: already steady");
      report.success = true;
      break;

    case DeployPhase::PHASE1_GPU_DEPLOYED: {
      // Candidate never served; retire it from the gpu leaf and stop.
      const std::string candidate = state_.candidate_version;
      nlohmann::json response =
          call(options_.gpu_leaf, {{"op", "retire_model"}, {"version_id", candidate}});
      note(report, "gpu retire " + candidate,
           response.contains("error") ? "failed: " + response["error"].value("message", "") : "ok");
      state_.phase = DeployPhase::STEADY;
      state_.candidate_version.clear();
      state_.candidate_dir.clear();
      persist();
      note(report, "steady on " + state_.stable_version, "ok");
      report.success = true;
      break;
    }

    case DeployPhase::PHASE2_TRANSITION:
    case DeployPhase::PHASE3_CLEANUP: {
      // Reload the stable embedding model, then drain and retire the
      // candidate from the gpu leaf; traffic only ever names versions the
      // gpu leaf can score.
      const std::string candidate = state_.candidate_version;
      if (state_.stable_cpu_dir.empty()) {
        note(report, "rollback", "failed: no stable cpu dir recorded");
        break;
      }
      nlohmann::json response =
          call(options_.cpu_leaf, {{"op", "load_model"}, {"path", state_.stable_cpu_dir}});
      if (response.contains("error")) {
        note(report, "cpu reload " + state_.stable_version,
             "failed: " + response["error"].value("message", ""));
        break;
      }
      note(report, "cpu reload " + state_.stable_version, "ok");
      state_.phase = DeployPhase::PHASE3_CLEANUP;
      persist();
      if (!wait_drained(candidate, report)) break;
      nlohmann::json retire =
          call(options_.gpu_leaf, {{"op", "retire_model"}, {"version_id", candidate}});
      note(report, "gpu retire " + candidate,
           retire.contains("error") ? "failed: " + retire["error"].value("message", "") : "ok");
      if (retire.contains("error")) break;
      state_.phase = DeployPhase::STEADY;
      state_.candidate_version.clear();
      state_.candidate_dir.clear();
      persist();
      note(report, "steady on " + state_.stable_version, "ok");
      report.success = true;
      break;
    }
  }
  report.final_phase = deploy_phase_name(state_.phase);
  return report;
}

DeployReport Deployer::resume() {
  DeployReport report;
  switch (state_.phase) {
    case DeployPhase::STEADY:
      note(report, "resume", "no-op: steady");
      report.success = true;
      report.final_phase = deploy_phase_name(state_.phase);
      return report;

    case DeployPhase::PHASE1_GPU_DEPLOYED: {
      LockFile lock(options_.state_path.string() + ".lock");
      note(report, "resume from phase1", "continuing");
      const std::string old_stable = state_.stable_version;
      if (run_phase2(report))
        report.success = run_phase3(report, old_stable, state_.candidate_version);
      report.final_phase = deploy_phase_name(state_.phase);
      return report;
    }

    case DeployPhase::PHASE2_TRANSITION:
    case DeployPhase::PHASE3_CLEANUP: {
      LockFile lock(options_.state_path.string() + ".lock");
      note(report, "resume from " + std::string(deploy_phase_name(state_.phase)), "continuing");
      // Ensure the cpu leaf actually serves the candidate (it may have
      // restarted on the stable model mid-transition).
      if (!run_phase2(report)) {
        report.final_phase = deploy_phase_name(state_.phase);
        return report;
      }
      report.success = run_phase3(report, state_.stable_version, state_.candidate_version);
      report.final_phase = deploy_phase_name(state_.phase);
      return report;
    }
  }
  report.final_phase = deploy_phase_name(state_.phase);
  return report;
}

}  // namespace embrank
