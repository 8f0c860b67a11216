#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "embrank/cpu_leaf.hpp"
#include "embrank/deployer.hpp"
#include "embrank/gpu_leaf.hpp"
#include "embrank/harness.hpp"

using namespace embrank;

namespace {

struct ControlPlane {
  std::filesystem::path dir;
  std::vector<VersionArtifacts> artifacts;
  std::unique_ptr<CpuLeaf> cpu;
  std::unique_ptr<GpuLeaf> gpu;
  std::unique_ptr<wire::Server> cpu_server;
  std::unique_ptr<wire::Server> gpu_server;
  DeployerOptions options;

  explicit ControlPlane(int versions = 3) {
    static std::atomic<int> counter{0};
    dir = std::filesystem::temp_directory_path() /
          ("embrank_deploy_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    ArtifactSpec spec;
    spec.dim = 4;
    spec.rows = 64;
    artifacts = make_artifacts(dir, versions, spec, 81);
    cpu = std::make_unique<CpuLeaf>();
    cpu->load_model(artifacts[0].dir / "cpu");
    gpu = std::make_unique<GpuLeaf>(2);
    gpu->install_model(artifacts[0].dir / "upper_model.json");
    cpu_server = std::make_unique<wire::Server>(
        wire::Addr{"127.0.0.1", 0}, [this](const nlohmann::json& r) { return cpu->handle(r); });
    gpu_server = std::make_unique<wire::Server>(
        wire::Addr{"127.0.0.1", 0}, [this](const nlohmann::json& r) { return gpu->handle(r); });
    options.cpu_leaf = cpu_server->addr();
    options.gpu_leaf = gpu_server->addr();
    options.state_path = dir / "state.json";
    options.drain_window_ms = 60;
    options.poll_ms = 10;
    options.drain_timeout_ms = 5000;
    write_initial_state();
  }

  void write_initial_state() {
    DeployState initial;
    initial.phase = DeployPhase::STEADY;
    initial.stable_version = "v1";
    initial.stable_cpu_dir = (artifacts[0].dir / "cpu").string();
    std::ofstream out(options.state_path);
    out << initial.to_json().dump(2) << "\n";
  }
};

std::int64_t entry_ts(const nlohmann::json& report, const std::string& action_substr) {
  for (const auto& e : report["entries"])
    if (std::string(e["action"]).find(action_substr) != std::string::npos &&
        e["outcome"] == "ok")
      return e["timestamp_ms"].get<std::int64_t>();
  return -1;
}

}  // namespace

TEST_CASE("happy-path deploy runs the three phases in order and lands steady") {
  ControlPlane plane;
  Deployer deployer(plane.options);
  const DeployReport report = deployer.deploy(plane.artifacts[1].dir);
  const nlohmann::json j = report.to_json();
  INFO(j.dump(2));
  CHECK(report.success);
  CHECK(report.final_phase == "steady");
  CHECK(plane.cpu->current_version() == "v2");
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v2"});

  const std::int64_t p1 = entry_ts(j, "gpu install");
  const std::int64_t p2 = entry_ts(j, "cpu switch");
  const std::int64_t p3 = entry_ts(j, "gpu retire");
  REQUIRE(p1 >= 0);
  REQUIRE(p2 >= 0);
  REQUIRE(p3 >= 0);
  CHECK(p1 <= p2);
  CHECK(p2 <= p3);

  // State file reflects the new stable.
  Deployer after(plane.options);
  CHECK(after.state().phase == DeployPhase::STEADY);
  CHECK(after.state().stable_version == "v2");
}

TEST_CASE("missing candidate artifacts refuse before touching services") {
  ControlPlane plane;
  Deployer deployer(plane.options);
  const DeployReport report = deployer.deploy(plane.dir / "nonexistent");
  CHECK_FALSE(report.success);
  CHECK(plane.cpu->current_version() == "v1");
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1"});
  CHECK(deployer.state().phase == DeployPhase::STEADY);
}

TEST_CASE("paired version mismatch is refused before phase 1") {
  ControlPlane plane;
  // Candidate mixing v2 cpu tables with a v3 upper model.
  const auto frankendir = plane.dir / "mixed";
  std::filesystem::create_directories(frankendir);
  std::filesystem::copy(plane.artifacts[1].dir / "cpu", frankendir / "cpu",
                        std::filesystem::copy_options::recursive);
  std::filesystem::copy_file(plane.artifacts[2].dir / "upper_model.json",
                             frankendir / "upper_model.json");
  Deployer deployer(plane.options);
  const DeployReport report = deployer.deploy(frankendir);
  CHECK_FALSE(report.success);
  bool refused = false;
  const nlohmann::json j = report.to_json();
  for (const auto& e : j["entries"])
    refused |= std::string(e["outcome"]).find("paired_version_mismatch") != std::string::npos;
  CHECK(refused);
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1"});
}

TEST_CASE("deploying the stable version again is refused") {
  ControlPlane plane;
  Deployer deployer(plane.options);
  const DeployReport report = deployer.deploy(plane.artifacts[0].dir);
  CHECK_FALSE(report.success);
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1"});
}

TEST_CASE("rollback from phase 1 retires only the candidate") {
  ControlPlane plane;
  Deployer deployer(plane.options);
  deployer.set_stop_after_phase(1);
  CHECK(deployer.deploy(plane.artifacts[1].dir).success);
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1", "v2"});
  CHECK(plane.cpu->current_version() == "v1");

  Deployer roller(plane.options);
  const DeployReport report = roller.rollback();
  CHECK(report.success);
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1"});
  CHECK(plane.cpu->current_version() == "v1");
  CHECK(roller.state().phase == DeployPhase::STEADY);
}

TEST_CASE("rollback from phase 2 reloads stable then drains the candidate") {
  ControlPlane plane;
  Deployer deployer(plane.options);
  deployer.set_stop_after_phase(2);
  CHECK(deployer.deploy(plane.artifacts[1].dir).success);
  CHECK(plane.cpu->current_version() == "v2");

  Deployer roller(plane.options);
  const DeployReport report = roller.rollback();
  CHECK(report.success);
  CHECK(plane.cpu->current_version() == "v1");
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1"});
  CHECK(roller.state().phase == DeployPhase::STEADY);
  CHECK(roller.state().stable_version == "v1");
}

TEST_CASE("double rollback is a no-op") {
  ControlPlane plane;
  Deployer deployer(plane.options);
  deployer.set_stop_after_phase(1);
  deployer.deploy(plane.artifacts[1].dir);
  Deployer roller(plane.options);
  CHECK(roller.rollback().success);
  Deployer again(plane.options);
  const DeployReport second = again.rollback();
  CHECK(second.success);
  bool noop = false;
  const nlohmann::json j = second.to_json();
  for (const auto& e : j["entries"])
    noop |= std::string(e["outcome"]).find("no-op") != std::string::npos;
  CHECK(noop);
}

TEST_CASE("resume finishes a deployment interrupted after phase 1") {
  ControlPlane plane;
  {
    Deployer deployer(plane.options);
    deployer.set_stop_after_phase(1);
    CHECK(deployer.deploy(plane.artifacts[1].dir).success);
  }
  // A fresh episode picks up the persisted state and completes the rollout.
  Deployer resumer(plane.options);
  CHECK(resumer.state().phase == DeployPhase::PHASE1_GPU_DEPLOYED);
  const DeployReport report = resumer.resume();
  CHECK(report.success);
  CHECK(plane.cpu->current_version() == "v2");
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v2"});
  CHECK(resumer.state().phase == DeployPhase::STEADY);
  CHECK(resumer.state().stable_version == "v2");
}

TEST_CASE("resume after a cpu restart mid-phase-2 converges on the candidate") {
  ControlPlane plane;
  {
    Deployer deployer(plane.options);
    deployer.set_stop_after_phase(2);
    CHECK(deployer.deploy(plane.artifacts[1].dir).success);
  }
  // Simulated crash: the cpu leaf loses its in-memory model and reboots on
  // the stable release.
  plane.cpu_server.reset();
  plane.cpu = std::make_unique<CpuLeaf>();
  plane.cpu->load_model(plane.artifacts[0].dir / "cpu");
  plane.cpu_server = std::make_unique<wire::Server>(
      plane.options.cpu_leaf, [&plane](const nlohmann::json& r) { return plane.cpu->handle(r); });
  CHECK(plane.cpu->current_version() == "v1");

  Deployer resumer(plane.options);
  const DeployReport report = resumer.resume();
  CHECK(report.success);
  CHECK(plane.cpu->current_version() == "v2");
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v2"});
}

TEST_CASE("gpu leaf install failure aborts with the system untouched") {
  ControlPlane plane;
  // Corrupt the candidate upper model.
  {
    std::ofstream out(plane.artifacts[1].dir / "upper_model.json", std::ios::trunc);
    out << "{not json";
  }
  Deployer deployer(plane.options);
  const DeployReport report = deployer.deploy(plane.artifacts[1].dir);
  CHECK_FALSE(report.success);
  CHECK(plane.cpu->current_version() == "v1");
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1"});
  CHECK(deployer.state().phase == DeployPhase::STEADY);
}

TEST_CASE("only one deployer instance runs at a time") {
  ControlPlane plane;
  // Simulate a concurrent holder by pre-creating the lock file.
  std::ofstream(plane.options.state_path.string() + ".lock") << "held";
  Deployer deployer(plane.options);
  CHECK_THROWS_AS(deployer.deploy(plane.artifacts[1].dir), Unavailable);
  std::filesystem::remove(plane.options.state_path.string() + ".lock");
  CHECK(deployer.deploy(plane.artifacts[1].dir).success);
}

TEST_CASE("drain timeout with old-version traffic present never force-retires") {
  ControlPlane plane;
  plane.options.drain_window_ms = 400;
  plane.options.drain_timeout_ms = 900;

  // Old-version traffic that never stops: keep scoring v1 while deploying v2.
  std::atomic<bool> stop{false};
  std::thread old_traffic([&] {
    wire::Client client(plane.gpu_server->addr(), 2000);
    while (!stop.load()) {
      client.call({{"op", "score"},
                   {"request_id", "old"},
                   {"version_id", "v1"},
                   {"embeddings",
                    {{"user", nlohmann::json::array({std::vector<float>{1, 0, 0, 0}})},
                     {"pin", nlohmann::json::array({std::vector<float>{0, 1, 0, 0}})}}},
                   {"dense", std::vector<float>{0, 0}},
                   {"head", "ctr"}});
      std::this_thread::sleep_for(std::chrono::milliseconds(30));
    }
  });

  Deployer deployer(plane.options);
  const DeployReport report = deployer.deploy(plane.artifacts[1].dir);
  stop.store(true);
  old_traffic.join();

  CHECK_FALSE(report.success);
  CHECK(report.final_phase == "phase3_cleanup");
  // Both versions stay hosted; nothing was force-retired.
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v1", "v2"});
  CHECK(plane.cpu->current_version() == "v2");

  // Once the old traffic ceases, resume completes the cleanup.
  Deployer resumer(plane.options);
  const DeployReport finish = resumer.resume();
  CHECK(finish.success);
  CHECK(plane.gpu->versions() == std::vector<std::string>{"v2"});
}
