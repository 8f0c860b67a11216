#include "embrank/harness.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "embrank/ads_server.hpp"
#include "embrank/cpu_leaf.hpp"
#include "embrank/deployer.hpp"
#include "embrank/errors.hpp"
#include "embrank/gpu_leaf.hpp"
#include "embrank/metrics.hpp"
#include "embrank/quant.hpp"
#include "embrank/shard.hpp"
#include "embrank/table_io.hpp"

namespace embrank {

namespace {

using Clock = std::chrono::steady_clock;

std::filesystem::path fresh_workdir(const std::string& tag) {
  static std::atomic<std::uint64_t> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("embrank_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(dir);
  return dir;
}

EmbeddingTable random_table(const std::string& table_id, const std::string& version_id,
                            const ArtifactSpec& spec, std::uint64_t seed) {
  EmbeddingTable t = EmbeddingTable::random_init(table_id, version_id, spec.rows, spec.dim, seed);
  if (spec.dtype == Dtype::INT4Q) return quantize_int4(t, spec.group_size);
  return t;
}

}  // namespace

ArtifactSpec ArtifactSpec::from_json(const nlohmann::json& j) {
  ArtifactSpec spec;
  if (j.contains("tables")) spec.tables = j.at("tables").get<std::vector<std::string>>();
  if (j.contains("dim")) spec.dim = j.at("dim").get<std::uint32_t>();
  if (j.contains("rows")) spec.rows = j.at("rows").get<std::uint64_t>();
  if (j.contains("dense_dim")) spec.dense_dim = j.at("dense_dim").get<std::uint32_t>();
  if (j.contains("dtype")) {
    const std::string d = j.at("dtype").get<std::string>();
    if (d == "f32")
      spec.dtype = Dtype::F32;
    else if (d == "int4q")
      spec.dtype = Dtype::INT4Q;
    else
      throw ConfigError("artifacts.dtype must be f32|int4q");
  }
  if (j.contains("group_size")) spec.group_size = j.at("group_size").get<std::uint32_t>();
  if (j.contains("shards")) spec.shards = j.at("shards").get<std::uint32_t>();
  if (j.contains("head")) spec.head = j.at("head").get<std::string>();
  if (spec.tables.empty()) throw ConfigError("artifacts.tables must not be empty");
  return spec;
}

std::vector<VersionArtifacts> make_artifacts(const std::filesystem::path& root,
                                             std::uint32_t num_versions, const ArtifactSpec& spec,
                                             std::uint64_t seed) {
  std::vector<VersionArtifacts> out;
  for (std::uint32_t k = 1; k <= num_versions; ++k) {
    VersionArtifacts art;
    art.version_id = "v" + std::to_string(k);
    art.dir = root / art.version_id;
    const auto cpu_dir = art.dir / "cpu";
    std::filesystem::create_directories(cpu_dir);

    nlohmann::json tables_manifest = nlohmann::json::object();
    std::uint32_t table_index = 0;
    for (const std::string& name : spec.tables) {
      EmbeddingTable table = random_table(
          name, art.version_id, spec, derive_seed(seed, k * 1000 + table_index));
      if (spec.shards > 1) {
        ShardPlan plan = plan_shards(spec.rows, spec.dim, table.row_stride_bytes(),
                                     (table.payload_bytes() + spec.shards - 1) / spec.shards,
                                     ShardStrategy::CONTIGUOUS);
        write_shard_set(cpu_dir, table, plan);
        nlohmann::json shard_files = nlohmann::json::array();
        for (std::uint32_t s = 0; s < plan.num_shards; ++s)
          shard_files.push_back(name + ".shard" + std::to_string(s) + ".pemb");
        tables_manifest[name] = {{"plan", name + ".plan.json"}, {"shards", shard_files}};
      } else {
        write_pemb(cpu_dir / (name + ".pemb"), table);
        tables_manifest[name] = name + ".pemb";
      }
      ++table_index;
    }
    {
      std::ofstream out_manifest(cpu_dir / "manifest.json");
      out_manifest << nlohmann::json{{"version_id", art.version_id}, {"tables", tables_manifest}}
                          .dump(2)
                   << "\n";
    }

    UpperModel model;
    model.version_id = art.version_id;
    model.head_kind = spec.head == "cvr" ? HeadKind::CVR : HeadKind::CTR;
    for (const std::string& name : spec.tables) model.layout.emplace_back(name, spec.dim);
    model.dense_dim = spec.dense_dim;
    Rng rng(derive_seed(seed, k * 1000 + 777));
    const std::size_t num_heads = model.head_kind == HeadKind::CTR ? 1 : 2;
    for (std::size_t h = 0; h < num_heads; ++h) {
      UpperModel::Head head;
      head.weights.resize(model.input_dim());
      for (float& w : head.weights) w = static_cast<float>(rng.normal(0.0, 0.3));
      head.bias = static_cast<float>(rng.normal(0.0, 0.1));
      model.heads.push_back(std::move(head));
    }
    model.fingerprint = model_fingerprint(model);
    model.save(art.dir / "upper_model.json");
    art.fingerprint = model.fingerprint;
    out.push_back(std::move(art));
  }
  return out;
}

ScenarioConfig ScenarioConfig::from_json(const nlohmann::json& j) {
  ScenarioConfig cfg;
  try {
    if (j.contains("mode")) cfg.mode = j.at("mode").get<std::string>();
    if (cfg.mode != "inproc" && cfg.mode != "subprocess")
      throw ConfigError("/mode: must be inproc|subprocess");
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("versions")) cfg.versions = j.at("versions").get<std::uint32_t>();
    if (j.contains("artifacts")) cfg.artifacts = ArtifactSpec::from_json(j.at("artifacts"));
    if (j.contains("traffic")) {
      const auto& t = j.at("traffic");
      if (t.contains("requests")) cfg.traffic.requests = t.at("requests").get<std::uint32_t>();
      if (t.contains("concurrency")) cfg.traffic.concurrency = t.at("concurrency").get<std::uint32_t>();
      if (t.contains("ids_per_table"))
        cfg.traffic.ids_per_table = t.at("ids_per_table").get<std::uint32_t>();
      if (t.contains("sim_other_ms")) cfg.traffic.sim_other_ms = t.at("sim_other_ms").get<int>();
      if (t.contains("head")) cfg.traffic.head = t.at("head").get<std::string>();
      if (t.contains("timeout_ms")) cfg.traffic.timeout_ms = t.at("timeout_ms").get<int>();
      if (cfg.traffic.concurrency == 0 || cfg.traffic.requests == 0)
        throw ConfigError("/traffic: requests and concurrency must be positive");
    }
    if (j.contains("links")) {
      const auto& links = j.at("links");
      if (links.contains("cpu")) cfg.cpu_link = LinkConfig::from_json(links.at("cpu"));
      if (links.contains("gpu")) cfg.gpu_link = LinkConfig::from_json(links.at("gpu"));
    }
    if (j.contains("deployer")) {
      const auto& d = j.at("deployer");
      if (d.contains("drain_window_ms")) cfg.drain_window_ms = d.at("drain_window_ms").get<int>();
      if (d.contains("poll_ms")) cfg.poll_ms = d.at("poll_ms").get<int>();
      if (d.contains("drain_timeout_ms")) cfg.drain_timeout_ms = d.at("drain_timeout_ms").get<int>();
    }
    if (j.contains("binary")) cfg.binary = j.at("binary").get<std::string>();
    if (j.contains("workdir")) cfg.workdir = j.at("workdir").get<std::string>();
    if (j.contains("events")) {
      for (std::size_t i = 0; i < j.at("events").size(); ++i) {
        const auto& e = j.at("events").at(i);
        ScenarioEvent ev;
        ev.at_request = e.at("at_request").get<std::uint64_t>();
        ev.action = e.at("action").get<std::string>();
        if (e.contains("candidate")) ev.candidate = e.at("candidate").get<std::uint32_t>();
        if (e.contains("until_phase")) ev.until_phase = e.at("until_phase").get<int>();
        if (e.contains("service")) ev.service = e.at("service").get<std::string>();
        const bool known = ev.action == "deploy" || ev.action == "deploy_partial" ||
                           ev.action == "rollback" || ev.action == "resume" ||
                           ev.action == "crash" || ev.action == "restart";
        if (!known)
          throw ConfigError("/events/" + std::to_string(i) + "/action: unknown '" + ev.action + "'");
        if ((ev.action == "deploy" || ev.action == "deploy_partial") &&
            (ev.candidate == 0 || ev.candidate > cfg.versions))
          throw ConfigError("/events/" + std::to_string(i) + "/candidate: out of range");
        if (ev.at_request > cfg.traffic.requests)
          throw ConfigError("/events/" + std::to_string(i) + "/at_request: beyond traffic.requests");
        cfg.events.push_back(std::move(ev));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario config: ") + e.what());
  }
  return cfg;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario json: " + std::string(e.what()));
  }
  return from_json(j);
}

namespace {

// ---- service processes -----------------------------------------------------

std::uint16_t pick_free_port() {
  wire::Server probe({"127.0.0.1", 0}, [](const nlohmann::json&) { return nlohmann::json{}; });
  const std::uint16_t port = probe.port();
  return port;
}

// One service endpoint the scenario can crash and restart, backed either by
// in-process objects or by a spawned CLI subprocess.
class ServiceHandle {
 public:
  virtual ~ServiceHandle() = default;
  virtual wire::Addr addr() const = 0;
  virtual void crash() = 0;
  virtual void restart(const std::string& boot_dir) = 0;
};

class InprocCpu : public ServiceHandle {
 public:
  InprocCpu(std::uint16_t port, const std::string& boot_dir) : port_(port) { boot(boot_dir); }
  wire::Addr addr() const override { return {"127.0.0.1", port_}; }
  void crash() override {
    server_.reset();
    leaf_.reset();
  }
  void restart(const std::string& boot_dir) override { boot(boot_dir); }

 private:
  void boot(const std::string& boot_dir) {
    leaf_ = std::make_unique<CpuLeaf>();
    leaf_->load_model(boot_dir);
    server_ = std::make_unique<wire::Server>(
        wire::Addr{"127.0.0.1", port_},
        [this](const nlohmann::json& req) { return leaf_->handle(req); });
  }
  std::uint16_t port_;
  std::unique_ptr<CpuLeaf> leaf_;
  std::unique_ptr<wire::Server> server_;
};

class InprocGpu : public ServiceHandle {
 public:
  InprocGpu(std::uint16_t port, const std::string& boot_model) : port_(port) { boot(boot_model); }
  wire::Addr addr() const override { return {"127.0.0.1", port_}; }
  void crash() override {
    server_.reset();
    leaf_.reset();
  }
  void restart(const std::string& boot_model) override { boot(boot_model); }

 private:
  void boot(const std::string& boot_model) {
    leaf_ = std::make_unique<GpuLeaf>(2);
    leaf_->install_model(std::filesystem::path(boot_model));
    server_ = std::make_unique<wire::Server>(
        wire::Addr{"127.0.0.1", port_},
        [this](const nlohmann::json& req) { return leaf_->handle(req); });
  }
  std::uint16_t port_;
  std::unique_ptr<GpuLeaf> leaf_;
  std::unique_ptr<wire::Server> server_;
};

class SubprocessService : public ServiceHandle {
 public:
  SubprocessService(std::string binary, std::vector<std::string> args, std::uint16_t port,
                    std::filesystem::path log_path)
      : binary_(std::move(binary)), args_(std::move(args)), port_(port), log_path_(std::move(log_path)) {
    spawn();
    wait_ready();
  }
  ~SubprocessService() override { terminate(); }

  wire::Addr addr() const override { return {"127.0.0.1", port_}; }

  void crash() override {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  void restart(const std::string& boot_dir) override {
    terminate();
    // The boot model path is the final argument by construction.
    args_.back() = boot_dir;
    spawn();
    wait_ready();
  }

 private:
  void spawn() {
    const pid_t pid = ::fork();
    if (pid < 0) throw Error("fork failed");
    if (pid == 0) {
      if (!::freopen(log_path_.c_str(), "a", stdout)) _exit(126);
      if (!::freopen(log_path_.c_str(), "a", stderr)) _exit(126);
      std::vector<char*> argv;
      argv.push_back(const_cast<char*>(binary_.c_str()));
      for (auto& a : args_) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      ::execv(binary_.c_str(), argv.data());
      _exit(127);
    }
    pid_ = pid;
  }

  void wait_ready() {
    const auto deadline = Clock::now() + std::chrono::seconds(10);
    while (Clock::now() < deadline) {
      try {
        wire::Client probe(addr(), 500);
        const nlohmann::json status = probe.call({{"op", "status"}, {"request_id", "ready"}});
        if (!status.contains("error")) return;
      } catch (const wire::WireError&) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    throw Error("subprocess service on port " + std::to_string(port_) + " never became ready");
  }

  void terminate() {
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      for (int i = 0; i < 50; ++i) {
        int status = 0;
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  std::string binary_;
  std::vector<std::string> args_;
  std::uint16_t port_;
  std::filesystem::path log_path_;
  pid_t pid_ = -1;
};

struct LoadStats {
  std::uint64_t issued = 0;
  std::uint64_t ok = 0;
  std::map<std::string, std::uint64_t> errors;
  std::uint64_t fingerprint_mismatches = 0;
  std::set<std::string> versions_observed;
  std::vector<double> latencies_ms;
};

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config) {
  const auto t_start = Clock::now();
  const std::filesystem::path workdir =
      config.workdir.empty() ? fresh_workdir("scenario") : config.workdir;
  std::filesystem::create_directories(workdir);

  const std::vector<VersionArtifacts> artifacts =
      make_artifacts(workdir / "artifacts", config.versions, config.artifacts, config.seed);
  std::map<std::string, std::string> fingerprints;
  for (const auto& art : artifacts) fingerprints[art.version_id] = art.fingerprint;

  // Services (direct ports) and the simnet proxies the orchestrator dials.
  const std::uint16_t cpu_port = pick_free_port();
  const std::uint16_t gpu_port = pick_free_port();
  std::unique_ptr<ServiceHandle> cpu, gpu;
  const std::string v1_cpu_dir = (artifacts[0].dir / "cpu").string();
  const std::string v1_gpu_model = (artifacts[0].dir / "upper_model.json").string();

  std::string binary = config.binary;
  if (config.mode == "subprocess" && binary.empty()) {
    const char* env = std::getenv("EMBRANK_BIN");
    if (env) binary = env;
    if (binary.empty()) throw ConfigError("subprocess mode needs /binary or $EMBRANK_BIN");
  }

  if (config.mode == "subprocess") {
    cpu = std::make_unique<SubprocessService>(
        binary,
        std::vector<std::string>{"serve-cpu", "--listen", "127.0.0.1:" + std::to_string(cpu_port),
                                 "--model-dir", v1_cpu_dir},
        cpu_port, workdir / "cpu_leaf.log");
    gpu = std::make_unique<SubprocessService>(
        binary,
        std::vector<std::string>{"serve-gpu", "--listen", "127.0.0.1:" + std::to_string(gpu_port),
                                 "--model", v1_gpu_model},
        gpu_port, workdir / "gpu_leaf.log");
  } else {
    cpu = std::make_unique<InprocCpu>(cpu_port, v1_cpu_dir);
    gpu = std::make_unique<InprocGpu>(gpu_port, v1_gpu_model);
  }

  SimNetProxy cpu_proxy(cpu->addr(), config.cpu_link, derive_seed(config.seed, 101));
  SimNetProxy gpu_proxy(gpu->addr(), config.gpu_link, derive_seed(config.seed, 102));

  AdsServerConfig ads_config;
  ads_config.cpu_leaf = cpu_proxy.addr();
  ads_config.gpu_leaf = gpu_proxy.addr();
  ads_config.upstream_timeout_ms = config.traffic.timeout_ms;
  AdsServer ads(ads_config);
  wire::Server ads_endpoint({"127.0.0.1", 0},
                            [&ads](const nlohmann::json& req) { return ads.handle(req); });

  // Deployment control plane: state seeded so the first rollback/resume can
  // find the stable release.
  const std::filesystem::path state_path = workdir / "deploy_state.json";
  DeployerOptions deploy_options;
  deploy_options.cpu_leaf = cpu->addr();
  deploy_options.gpu_leaf = gpu->addr();
  deploy_options.state_path = state_path;
  deploy_options.drain_window_ms = config.drain_window_ms;
  deploy_options.poll_ms = config.poll_ms;
  deploy_options.drain_timeout_ms = config.drain_timeout_ms;
  {
    DeployState initial;
    initial.phase = DeployPhase::STEADY;
    initial.stable_version = artifacts[0].version_id;
    initial.stable_cpu_dir = v1_cpu_dir;
    initial.cpu_addr = cpu->addr().str();
    initial.gpu_addr = gpu->addr().str();
    std::ofstream out(state_path);
    out << initial.to_json().dump(2) << "\n";
  }

  // Load generation.
  std::atomic<std::uint64_t> completed{0};
  std::mutex stats_mutex;
  LoadStats stats;
  const std::uint32_t threads_n = config.traffic.concurrency;
  std::vector<std::thread> load_threads;

  auto worker = [&](std::uint32_t tid, std::uint32_t count) {
    Rng rng(derive_seed(config.seed, 200 + tid));
    LoadStats local;
    std::unique_ptr<wire::Client> client;
    for (std::uint32_t i = 0; i < count; ++i) {
      nlohmann::json ids = nlohmann::json::object();
      for (const auto& table : config.artifacts.tables) {
        std::vector<EntityId> list;
        for (std::uint32_t k = 0; k < config.traffic.ids_per_table; ++k)
          list.push_back(rng.next_u64());
        ids[table] = list;
      }
      std::vector<float> dense(config.artifacts.dense_dim);
      for (float& v : dense) v = static_cast<float>(rng.normal());
      const nlohmann::json request = {{"op", "infer"},
                                      {"request_id", "r" + std::to_string(tid) + "-" + std::to_string(i)},
                                      {"ids", ids},
                                      {"dense", dense},
                                      {"head", config.traffic.head},
                                      {"sim_other_ms", config.traffic.sim_other_ms}};
      ++local.issued;
      try {
        if (!client)
          client = std::make_unique<wire::Client>(ads_endpoint.addr(), config.traffic.timeout_ms);
        const nlohmann::json response = client->call(request);
        if (response.contains("error")) {
          ++local.errors[response["error"].value("code", "internal")];
        } else {
          ++local.ok;
          const std::string version = response.value("version_id", "");
          local.versions_observed.insert(version);
          const auto it = fingerprints.find(version);
          if (it == fingerprints.end() || it->second != response.value("fingerprint", ""))
            ++local.fingerprint_mismatches;
          local.latencies_ms.push_back(response.at("timing").value("total_ms", 0.0));
        }
      } catch (const wire::WireTimeout&) {
        ++local.errors["client_timeout"];
        client.reset();
      } catch (const wire::WireError&) {
        ++local.errors["client_transport"];
        client.reset();
      }
      completed.fetch_add(1);
    }
    std::lock_guard lock(stats_mutex);
    stats.issued += local.issued;
    stats.ok += local.ok;
    for (const auto& [code, n] : local.errors) stats.errors[code] += n;
    stats.fingerprint_mismatches += local.fingerprint_mismatches;
    stats.versions_observed.insert(local.versions_observed.begin(), local.versions_observed.end());
    stats.latencies_ms.insert(stats.latencies_ms.end(), local.latencies_ms.begin(),
                              local.latencies_ms.end());
  };

  const std::uint32_t base_count = config.traffic.requests / threads_n;
  const std::uint32_t remainder = config.traffic.requests % threads_n;
  for (std::uint32_t t = 0; t < threads_n; ++t)
    load_threads.emplace_back(worker, t, base_count + (t < remainder ? 1 : 0));

  // Event execution, strictly in order, gated on the completed-request count.
  std::vector<nlohmann::json> deployment_reports;
  std::vector<nlohmann::json> event_log;
  std::thread event_thread([&] {
    std::vector<ScenarioEvent> events = config.events;
    std::stable_sort(events.begin(), events.end(),
                     [](const ScenarioEvent& a, const ScenarioEvent& b) {
                       return a.at_request < b.at_request;
                     });
    for (const auto& event : events) {
      while (completed.load() < event.at_request)
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      nlohmann::json entry = {{"action", event.action}, {"at_request", event.at_request}};
      try {
        if (event.action == "deploy" || event.action == "deploy_partial") {
          Deployer deployer(deploy_options);
          if (event.action == "deploy_partial") deployer.set_stop_after_phase(event.until_phase);
          const DeployReport report = deployer.deploy(artifacts[event.candidate - 1].dir);
          deployment_reports.push_back(report.to_json());
          entry["success"] = report.success;
        } else if (event.action == "rollback") {
          Deployer deployer(deploy_options);
          const DeployReport report = deployer.rollback();
          deployment_reports.push_back(report.to_json());
          entry["success"] = report.success;
        } else if (event.action == "resume") {
          Deployer deployer(deploy_options);
          const DeployReport report = deployer.resume();
          deployment_reports.push_back(report.to_json());
          entry["success"] = report.success;
        } else if (event.action == "crash") {
          (event.service == "gpu" ? gpu : cpu)->crash();
          entry["success"] = true;
        } else if (event.action == "restart") {
          if (event.service == "gpu") {
            gpu->restart(v1_gpu_model);
          } else {
            // Boot from the stable release recorded in the deploy state.
            std::string boot_dir = v1_cpu_dir;
            std::ifstream in(state_path);
            if (in) {
              nlohmann::json j;
              in >> j;
              const std::string recorded = j.value("stable_cpu_dir", "");
              if (!recorded.empty()) boot_dir = recorded;
            }
            cpu->restart(boot_dir);
          }
          entry["success"] = true;
        }
      } catch (const std::exception& e) {
        entry["success"] = false;
        entry["error"] = e.what();
      }
      event_log.push_back(std::move(entry));
    }
  });

  for (auto& t : load_threads) t.join();
  event_thread.join();

  const nlohmann::json ads_metrics = ads.metrics().snapshot();

  // Final control-plane state.
  std::string final_phase = "unknown", final_stable;
  {
    std::ifstream in(state_path);
    if (in) {
      nlohmann::json j;
      in >> j;
      final_phase = j.value("phase", "unknown");
      final_stable = j.value("stable_version", "");
    }
  }
  std::string cpu_serving, gpu_versions_joined;
  try {
    wire::Client probe(cpu->addr(), 2000);
    cpu_serving = probe.call({{"op", "status"}, {"request_id", "final"}}).value("version_id", "");
  } catch (const wire::WireError&) {
  }
  try {
    wire::Client probe(gpu->addr(), 2000);
    const auto status = probe.call({{"op", "status"}, {"request_id", "final"}});
    for (const auto& v : status.value("versions", nlohmann::json::array())) {
      if (!gpu_versions_joined.empty()) gpu_versions_joined += ",";
      gpu_versions_joined += v.get<std::string>();
    }
  } catch (const wire::WireError&) {
  }

  ScenarioResult result;
  nlohmann::json errors = nlohmann::json::object();
  std::uint64_t error_total = 0;
  for (const auto& [code, n] : stats.errors) {
    errors[code] = n;
    error_total += n;
  }
  result.deterministic = {
      {"requests", stats.issued},
      {"ok", stats.ok},
      {"errors", errors},
      {"error_total", error_total},
      {"conservation_holds", stats.issued == stats.ok + error_total},
      {"version_mismatch_count", ads_metrics.value("version_mismatch_count", 0ull)},
      {"fingerprint_mismatches", stats.fingerprint_mismatches},
      {"versions_observed", std::vector<std::string>(stats.versions_observed.begin(),
                                                     stats.versions_observed.end())},
      {"final_phase", final_phase},
      {"final_stable_version", final_stable},
      {"cpu_serving", cpu_serving},
      {"gpu_versions", gpu_versions_joined},
  };
  result.measured = {
      {"latency_ms",
       {{"p50", quantile(stats.latencies_ms, 0.5)}, {"p99", quantile(stats.latencies_ms, 0.99)}}},
      {"wall_ms", std::chrono::duration<double, std::milli>(Clock::now() - t_start).count()},
      {"deployments", deployment_reports},
      {"events", event_log},
      {"ads_metrics", ads_metrics},
      {"proxy", {{"cpu_forwarded", cpu_proxy.forwarded()}, {"cpu_dropped", cpu_proxy.dropped()},
                 {"gpu_forwarded", gpu_proxy.forwarded()}, {"gpu_dropped", gpu_proxy.dropped()}}},
      {"workdir", workdir.string()},
  };
  return result;
}

BenchConfig BenchConfig::from_json(const nlohmann::json& j) {
  BenchConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("artifacts")) cfg.artifacts = ArtifactSpec::from_json(j.at("artifacts"));
  if (j.contains("links")) {
    const auto& links = j.at("links");
    if (links.contains("cpu")) cfg.cpu_link = LinkConfig::from_json(links.at("cpu"));
    if (links.contains("gpu")) cfg.gpu_link = LinkConfig::from_json(links.at("gpu"));
  }
  if (j.contains("sim_other_ms")) cfg.sim_other_ms = j.at("sim_other_ms").get<int>();
  if (j.contains("requests")) cfg.requests = j.at("requests").get<std::uint32_t>();
  if (j.contains("concurrency")) cfg.concurrency = j.at("concurrency").get<std::uint32_t>();
  if (j.contains("timeout_ms")) cfg.timeout_ms = j.at("timeout_ms").get<int>();
  return cfg;
}

BenchConfig BenchConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bench config: " + path.string());
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

BenchResult bench_latency(const BenchConfig& config) {
  const std::filesystem::path workdir = fresh_workdir("bench");
  const auto artifacts = make_artifacts(workdir / "artifacts", 1, config.artifacts, config.seed);

  CpuLeaf cpu_leaf;
  cpu_leaf.load_model(artifacts[0].dir / "cpu");
  wire::Server cpu_server({"127.0.0.1", 0},
                          [&](const nlohmann::json& req) { return cpu_leaf.handle(req); });
  GpuLeaf gpu_leaf(2);
  gpu_leaf.install_model(artifacts[0].dir / "upper_model.json");
  wire::Server gpu_server({"127.0.0.1", 0},
                          [&](const nlohmann::json& req) { return gpu_leaf.handle(req); });

  auto run_mode = [&](bool sequential) -> std::vector<double> {
    // Fresh proxies per mode with identical seeds, so both modes face the
    // same latency draw sequences.
    SimNetProxy cpu_proxy(cpu_server.addr(), config.cpu_link, derive_seed(config.seed, 11));
    SimNetProxy gpu_proxy(gpu_server.addr(), config.gpu_link, derive_seed(config.seed, 12));
    AdsServerConfig ads_config;
    ads_config.cpu_leaf = cpu_proxy.addr();
    ads_config.gpu_leaf = gpu_proxy.addr();
    ads_config.sequential = sequential;
    ads_config.upstream_timeout_ms = config.timeout_ms;
    AdsServer ads(ads_config);
    wire::Server ads_endpoint({"127.0.0.1", 0},
                              [&](const nlohmann::json& req) { return ads.handle(req); });

    std::mutex mutex;
    std::vector<double> latencies;
    std::vector<std::thread> threads;
    const std::uint32_t per_thread = config.requests / config.concurrency;
    for (std::uint32_t t = 0; t < config.concurrency; ++t) {
      threads.emplace_back([&, t] {
        Rng rng(derive_seed(config.seed, 300 + t));
        wire::Client client(ads_endpoint.addr(), config.timeout_ms);
        std::vector<double> local;
        for (std::uint32_t i = 0; i < per_thread; ++i) {
          nlohmann::json ids = nlohmann::json::object();
          for (const auto& table : config.artifacts.tables)
            ids[table] = std::vector<EntityId>{rng.next_u64()};
          std::vector<float> dense(config.artifacts.dense_dim, 0.5f);
          const nlohmann::json request = {
              {"op", "infer"},
              {"request_id", "b" + std::to_string(t) + "-" + std::to_string(i)},
              {"ids", ids},
              {"dense", dense},
              {"head", config.artifacts.head},
              {"sim_other_ms", config.sim_other_ms}};
          const nlohmann::json response = client.call(request);
          if (!response.contains("error"))
            local.push_back(response.at("timing").value("total_ms", 0.0));
        }
        std::lock_guard lock(mutex);
        latencies.insert(latencies.end(), local.begin(), local.end());
      });
    }
    for (auto& t : threads) t.join();
    return latencies;
  };

  const std::vector<double> parallel = run_mode(false);
  const std::vector<double> sequential = run_mode(true);

  BenchResult result;
  result.parallel_p50 = quantile(parallel, 0.5);
  result.parallel_p99 = quantile(parallel, 0.99);
  result.sequential_p50 = quantile(sequential, 0.5);
  result.sequential_p99 = quantile(sequential, 0.99);
  return result;
}

}  // namespace embrank
