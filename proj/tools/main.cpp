#include <signal.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "embrank/ads_server.hpp"
#include "embrank/cpu_leaf.hpp"
#include "embrank/data_io.hpp"
#include "embrank/deployer.hpp"
#include "embrank/experiments.hpp"
#include "embrank/gpu_leaf.hpp"
#include "embrank/harness.hpp"
#include "embrank/quant.hpp"
#include "embrank/table_io.hpp"
#include "embrank/trainers.hpp"

namespace {

std::atomic<bool> g_shutdown{false};

void handle_signal(int) { g_shutdown.store(true); }

void serve_until_signal(const char* what, const embrank::wire::Addr& addr) {
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::cerr << what << " listening on " << addr.str() << "\n";
  while (!g_shutdown.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  std::cerr << what << " shutting down\n";
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw embrank::IoError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

embrank::TrainConfig config_from_file(const std::string& path) {
  if (path.empty()) return embrank::TrainConfig{};
  return embrank::train_config_from_json(read_json_file(path));
}

}  // namespace

int main(int argc, char** argv) {
  using namespace embrank;

  CLI::App app{"Pretrained large-embedding-table ranking stack"};
  app.require_subcommand(1);

  // quantize ------------------------------------------------------------
  std::string q_in, q_out;
  std::uint32_t q_group = 64;
  auto* quantize_cmd = app.add_subcommand("quantize", "INT4-quantize a PEMB table");
  quantize_cmd->add_option("--in", q_in, "input .pemb (f32 or f16)")->required();
  quantize_cmd->add_option("--out", q_out, "output .pemb (int4q)")->required();
  quantize_cmd->add_option("--group-size", q_group, "elements per quant group");

  // pretrain ------------------------------------------------------------
  std::string p_mode, p_data, p_config, p_out_dir, p_version = "pretrained";
  auto* pretrain_cmd = app.add_subcommand("pretrain", "pretrain embedding tables");
  pretrain_cmd->add_option("mode", p_mode, "contrastive|kge")->required();
  pretrain_cmd->add_option("--data", p_data, "interactions/triples TSV")->required();
  pretrain_cmd->add_option("--config", p_config, "TrainConfig JSON");
  pretrain_cmd->add_option("--out-dir", p_out_dir, "output directory")->required();
  pretrain_cmd->add_option("--version-id", p_version, "version id stamped on tables");

  // experiment ----------------------------------------------------------
  std::string e_mode, e_config;
  auto* experiment_cmd = app.add_subcommand("experiment", "run a committed benchmark");
  experiment_cmd->add_option("mode", e_mode, "staleness|freeze")->required();
  experiment_cmd->add_option("--config", e_config, "experiment config JSON")->required();

  // serve-cpu -----------------------------------------------------------
  std::string sc_listen = "127.0.0.1:7101", sc_model_dir;
  std::uint64_t sc_budget_mb = 2048;
  auto* serve_cpu_cmd = app.add_subcommand("serve-cpu", "run the embedding service");
  serve_cpu_cmd->add_option("--listen", sc_listen, "host:port");
  serve_cpu_cmd->add_option("--model-dir", sc_model_dir, "manifest directory")->required();
  serve_cpu_cmd->add_option("--budget-mb", sc_budget_mb, "memory budget for two generations");

  // serve-gpu -----------------------------------------------------------
  std::string sg_listen = "127.0.0.1:7102", sg_models_dir;
  std::vector<std::string> sg_models;
  std::uint32_t sg_max_versions = 2;
  auto* serve_gpu_cmd = app.add_subcommand("serve-gpu", "run the upper-model scorer");
  serve_gpu_cmd->add_option("--listen", sg_listen, "host:port");
  serve_gpu_cmd->add_option("--models", sg_models_dir, "directory of model JSON files");
  serve_gpu_cmd->add_option("--model", sg_models, "model JSON file (repeatable)");
  serve_gpu_cmd->add_option("--max-versions", sg_max_versions, "hosted version limit");

  // serve-ads -----------------------------------------------------------
  std::string sa_listen = "127.0.0.1:7100", sa_cpu, sa_gpu, sa_log;
  bool sa_sequential = false;
  int sa_timeout = 5000;
  auto* serve_ads_cmd = app.add_subcommand("serve-ads", "run the orchestrator");
  serve_ads_cmd->add_option("--listen", sa_listen, "host:port");
  serve_ads_cmd->add_option("--cpu-leaf", sa_cpu, "embedding service host:port")->required();
  serve_ads_cmd->add_option("--gpu-leaf", sa_gpu, "scorer service host:port")->required();
  serve_ads_cmd->add_flag("--sequential", sa_sequential, "disable early-fetch overlap (bench mode)");
  serve_ads_cmd->add_option("--log", sa_log, "JSONL per-request timing log");
  serve_ads_cmd->add_option("--timeout-ms", sa_timeout, "upstream RPC timeout");

  // deploy / rollback ---------------------------------------------------
  std::string d_candidate, d_cpu, d_gpu, d_state;
  int d_drain_ms = 5000, d_poll_ms = 50, d_drain_timeout_ms = 60000;
  auto* deploy_cmd = app.add_subcommand("deploy", "three-phase version-consistent rollout");
  deploy_cmd->add_option("--candidate", d_candidate, "candidate dir (cpu/ + upper_model.json)")
      ->required();
  deploy_cmd->add_option("--cpu-leaf", d_cpu, "embedding service host:port")->required();
  deploy_cmd->add_option("--gpu-leaf", d_gpu, "scorer service host:port")->required();
  deploy_cmd->add_option("--state", d_state, "state file path")->required();
  deploy_cmd->add_option("--drain-ms", d_drain_ms, "old-version silence before retiring");
  deploy_cmd->add_option("--poll-ms", d_poll_ms, "drain poll interval");
  deploy_cmd->add_option("--drain-timeout-ms", d_drain_timeout_ms, "give up draining after");

  std::string r_state;
  auto* rollback_cmd = app.add_subcommand("rollback", "reverse an in-flight deployment");
  rollback_cmd->add_option("--state", r_state, "state file path")->required();

  // resume ----------------------------------------------------------------
  std::string res_state;
  auto* resume_cmd = app.add_subcommand("resume", "continue a deployment after a crash");
  resume_cmd->add_option("--state", res_state, "state file path")->required();

  // bench / chaos ---------------------------------------------------------
  std::string b_scenario, b_out;
  auto* bench_cmd = app.add_subcommand("bench", "early-fetch latency comparison");
  bench_cmd->add_option("--scenario", b_scenario, "bench config JSON")->required();
  bench_cmd->add_option("--out", b_out, "result JSON path (default stdout)");

  std::string c_scenario;
  bool c_expect_clean = false;
  auto* chaos_cmd = app.add_subcommand("chaos", "run a fault/deployment scenario");
  chaos_cmd->add_option("--scenario", c_scenario, "scenario JSON")->required();
  chaos_cmd->add_flag("--expect-clean", c_expect_clean,
                      "exit nonzero on any version or fingerprint mismatch");

  // make-artifacts ----------------------------------------------------------
  std::string ma_out, ma_dtype = "f32";
  std::uint32_t ma_versions = 2, ma_dim = 16, ma_shards = 0, ma_dense = 2;
  std::uint64_t ma_rows = 1024, ma_seed = 1;
  auto* artifacts_cmd = app.add_subcommand("make-artifacts", "generate deployable releases");
  artifacts_cmd->add_option("--out", ma_out, "output root")->required();
  artifacts_cmd->add_option("--versions", ma_versions, "number of versions");
  artifacts_cmd->add_option("--dim", ma_dim, "embedding dim");
  artifacts_cmd->add_option("--rows", ma_rows, "table rows");
  artifacts_cmd->add_option("--dense-dim", ma_dense, "dense feature dim");
  artifacts_cmd->add_option("--dtype", ma_dtype, "f32|int4q");
  artifacts_cmd->add_option("--shards", ma_shards, "shard count (0 = unsharded)");
  artifacts_cmd->add_option("--seed", ma_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*quantize_cmd) {
      const EmbeddingTable table = read_pemb(q_in);
      const std::uint64_t f16_bytes = table.num_rows() * table.dim() * 2;
      const EmbeddingTable quantized = quantize_int4(table, q_group);
      write_pemb(q_out, quantized);
      const SizeReport report = size_report(f16_bytes, quantized);
      std::cout << nlohmann::json{{"quantized_bytes", report.quantized_bytes},
                                  {"f16_baseline_bytes", f16_bytes},
                                  {"ratio", report.ratio}}
                       .dump()
                << "\n";
      return 0;
    }

    if (*pretrain_cmd) {
      const TrainConfig config = config_from_file(p_config);
      std::filesystem::create_directories(p_out_dir);
      const std::filesystem::path out_dir(p_out_dir);
      if (p_mode == "contrastive") {
        const auto interactions = read_interactions_tsv(p_data);
        ContrastiveTables tables = contrastive_pretrain(interactions, config);
        tables.user_table.set_ids("user", p_version);
        tables.pin_table.set_ids("pin", p_version);
        write_pemb(out_dir / "user.pemb", tables.user_table);
        write_pemb(out_dir / "pin.pemb", tables.pin_table);
        std::cout << nlohmann::json{{"user", (out_dir / "user.pemb").string()},
                                    {"pin", (out_dir / "pin.pemb").string()},
                                    {"version_id", p_version}}
                         .dump()
                  << "\n";
      } else if (p_mode == "kge") {
        const auto triples = read_triples_tsv(p_data);
        KgeTables tables = kge_pretrain(triples, config);
        nlohmann::json written = nlohmann::json::object();
        for (auto& [type, table] : tables.entity_tables) {
          const std::string name = std::string("kge_") + entity_type_name(type);
          table.set_ids(name, p_version);
          write_pemb(out_dir / (name + ".pemb"), table);
          written[name] = (out_dir / (name + ".pemb")).string();
        }
        tables.relation_table.set_ids("kge_relation", p_version);
        write_pemb(out_dir / "kge_relation.pemb", tables.relation_table);
        written["kge_relation"] = (out_dir / "kge_relation.pemb").string();
        written["version_id"] = p_version;
        std::cout << written.dump() << "\n";
      } else {
        std::cerr << "pretrain mode must be contrastive|kge\n";
        return 2;
      }
      return 0;
    }

    if (*experiment_cmd) {
      if (e_mode == "freeze") {
        const BenefitConfig config = BenefitConfig::load(e_config);
        const BenefitResult result = run_benefit(config);
        std::cout << result.to_json().dump() << "\n";
      } else if (e_mode == "staleness") {
        const StalenessConfig config = StalenessConfig::load(e_config);
        const auto points = run_staleness(config);
        std::cout << staleness_to_json(points).dump() << "\n";
      } else {
        std::cerr << "experiment mode must be staleness|freeze\n";
        return 2;
      }
      return 0;
    }

    if (*serve_cpu_cmd) {
      CpuLeafConfig config;
      config.memory_budget_bytes = sc_budget_mb << 20;
      CpuLeaf leaf(config);
      leaf.load_model(sc_model_dir);
      wire::Server server(wire::Addr::parse(sc_listen),
                          [&leaf](const nlohmann::json& req) { return leaf.handle(req); });
      serve_until_signal("cpu leaf", server.addr());
      return 0;
    }

    if (*serve_gpu_cmd) {
      GpuLeaf leaf(sg_max_versions);
      if (!sg_models_dir.empty())
        for (const auto& entry : std::filesystem::directory_iterator(sg_models_dir))
          if (entry.path().extension() == ".json") leaf.install_model(entry.path());
      for (const auto& path : sg_models) leaf.install_model(std::filesystem::path(path));
      if (leaf.versions().empty()) {
        std::cerr << "serve-gpu: no models installed (use --models or --model)\n";
        return 2;
      }
      wire::Server server(wire::Addr::parse(sg_listen),
                          [&leaf](const nlohmann::json& req) { return leaf.handle(req); });
      serve_until_signal("gpu leaf", server.addr());
      return 0;
    }

    if (*serve_ads_cmd) {
      AdsServerConfig config;
      config.cpu_leaf = wire::Addr::parse(sa_cpu);
      config.gpu_leaf = wire::Addr::parse(sa_gpu);
      config.sequential = sa_sequential;
      config.upstream_timeout_ms = sa_timeout;
      if (!sa_log.empty()) config.request_log = sa_log;
      AdsServer ads(config);
      wire::Server server(wire::Addr::parse(sa_listen),
                          [&ads](const nlohmann::json& req) { return ads.handle(req); });
      serve_until_signal("ads server", server.addr());
      return 0;
    }

    if (*deploy_cmd) {
      DeployerOptions options;
      options.cpu_leaf = wire::Addr::parse(d_cpu);
      options.gpu_leaf = wire::Addr::parse(d_gpu);
      options.state_path = d_state;
      options.drain_window_ms = d_drain_ms;
      options.poll_ms = d_poll_ms;
      options.drain_timeout_ms = d_drain_timeout_ms;
      Deployer deployer(options);
      const DeployReport report = deployer.deploy(d_candidate);
      const nlohmann::json report_json = report.to_json();
      for (const auto& entry : report_json["entries"]) std::cout << entry.dump() << "\n";
      return report.success ? 0 : 1;
    }

    if (*rollback_cmd || *resume_cmd) {
      const std::string state_path = *rollback_cmd ? r_state : res_state;
      const nlohmann::json state = read_json_file(state_path);
      DeployerOptions options;
      options.cpu_leaf = wire::Addr::parse(state.at("cpu_addr").get<std::string>());
      options.gpu_leaf = wire::Addr::parse(state.at("gpu_addr").get<std::string>());
      options.state_path = state_path;
      Deployer deployer(options);
      const DeployReport report = *rollback_cmd ? deployer.rollback() : deployer.resume();
      const nlohmann::json report_json = report.to_json();
      for (const auto& entry : report_json["entries"]) std::cout << entry.dump() << "\n";
      return report.success ? 0 : 1;
    }

    if (*bench_cmd) {
      const BenchConfig config = BenchConfig::load(b_scenario);
      const BenchResult result = bench_latency(config);
      const std::string text = result.to_json().dump(2);
      if (b_out.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream out(b_out, std::ios::trunc);
        out << text << "\n";
        std::cout << text << "\n";
      }
      return 0;
    }

    if (*chaos_cmd) {
      const ScenarioConfig config = ScenarioConfig::load(c_scenario);
      const ScenarioResult result = run_scenario(config);
      std::cout << result.to_json().dump(2) << "\n";
      if (c_expect_clean) {
        const auto& d = result.deterministic;
        if (d.value("version_mismatch_count", std::uint64_t{1}) != 0 ||
            d.value("fingerprint_mismatches", std::uint64_t{1}) != 0)
          return 1;
      }
      return 0;
    }

    if (*artifacts_cmd) {
      ArtifactSpec spec;
      spec.dim = ma_dim;
      spec.rows = ma_rows;
      spec.dense_dim = ma_dense;
      spec.shards = ma_shards;
      if (ma_dtype == "int4q")
        spec.dtype = Dtype::INT4Q;
      else if (ma_dtype != "f32") {
        std::cerr << "--dtype must be f32|int4q\n";
        return 2;
      }
      const auto artifacts = make_artifacts(ma_out, ma_versions, spec, ma_seed);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& art : artifacts)
        out.push_back({{"version_id", art.version_id},
                       {"dir", art.dir.string()},
                       {"fingerprint", art.fingerprint}});
      std::cout << out.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
