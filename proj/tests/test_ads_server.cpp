#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <filesystem>

#include "doctest.h"
#include "embrank/ads_server.hpp"
#include "embrank/cpu_leaf.hpp"
#include "embrank/gpu_leaf.hpp"
#include "embrank/harness.hpp"
#include "embrank/metrics.hpp"
#include "embrank/simnet.hpp"

using namespace embrank;

namespace {

struct Stack {
  std::filesystem::path dir;
  std::vector<VersionArtifacts> artifacts;
  std::unique_ptr<CpuLeaf> cpu;
  std::unique_ptr<GpuLeaf> gpu;
  std::unique_ptr<wire::Server> cpu_server;
  std::unique_ptr<wire::Server> gpu_server;
  std::unique_ptr<AdsServer> ads;
  std::unique_ptr<wire::Server> ads_server;

  explicit Stack(bool sequential = false, int versions = 1,
                 std::filesystem::path log = {}) {
    static std::atomic<int> counter{0};
    dir = std::filesystem::temp_directory_path() /
          ("embrank_ads_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    ArtifactSpec spec;
    spec.dim = 4;
    spec.rows = 64;
    spec.dense_dim = 2;
    artifacts = make_artifacts(dir, versions, spec, 71);
    cpu = std::make_unique<CpuLeaf>();
    cpu->load_model(artifacts[0].dir / "cpu");
    gpu = std::make_unique<GpuLeaf>(2);
    gpu->install_model(artifacts[0].dir / "upper_model.json");
    cpu_server = std::make_unique<wire::Server>(
        wire::Addr{"127.0.0.1", 0}, [this](const nlohmann::json& r) { return cpu->handle(r); });
    gpu_server = std::make_unique<wire::Server>(
        wire::Addr{"127.0.0.1", 0}, [this](const nlohmann::json& r) { return gpu->handle(r); });
    AdsServerConfig config;
    config.cpu_leaf = cpu_server->addr();
    config.gpu_leaf = gpu_server->addr();
    config.sequential = sequential;
    config.upstream_timeout_ms = 2000;
    config.request_log = log;
    ads = std::make_unique<AdsServer>(config);
    ads_server = std::make_unique<wire::Server>(
        wire::Addr{"127.0.0.1", 0}, [this](const nlohmann::json& r) { return ads->handle(r); });
  }

  nlohmann::json infer(int sim_other_ms = 0, const std::string& rid = "r1") {
    wire::Client client(ads_server->addr(), 5000);
    return client.call({{"op", "infer"},
                        {"request_id", rid},
                        {"ids", {{"user", std::vector<EntityId>{7}}, {"pin", std::vector<EntityId>{9}}}},
                        {"dense", std::vector<float>{0.1f, 0.2f}},
                        {"head", "ctr"},
                        {"sim_other_ms", sim_other_ms}});
  }
};

}  // namespace

TEST_CASE("inference threads version and fingerprint through both phases") {
  Stack stack;
  const nlohmann::json resp = stack.infer();
  REQUIRE_FALSE(resp.contains("error"));
  CHECK(resp["version_id"] == "v1");
  CHECK(resp["fingerprint"] == stack.artifacts[0].fingerprint);
  CHECK(resp["score"].get<float>() >= 0.0f);
  CHECK(resp["score"].get<float>() <= 1.0f);
  const auto& timing = resp["timing"];
  CHECK(timing["total_ms"].get<double>() >= timing["score_ms"].get<double>());
}

TEST_CASE("early fetch overlaps other-feature work") {
  Stack stack;
  // Warm up connections first so measured overlap excludes connect cost.
  stack.infer(0, "warm");
  const nlohmann::json resp = stack.infer(60, "overlap");
  REQUIRE_FALSE(resp.contains("error"));
  const auto& timing = resp["timing"];
  const double fetch = timing["fetch_ms"].get<double>();
  const double other = timing["other_ms"].get<double>();
  const double score = timing["score_ms"].get<double>();
  const double total = timing["total_ms"].get<double>();
  CHECK(other >= 60.0);
  CHECK(total <= std::max(fetch, other) + score + 5.0);  // scheduling slack
}

TEST_CASE("sequential mode stacks the phases") {
  Stack stack(/*sequential=*/true);
  stack.infer(0, "warm");
  const nlohmann::json resp = stack.infer(40, "seq");
  REQUIRE_FALSE(resp.contains("error"));
  const auto& timing = resp["timing"];
  CHECK(timing["total_ms"].get<double>() >=
        timing["fetch_ms"].get<double>() + timing["other_ms"].get<double>() +
            timing["score_ms"].get<double>() - 0.5);
}

TEST_CASE("zero other work leaves nothing to overlap") {
  Stack stack;
  stack.infer(0, "warm");
  const nlohmann::json resp = stack.infer(0, "no-overlap");
  const auto& timing = resp["timing"];
  CHECK(timing["total_ms"].get<double>() >=
        timing["fetch_ms"].get<double>() + timing["score_ms"].get<double>() - 0.5);
  CHECK(timing["other_ms"].get<double>() < 5.0);
}

TEST_CASE("cpu leaf outage surfaces as embedding_unavailable") {
  Stack stack;
  stack.cpu_server->stop();
  stack.cpu_server.reset();
  const nlohmann::json resp = stack.infer();
  CHECK(resp["error"]["code"] == "embedding_unavailable");
  const nlohmann::json metrics = stack.ads->metrics().snapshot();
  CHECK(metrics["errors"]["embedding_unavailable"] == 1);
}

TEST_CASE("upstream service errors pass through with their codes") {
  Stack stack;
  wire::Client client(stack.ads_server->addr(), 5000);
  const nlohmann::json resp =
      client.call({{"op", "infer"},
                   {"request_id", "bad-table"},
                   {"ids", {{"ghost", std::vector<EntityId>{1}}}},
                   {"dense", std::vector<float>{0, 0}},
                   {"head", "ctr"},
                   {"sim_other_ms", 0}});
  CHECK(resp["error"]["code"] == "unknown_table");
}

TEST_CASE("metrics count requests, errors, and quantiles consistently") {
  const auto log_path = std::filesystem::temp_directory_path() /
                        ("embrank_ads_log_" + std::to_string(::getpid()) + ".jsonl");
  Stack stack(false, 1, log_path);
  nlohmann::json empty = stack.ads->metrics().snapshot();
  CHECK(empty["requests"] == 0);
  CHECK(empty["version_mismatch_count"] == 0);

  const int n = 20;
  for (int i = 0; i < n; ++i) stack.infer(0, "m" + std::to_string(i));
  const nlohmann::json metrics = stack.ads->metrics().snapshot();
  CHECK(metrics["requests"] == n);
  CHECK(metrics["ok"] == n);

  // Replay the request log offline and recompute the quantiles.
  std::ifstream in(log_path);
  REQUIRE(in.good());
  std::vector<double> latencies;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    latencies.push_back(nlohmann::json::parse(line).at("total_ms").get<double>());
  }
  REQUIRE(latencies.size() == n);
  CHECK(metrics["latency_ms"]["p50"].get<double>() == quantile(latencies, 0.5));
  CHECK(metrics["latency_ms"]["p99"].get<double>() == quantile(latencies, 0.99));
}

TEST_CASE("version mismatch from the scorer is counted and recovered by refetch") {
  // Install only v2 on the gpu leaf while the cpu leaf serves v1: every score
  // hits version_mismatch, the refetch sees v1 again, and the request fails
  // with the mismatch surfaced.
  Stack stack(false, 2);
  stack.gpu = std::make_unique<GpuLeaf>(2);
  stack.gpu->install_model(stack.artifacts[1].dir / "upper_model.json");  // v2 only
  const nlohmann::json resp = stack.infer();
  CHECK(resp["error"]["code"] == "version_mismatch");
  const nlohmann::json metrics = stack.ads->metrics().snapshot();
  CHECK(metrics["version_mismatch_count"].get<int>() == 2);  // initial try + retry

  // Now fix the pairing mid-flight: load v2 on the cpu leaf; next request works.
  stack.cpu->load_model(stack.artifacts[1].dir / "cpu");
  const nlohmann::json ok = stack.infer(0, "fixed");
  REQUIRE_FALSE(ok.contains("error"));
  CHECK(ok["version_id"] == "v2");
}

TEST_CASE("cvr head flows through the pipeline as two probabilities") {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("embrank_ads_cvr_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  ArtifactSpec spec;
  spec.dim = 4;
  spec.rows = 64;
  spec.dense_dim = 2;
  spec.head = "cvr";
  const auto artifacts = make_artifacts(dir, 1, spec, 99);
  CpuLeaf cpu;
  cpu.load_model(artifacts[0].dir / "cpu");
  GpuLeaf gpu(2);
  gpu.install_model(artifacts[0].dir / "upper_model.json");
  wire::Server cpu_server({"127.0.0.1", 0},
                          [&](const nlohmann::json& r) { return cpu.handle(r); });
  wire::Server gpu_server({"127.0.0.1", 0},
                          [&](const nlohmann::json& r) { return gpu.handle(r); });
  AdsServerConfig config;
  config.cpu_leaf = cpu_server.addr();
  config.gpu_leaf = gpu_server.addr();
  AdsServer ads(config);
  wire::Server ads_endpoint({"127.0.0.1", 0},
                            [&](const nlohmann::json& r) { return ads.handle(r); });
  wire::Client client(ads_endpoint.addr(), 5000);
  const nlohmann::json resp =
      client.call({{"op", "infer"},
                   {"request_id", "cvr1"},
                   {"ids", {{"user", std::vector<EntityId>{3}}, {"pin", std::vector<EntityId>{4}}}},
                   {"dense", std::vector<float>{0.2f, -0.2f}},
                   {"head", "cvr"},
                   {"sim_other_ms", 0}});
  REQUIRE_FALSE(resp.contains("error"));
  REQUIRE(resp["scores"].size() == 2);
  const double ccvr = resp["scores"][0].get<double>();
  const double vtcvr = resp["scores"][1].get<double>();
  const double ctr = 0.3;
  const double utility = combine_utility(ctr, ccvr, vtcvr);
  CHECK(utility >= 0.0);
  CHECK(utility <= 1.0);
}
