#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <filesystem>
#include <thread>

#include "doctest.h"
#include "embrank/gpu_leaf.hpp"
#include "embrank/harness.hpp"

using namespace embrank;

namespace {

std::filesystem::path workdir() {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("embrank_gpu_leaf_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

ArtifactSpec small_spec() {
  ArtifactSpec spec;
  spec.dim = 4;
  spec.rows = 64;
  spec.dense_dim = 2;
  return spec;
}

nlohmann::json score_request(const std::string& version, std::vector<float> user,
                             std::vector<float> pin, std::vector<float> dense,
                             const std::string& head = "ctr") {
  return {{"op", "score"},
          {"request_id", "s1"},
          {"version_id", version},
          {"embeddings",
           {{"user", nlohmann::json::array({user})}, {"pin", nlohmann::json::array({pin})}}},
          {"dense", dense},
          {"head", head}};
}

}  // namespace

TEST_CASE("install and retire manage the hosted version set") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 3, small_spec(), 31);
  GpuLeaf leaf(2);
  CHECK(leaf.install_model(artifacts[0].dir / "upper_model.json") == "v1");
  CHECK(leaf.versions() == std::vector<std::string>{"v1"});

  // Install alongside: both serve.
  CHECK(leaf.install_model(artifacts[1].dir / "upper_model.json") == "v2");
  CHECK(leaf.versions() == std::vector<std::string>{"v1", "v2"});

  // Same version twice: idempotent.
  CHECK(leaf.install_model(artifacts[1].dir / "upper_model.json") == "v2");
  CHECK(leaf.versions().size() == 2);

  // Version limit enforced.
  CHECK_THROWS_AS(leaf.install_model(artifacts[2].dir / "upper_model.json"), Unavailable);

  leaf.retire_model("v1");
  CHECK(leaf.versions() == std::vector<std::string>{"v2"});
  CHECK_THROWS_AS(leaf.retire_model("v1"), InvalidArgument);
  CHECK_THROWS_AS(leaf.retire_model("v2"), Unavailable);  // last version
  const nlohmann::json resp = leaf.handle({{"op", "retire_model"}, {"version_id", "v2"}});
  CHECK(resp["error"]["code"] == "last_version");
}

TEST_CASE("zero weights score exactly one half") {
  UpperModel model;
  model.version_id = "z1";
  model.head_kind = HeadKind::CTR;
  model.layout = {{"user", 4}, {"pin", 4}};
  model.dense_dim = 2;
  model.heads.push_back({std::vector<float>(10, 0.0f), 0.0f});
  model.fingerprint = model_fingerprint(model);
  GpuLeaf leaf(2);
  leaf.install_model(std::move(model));

  const nlohmann::json resp =
      leaf.handle(score_request("z1", {1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10}));
  REQUIRE_FALSE(resp.contains("error"));
  CHECK(resp["score"].get<float>() == 0.5f);
}

TEST_CASE("scoring an uninstalled version is a version_mismatch error") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 2, small_spec(), 37);
  GpuLeaf leaf(2);
  leaf.install_model(artifacts[0].dir / "upper_model.json");
  leaf.install_model(artifacts[1].dir / "upper_model.json");
  const nlohmann::json resp =
      leaf.handle(score_request("v3", {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0}));
  CHECK(resp["error"]["code"] == "version_mismatch");
}

TEST_CASE("scores equal offline evaluation of the same model file bitwise") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 1, small_spec(), 41);
  GpuLeaf leaf(2);
  leaf.install_model(artifacts[0].dir / "upper_model.json");

  const std::vector<float> user = {0.25f, -0.5f, 0.75f, 1.0f};
  const std::vector<float> pin = {-0.125f, 0.3f, 0.9f, -1.1f};
  const std::vector<float> dense = {0.4f, -0.6f};
  const nlohmann::json resp = leaf.handle(score_request("v1", user, pin, dense));
  REQUIRE_FALSE(resp.contains("error"));

  const UpperModel offline = UpperModel::load(artifacts[0].dir / "upper_model.json");
  const std::vector<float> expected = offline.score({{"user", user}, {"pin", pin}}, dense);
  CHECK(resp["score"].get<float>() == expected[0]);
  CHECK(resp["fingerprint"] == offline.fingerprint);
}

TEST_CASE("bad payloads are rejected with bad_payload") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 1, small_spec(), 43);
  GpuLeaf leaf(2);
  leaf.install_model(artifacts[0].dir / "upper_model.json");

  // Wrong embedding dim.
  CHECK(leaf.handle(score_request("v1", {1, 2}, {0, 1, 0, 0}, {0, 0}))["error"]["code"] ==
        "bad_payload");
  // Wrong head for the model.
  CHECK(leaf.handle(score_request("v1", {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0}, "cvr"))["error"]["code"] ==
        "bad_payload");
  // Batch must be exactly one row.
  nlohmann::json req = score_request("v1", {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0});
  req["embeddings"]["user"] = nlohmann::json::array(
      {std::vector<float>{1, 0, 0, 0}, std::vector<float>{1, 0, 0, 0}});
  CHECK(leaf.handle(req)["error"]["code"] == "bad_payload");
}

TEST_CASE("cvr models return two probabilities") {
  const auto dir = workdir();
  ArtifactSpec spec = small_spec();
  spec.head = "cvr";
  const auto artifacts = make_artifacts(dir, 1, spec, 47);
  GpuLeaf leaf(2);
  leaf.install_model(artifacts[0].dir / "upper_model.json");
  const nlohmann::json resp =
      leaf.handle(score_request("v1", {1, 0, 0, 0}, {0, 1, 0, 0}, {0.5f, 0.5f}, "cvr"));
  REQUIRE_FALSE(resp.contains("error"));
  REQUIRE(resp["scores"].size() == 2);
  for (const auto& s : resp["scores"]) {
    CHECK(s.get<float>() >= 0.0f);
    CHECK(s.get<float>() <= 1.0f);
  }
}

TEST_CASE("install/retire of one version never disturbs another's scores") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 3, small_spec(), 53);
  GpuLeaf leaf(2);
  leaf.install_model(artifacts[0].dir / "upper_model.json");

  const nlohmann::json probe = score_request("v1", {1, 1, 1, 1}, {1, 1, 1, 1}, {1, 1});
  const float baseline = leaf.handle(probe)["score"].get<float>();

  std::atomic<bool> stop{false};
  std::atomic<int> mismatches{0};
  std::thread scorer([&] {
    while (!stop.load()) {
      const nlohmann::json resp = leaf.handle(probe);
      if (resp.contains("error") || resp["score"].get<float>() != baseline) ++mismatches;
    }
  });
  for (int cycle = 0; cycle < 20; ++cycle) {
    leaf.install_model(artifacts[1].dir / "upper_model.json");
    leaf.retire_model("v2");
  }
  stop.store(true);
  scorer.join();
  CHECK(mismatches == 0);
}

TEST_CASE("combine_utility matches the auction formula with clamping") {
  CHECK(combine_utility(0.0, 0.7, 0.0) == 0.0);
  CHECK(combine_utility(0.1, 0.2, 0.05) == doctest::Approx(0.07).epsilon(1e-12));
  CHECK(combine_utility(1.0, 1.0, 1.0) == 1.0);  // clamped
  CHECK_THROWS_AS(combine_utility(-0.1, 0.5, 0.5), InvalidArgument);
  CHECK_THROWS_AS(combine_utility(0.1, 1.5, 0.5), InvalidArgument);
}

TEST_CASE("status reports versions with scoring recency") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 1, small_spec(), 59);
  GpuLeaf leaf(2);
  leaf.install_model(artifacts[0].dir / "upper_model.json");
  nlohmann::json status = leaf.handle({{"op", "status"}, {"request_id", "st"}});
  CHECK(status["versions"] == nlohmann::json::array({"v1"}));
  CHECK(status["scored_ms_ago"]["v1"] == -1);  // never scored since install

  leaf.handle(score_request("v1", {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0}));
  status = leaf.handle({{"op", "status"}, {"request_id", "st"}});
  CHECK(status["scored_ms_ago"]["v1"].get<std::int64_t>() >= 0);
  CHECK(status["fingerprints"]["v1"] == artifacts[0].fingerprint);
}
