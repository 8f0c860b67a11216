#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "embrank/cpu_leaf.hpp"
#include "embrank/harness.hpp"
#include "embrank/table_io.hpp"
#include "embrank/wire.hpp"

using namespace embrank;

namespace {

std::filesystem::path workdir() {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("embrank_cpu_leaf_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

ArtifactSpec small_spec() {
  ArtifactSpec spec;
  spec.dim = 8;
  spec.rows = 128;
  spec.dense_dim = 2;
  return spec;
}

}  // namespace

TEST_CASE("load_model validates manifests and keeps the previous model on failure") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 1, small_spec(), 5);
  CpuLeaf leaf;
  CHECK(leaf.current_version() == "");
  CHECK(leaf.load_model(artifacts[0].dir / "cpu") == "v1");
  CHECK(leaf.current_version() == "v1");

  // Manifest whose table disagrees on version.
  const auto bad_dir = dir / "bad";
  std::filesystem::create_directories(bad_dir);
  EmbeddingTable t = EmbeddingTable::random_init("user", "other", 16, 8, 3);
  write_pemb(bad_dir / "user.pemb", t);
  {
    std::ofstream m(bad_dir / "manifest.json");
    m << R"({"version_id": "v9", "tables": {"user": "user.pemb"}})";
  }
  CHECK_THROWS_AS(leaf.load_model(bad_dir), IntegrityError);
  CHECK(leaf.current_version() == "v1");

  // Missing table file.
  const auto missing_dir = dir / "missing";
  std::filesystem::create_directories(missing_dir);
  {
    std::ofstream m(missing_dir / "manifest.json");
    m << R"({"version_id": "v9", "tables": {"user": "nope.pemb"}})";
  }
  CHECK_THROWS_AS(leaf.load_model(missing_dir), IoError);
  CHECK(leaf.current_version() == "v1");

  // Reloading the serving version is a no-op success.
  CHECK(leaf.load_model(artifacts[0].dir / "cpu") == "v1");
}

TEST_CASE("memory budget refuses oversized incoming models") {
  const auto dir = workdir();
  ArtifactSpec spec = small_spec();
  spec.rows = 512;
  const auto artifacts = make_artifacts(dir, 2, spec, 7);
  CpuLeafConfig config;
  config.memory_budget_bytes = 512 * 8 * 4 * 3;  // fits one model plus slack, not two
  CpuLeaf leaf(config);
  CHECK(leaf.load_model(artifacts[0].dir / "cpu") == "v1");
  CHECK_THROWS_AS(leaf.load_model(artifacts[1].dir / "cpu"), Unavailable);
  CHECK(leaf.current_version() == "v1");
}

TEST_CASE("generate_embeddings matches offline lookup on the same pemb files") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 1, small_spec(), 11);
  CpuLeaf leaf;
  leaf.load_model(artifacts[0].dir / "cpu");

  const std::vector<EntityId> ids = {1, 2, 3, 0xDEADBEEF, 1};  // includes a duplicate
  nlohmann::json request = {{"op", "generate_embeddings"},
                            {"request_id", "q1"},
                            {"ids", {{"user", ids}, {"pin", ids}}}};
  const nlohmann::json response = leaf.handle(request);
  REQUIRE_FALSE(response.contains("error"));
  CHECK(response["version_id"] == "v1");

  const EmbeddingTable user = read_pemb(artifacts[0].dir / "cpu" / "user.pemb");
  const LookupResult expected = lookup(user, ids);
  const auto& matrix = response["embeddings"]["user"];
  REQUIRE(matrix.size() == ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(matrix[i][j].get<float>() == expected.row(i)[j]);
}

TEST_CASE("request errors name the offending table and empty batches stay valid") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 1, small_spec(), 13);
  CpuLeaf leaf;

  nlohmann::json request = {{"op", "generate_embeddings"},
                            {"request_id", "q2"},
                            {"ids", {{"user", std::vector<EntityId>{}}}}};
  CHECK(leaf.handle(request)["error"]["code"] == "no_model");

  leaf.load_model(artifacts[0].dir / "cpu");
  const nlohmann::json ok = leaf.handle(request);
  REQUIRE_FALSE(ok.contains("error"));
  CHECK(ok["embeddings"]["user"].empty());
  CHECK(ok["version_id"] == "v1");

  request["ids"] = {{"nope", std::vector<EntityId>{1}}};
  const nlohmann::json bad = leaf.handle(request);
  CHECK(bad["error"]["code"] == "unknown_table");
  CHECK(std::string(bad["error"]["message"]).find("nope") != std::string::npos);
}

TEST_CASE("sharded tables serve through the same manifest") {
  const auto dir = workdir();
  ArtifactSpec spec = small_spec();
  spec.shards = 4;
  const auto artifacts = make_artifacts(dir, 1, spec, 17);
  CpuLeaf leaf;
  leaf.load_model(artifacts[0].dir / "cpu");

  const std::vector<EntityId> ids = {5, 6, 7, 8, 9, 10};
  nlohmann::json request = {{"op", "generate_embeddings"},
                            {"request_id", "q3"},
                            {"ids", {{"user", ids}}}};
  const nlohmann::json response = leaf.handle(request);
  REQUIRE_FALSE(response.contains("error"));

  // Oracle: reassemble the unsharded lookup from the shard set.
  auto [plan, shards] = read_shard_set(artifacts[0].dir / "cpu", "user");
  const LookupResult expected = route_lookup(plan, shards, ids);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < 8; ++j)
      CHECK(response["embeddings"]["user"][i][j].get<float>() == expected.row(i)[j]);
}

TEST_CASE("identical requests between deploys give bitwise identical responses") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 1, small_spec(), 19);
  CpuLeaf leaf;
  leaf.load_model(artifacts[0].dir / "cpu");
  const nlohmann::json request = {{"op", "generate_embeddings"},
                                  {"request_id", "q4"},
                                  {"ids", {{"pin", std::vector<EntityId>{42, 43}}}}};
  CHECK(leaf.handle(request) == leaf.handle(request));
}

TEST_CASE("loads never tear responses and visibility is monotone per connection") {
  const auto dir = workdir();
  const auto artifacts = make_artifacts(dir, 2, small_spec(), 23);
  CpuLeaf leaf;
  leaf.load_model(artifacts[0].dir / "cpu");

  // Reference rows per version for one probe id.
  std::map<std::string, std::vector<float>> user_row, pin_row;
  for (const auto& art : artifacts) {
    const EmbeddingTable user = read_pemb(art.dir / "cpu" / "user.pemb");
    const EmbeddingTable pin = read_pemb(art.dir / "cpu" / "pin.pemb");
    user_row[art.version_id] = user.row(hash_to_row(99, user.num_rows()));
    pin_row[art.version_id] = pin.row(hash_to_row(99, pin.num_rows()));
  }

  wire::Server server({"127.0.0.1", 0},
                      [&](const nlohmann::json& req) { return leaf.handle(req); });

  std::atomic<bool> start{false}, stop{false};
  std::atomic<int> torn{0}, non_monotone{0}, checked{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 8; ++t) {
    readers.emplace_back([&] {
      wire::Client client(server.addr(), 5000);
      while (!start.load()) std::this_thread::yield();
      bool saw_v2 = false;
      while (!stop.load()) {
        const nlohmann::json resp = client.call(
            {{"op", "generate_embeddings"},
             {"request_id", "c"},
             {"ids", {{"user", std::vector<EntityId>{99}}, {"pin", std::vector<EntityId>{99}}}}});
        if (resp.contains("error")) continue;
        const std::string version = resp["version_id"];
        if (version == "v2") saw_v2 = true;
        if (saw_v2 && version == "v1") ++non_monotone;
        const auto u = resp["embeddings"]["user"][0].get<std::vector<float>>();
        const auto p = resp["embeddings"]["pin"][0].get<std::vector<float>>();
        if (u != user_row[version] || p != pin_row[version]) ++torn;
        ++checked;
      }
    });
  }

  start.store(true);
  // Let requests stream for a moment, switch versions mid-flight, stream on.
  std::this_thread::sleep_for(std::chrono::milliseconds(60));
  leaf.load_model(artifacts[1].dir / "cpu");
  std::this_thread::sleep_for(std::chrono::milliseconds(60));
  stop.store(true);
  for (auto& r : readers) r.join();

  CHECK(torn == 0);
  CHECK(non_monotone == 0);
  CHECK(checked.load() > 100);
}
