#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "embrank/shard.hpp"
#include "embrank/table.hpp"
#include "json.hpp"

namespace embrank {

// One named table hosted by the embedding model: either a single table or a
// sharded set routed through its plan.
struct HostedTable {
  std::variant<std::monostate, EmbeddingTable, std::pair<ShardPlan, std::vector<EmbeddingTable>>>
      storage;

  LookupResult lookup_ids(std::span<const EntityId> ids) const;
  std::uint64_t payload_bytes() const;
  std::uint32_t dim() const;
  const std::string& version_id() const;
};

// A fully loaded embedding model: every table shares one version_id.
struct EmbeddingModel {
  std::string version_id;
  std::map<std::string, HostedTable> tables;
  std::uint64_t total_bytes = 0;
};

// Manifest: {"version_id": str, "tables": {name: "file.pemb" |
// {"plan": "t.plan.json", "shards": ["t.shard0.pemb", ...]}}}. Paths are
// relative to the manifest directory.
std::shared_ptr<const EmbeddingModel> load_embedding_model(const std::filesystem::path& dir);

struct CpuLeafConfig {
  std::uint64_t memory_budget_bytes = 2ull << 30;
};

// The embedding service: answers generate_embeddings with version-tagged
// payloads. Loads build the incoming model beside the serving one and switch
// it in with a single swap; requests snapshot the model once, so a response
// never mixes versions and the version sequence per connection is monotone.
class CpuLeaf {
 public:
  explicit CpuLeaf(CpuLeafConfig config = {});

  // Returns the loaded version. Loading the already-serving version is a
  // no-op. Throws IntegrityError / IoError; the previous model keeps serving.
  std::string load_model(const std::filesystem::path& dir);

  std::string current_version() const;  // "" when no model loaded

  // Framed-protocol entry point: ops generate_embeddings, load_model, status.
  nlohmann::json handle(const nlohmann::json& request);

 private:
  nlohmann::json handle_generate(const nlohmann::json& request);

  CpuLeafConfig config_;
  mutable std::mutex mutex_;
  std::shared_ptr<const EmbeddingModel> current_;
};

}  // namespace embrank
