#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "embrank/table.hpp"
#include "json.hpp"

namespace embrank {

enum class ShardStrategy : std::uint8_t { CONTIGUOUS = 0, MODULO = 1 };

const char* shard_strategy_name(ShardStrategy s);
ShardStrategy shard_strategy_from_name(const std::string& name);

// Row-wise partition of [0, num_rows) across num_shards shards. CONTIGUOUS
// shards are balanced ranges differing by at most one row; MODULO assigns
// row -> row % num_shards.
struct ShardPlan {
  std::uint32_t num_shards = 1;
  ShardStrategy strategy = ShardStrategy::CONTIGUOUS;
  std::uint64_t num_rows = 0;
  // CONTIGUOUS only: half-open [begin, end) per shard.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;

  std::uint32_t shard_of(std::uint64_t row) const;
  std::uint64_t local_row(std::uint64_t row) const;
  std::uint64_t shard_rows(std::uint32_t shard) const;

  nlohmann::json to_json() const;
  static ShardPlan from_json(const nlohmann::json& j);
};

// num_shards = ceil(num_rows * bytes_per_row / shard_budget_bytes).
ShardPlan plan_shards(std::uint64_t num_rows, std::uint32_t dim, std::uint64_t bytes_per_row,
                      std::uint64_t shard_budget_bytes, ShardStrategy strategy);

// Slices a table into per-shard tables holding each shard's rows in local order.
std::vector<EmbeddingTable> make_shards(const EmbeddingTable& table, const ShardPlan& plan);

// Routed lookup: hash against the full table's row space, fan out per shard,
// re-gather in query order. Bitwise identical to lookup() on the unsharded
// table. Throws IntegrityError if the shards do not match the plan.
LookupResult route_lookup(const ShardPlan& plan, std::span<const EmbeddingTable> shards,
                          std::span<const EntityId> ids);

// Plan JSON beside the shard PEMB files named <table_id>.shard<k>.pemb.
void write_shard_set(const std::filesystem::path& dir, const EmbeddingTable& table,
                     const ShardPlan& plan);
std::pair<ShardPlan, std::vector<EmbeddingTable>> read_shard_set(
    const std::filesystem::path& dir, const std::string& table_id);

}  // namespace embrank
