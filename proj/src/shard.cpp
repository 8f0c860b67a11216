#include "embrank/shard.hpp"

#include <fstream>
#include <unordered_map>

#include "embrank/errors.hpp"
#include "embrank/table_io.hpp"

namespace embrank {

const char* shard_strategy_name(ShardStrategy s) {
  return s == ShardStrategy::CONTIGUOUS ? "contiguous" : "modulo";
}

ShardStrategy shard_strategy_from_name(const std::string& name) {
  if (name == "contiguous") return ShardStrategy::CONTIGUOUS;
  if (name == "modulo") return ShardStrategy::MODULO;
  throw ConfigError("unknown shard strategy: " + name);
}

std::uint32_t ShardPlan::shard_of(std::uint64_t row) const {
  if (row >= num_rows) throw InvalidArgument("shard_of: row out of range");
  if (strategy == ShardStrategy::MODULO) return static_cast<std::uint32_t>(row % num_shards);
  for (std::uint32_t k = 0; k < num_shards; ++k)
    if (row >= ranges[k].first && row < ranges[k].second) return k;
  throw IntegrityError("shard_of: plan ranges do not cover row");
}

std::uint64_t ShardPlan::local_row(std::uint64_t row) const {
  if (strategy == ShardStrategy::MODULO) return row / num_shards;
  return row - ranges[shard_of(row)].first;
}

std::uint64_t ShardPlan::shard_rows(std::uint32_t shard) const {
  if (shard >= num_shards) throw InvalidArgument("shard_rows: shard out of range");
  if (strategy == ShardStrategy::MODULO)
    return num_rows / num_shards + (shard < num_rows % num_shards ? 1 : 0);
  return ranges[shard].second - ranges[shard].first;
}

nlohmann::json ShardPlan::to_json() const {
  nlohmann::json j;
  j["num_shards"] = num_shards;
  j["strategy"] = shard_strategy_name(strategy);
  j["num_rows"] = num_rows;
  if (strategy == ShardStrategy::CONTIGUOUS) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& [b, e] : ranges) r.push_back({{"begin", b}, {"end", e}});
    j["ranges"] = std::move(r);
  }
  return j;
}

ShardPlan ShardPlan::from_json(const nlohmann::json& j) {
  ShardPlan plan;
  plan.num_shards = j.at("num_shards").get<std::uint32_t>();
  plan.strategy = shard_strategy_from_name(j.at("strategy").get<std::string>());
  plan.num_rows = j.at("num_rows").get<std::uint64_t>();
  if (plan.strategy == ShardStrategy::CONTIGUOUS) {
    for (const auto& r : j.at("ranges"))
      plan.ranges.emplace_back(r.at("begin").get<std::uint64_t>(), r.at("end").get<std::uint64_t>());
    if (plan.ranges.size() != plan.num_shards)
      throw ConfigError("shard plan: ranges/num_shards mismatch");
  }
  return plan;
}

ShardPlan plan_shards(std::uint64_t num_rows, std::uint32_t dim, std::uint64_t bytes_per_row,
                      std::uint64_t shard_budget_bytes, ShardStrategy strategy) {
  (void)dim;
  if (num_rows == 0 || bytes_per_row == 0)
    throw InvalidArgument("plan_shards: num_rows and bytes_per_row must be positive");
  if (shard_budget_bytes < bytes_per_row)
    throw InvalidArgument("plan_shards: budget smaller than one row");

  const std::uint64_t total = num_rows * bytes_per_row;
  std::uint64_t num_shards = (total + shard_budget_bytes - 1) / shard_budget_bytes;
  if (num_shards > num_rows) num_shards = num_rows;  // never an empty shard

  ShardPlan plan;
  plan.num_shards = static_cast<std::uint32_t>(num_shards);
  plan.strategy = strategy;
  plan.num_rows = num_rows;
  if (strategy == ShardStrategy::CONTIGUOUS) {
    const std::uint64_t base = num_rows / num_shards;
    const std::uint64_t extra = num_rows % num_shards;
    std::uint64_t begin = 0;
    for (std::uint64_t k = 0; k < num_shards; ++k) {
      const std::uint64_t size = base + (k < extra ? 1 : 0);
      plan.ranges.emplace_back(begin, begin + size);
      begin += size;
    }
  }
  return plan;
}

std::vector<EmbeddingTable> make_shards(const EmbeddingTable& table, const ShardPlan& plan) {
  if (plan.num_rows != table.num_rows())
    throw IntegrityError("make_shards: plan covers a different row count");

  std::vector<EmbeddingTable> shards;
  shards.reserve(plan.num_shards);
  const std::uint32_t dim = table.dim();

  for (std::uint32_t k = 0; k < plan.num_shards; ++k) {
    const std::uint64_t rows = plan.shard_rows(k);
    std::vector<std::uint64_t> global_rows;
    global_rows.reserve(rows);
    if (plan.strategy == ShardStrategy::CONTIGUOUS) {
      for (std::uint64_t r = plan.ranges[k].first; r < plan.ranges[k].second; ++r)
        global_rows.push_back(r);
    } else {
      for (std::uint64_t r = k; r < plan.num_rows; r += plan.num_shards) global_rows.push_back(r);
    }

    const std::string shard_id = table.table_id() + ".shard" + std::to_string(k);
    switch (table.dtype()) {
      case Dtype::F32: {
        std::vector<float> data;
        data.reserve(rows * dim);
        for (std::uint64_t r : global_rows) {
          const auto& src = table.f32_data();
          data.insert(data.end(), src.begin() + r * dim, src.begin() + (r + 1) * dim);
        }
        shards.push_back(
            EmbeddingTable::from_f32(shard_id, table.version_id(), rows, dim, std::move(data)));
        break;
      }
      case Dtype::F16: {
        std::vector<std::uint16_t> data;
        data.reserve(rows * dim);
        for (std::uint64_t r : global_rows) {
          const auto& src = table.f16_data();
          data.insert(data.end(), src.begin() + r * dim, src.begin() + (r + 1) * dim);
        }
        shards.push_back(
            EmbeddingTable::from_f16(shard_id, table.version_id(), rows, dim, std::move(data)));
        break;
      }
      case Dtype::INT4Q: {
        const std::uint32_t stride = table.row_stride_bytes();
        const auto& src = table.int4_data();
        std::vector<std::uint8_t> data;
        data.reserve(rows * stride);
        for (std::uint64_t r : global_rows)
          data.insert(data.end(), src.begin() + r * stride, src.begin() + (r + 1) * stride);
        shards.push_back(EmbeddingTable::from_int4q(shard_id, table.version_id(), rows, dim,
                                                    table.group_size(), std::move(data)));
        break;
      }
    }
  }
  return shards;
}

LookupResult route_lookup(const ShardPlan& plan, std::span<const EmbeddingTable> shards,
                          std::span<const EntityId> ids) {
  if (shards.size() != plan.num_shards)
    throw IntegrityError("route_lookup: shard count does not match plan");
  for (std::uint32_t k = 0; k < plan.num_shards; ++k)
    if (shards[k].num_rows() != plan.shard_rows(k))
      throw IntegrityError("route_lookup: shard " + std::to_string(k) + " row count mismatch");

  const std::uint32_t dim = shards.empty() ? 0 : shards[0].dim();
  LookupResult result;
  result.batch = ids.size();
  result.dim = dim;
  result.embeddings.resize(ids.size() * static_cast<std::size_t>(dim));
  result.collided.assign(ids.size(), 0);

  // Split by owning shard, look up per shard, scatter back into query order.
  std::vector<std::vector<std::pair<std::uint64_t, std::uint32_t>>> per_shard(plan.num_shards);
  std::vector<std::uint64_t> global_rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::uint64_t row = hash_to_row(ids[i], plan.num_rows);
    global_rows[i] = row;
    const std::uint32_t k = plan.shard_of(row);
    per_shard[k].emplace_back(plan.local_row(row), static_cast<std::uint32_t>(i));
  }
  for (std::uint32_t k = 0; k < plan.num_shards; ++k) {
    for (const auto& [local, i] : per_shard[k])
      shards[k].read_row(local, {result.embeddings.data() + static_cast<std::size_t>(i) * dim, dim});
  }

  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> by_row;
  for (std::size_t i = 0; i < ids.size(); ++i)
    by_row[global_rows[i]].push_back(static_cast<std::uint32_t>(i));
  for (const auto& [row, idxs] : by_row) {
    if (idxs.size() < 2) continue;
    bool distinct = false;
    for (std::size_t k = 1; k < idxs.size() && !distinct; ++k)
      distinct = ids[idxs[k]] != ids[idxs[0]];
    if (distinct)
      for (std::uint32_t i : idxs) result.collided[i] = 1;
  }
  return result;
}

void write_shard_set(const std::filesystem::path& dir, const EmbeddingTable& table,
                     const ShardPlan& plan) {
  std::filesystem::create_directories(dir);
  const std::vector<EmbeddingTable> shards = make_shards(table, plan);
  for (std::uint32_t k = 0; k < plan.num_shards; ++k) {
    const std::string name = table.table_id() + ".shard" + std::to_string(k) + ".pemb";
    write_pemb(dir / name, shards[k]);
  }
  std::ofstream out(dir / (table.table_id() + ".plan.json"));
  if (!out) throw IoError("write_shard_set: cannot write plan");
  out << plan.to_json().dump(2) << "\n";
}

std::pair<ShardPlan, std::vector<EmbeddingTable>> read_shard_set(
    const std::filesystem::path& dir, const std::string& table_id) {
  std::ifstream in(dir / (table_id + ".plan.json"));
  if (!in) throw IoError("read_shard_set: missing plan for " + table_id);
  nlohmann::json j;
  in >> j;
  ShardPlan plan = ShardPlan::from_json(j);
  std::vector<EmbeddingTable> shards;
  shards.reserve(plan.num_shards);
  for (std::uint32_t k = 0; k < plan.num_shards; ++k) {
    const std::string name = table_id + ".shard" + std::to_string(k) + ".pemb";
    shards.push_back(read_pemb(dir / name));
  }
  return {std::move(plan), std::move(shards)};
}

}  // namespace embrank
