#include "embrank/cpu_leaf.hpp"

#include <fstream>

#include "embrank/errors.hpp"
#include "embrank/table_io.hpp"
#include "embrank/wire.hpp"

namespace embrank {

LookupResult HostedTable::lookup_ids(std::span<const EntityId> ids) const {
  if (const auto* single = std::get_if<EmbeddingTable>(&storage)) return lookup(*single, ids);
  const auto& [plan, shards] = std::get<std::pair<ShardPlan, std::vector<EmbeddingTable>>>(storage);
  return route_lookup(plan, shards, ids);
}

std::uint64_t HostedTable::payload_bytes() const {
  if (const auto* single = std::get_if<EmbeddingTable>(&storage)) return single->payload_bytes();
  const auto& [plan, shards] = std::get<std::pair<ShardPlan, std::vector<EmbeddingTable>>>(storage);
  std::uint64_t total = 0;
  for (const auto& shard : shards) total += shard.payload_bytes();
  return total;
}

std::uint32_t HostedTable::dim() const {
  if (const auto* single = std::get_if<EmbeddingTable>(&storage)) return single->dim();
  return std::get<std::pair<ShardPlan, std::vector<EmbeddingTable>>>(storage).second.at(0).dim();
}

const std::string& HostedTable::version_id() const {
  if (const auto* single = std::get_if<EmbeddingTable>(&storage)) return single->version_id();
  return std::get<std::pair<ShardPlan, std::vector<EmbeddingTable>>>(storage).second.at(0).version_id();
}

std::shared_ptr<const EmbeddingModel> load_embedding_model(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("load_model: missing manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_model: bad manifest json: " + std::string(e.what()));
  }

  auto model = std::make_shared<EmbeddingModel>();
  model->version_id = manifest.at("version_id").get<std::string>();
  if (model->version_id.empty()) throw IntegrityError("load_model: empty version_id in manifest");

  for (const auto& [name, spec] : manifest.at("tables").items()) {
    HostedTable hosted;
    if (spec.is_string()) {
      hosted.storage = read_pemb(dir / spec.get<std::string>());
    } else if (spec.is_object()) {
      // Sharded table: plan + shard files.
      std::ifstream plan_in(dir / spec.at("plan").get<std::string>());
      if (!plan_in) throw IoError("load_model: missing shard plan for " + name);
      nlohmann::json plan_json;
      plan_in >> plan_json;
      ShardPlan plan = ShardPlan::from_json(plan_json);
      std::vector<EmbeddingTable> shards;
      for (const auto& file : spec.at("shards"))
        shards.push_back(read_pemb(dir / file.get<std::string>()));
      if (shards.size() != plan.num_shards)
        throw IntegrityError("load_model: shard count mismatch for " + name);
      hosted.storage = std::make_pair(std::move(plan), std::move(shards));
    } else {
      throw IoError("load_model: table spec for " + name + " must be a path or an object");
    }
    if (hosted.version_id() != model->version_id)
      throw IntegrityError("load_model: table '" + name + "' carries version '" +
                           hosted.version_id() + "', manifest says '" + model->version_id + "'");
    model->total_bytes += hosted.payload_bytes();
    model->tables.emplace(name, std::move(hosted));
  }
  if (model->tables.empty()) throw IntegrityError("load_model: manifest lists no tables");
  return model;
}

CpuLeaf::CpuLeaf(CpuLeafConfig config) : config_(config) {}

std::string CpuLeaf::load_model(const std::filesystem::path& dir) {
  // Parse and validate entirely beside the serving path; readers keep hitting
  // the current model until the single swap below.
  {
    std::lock_guard lock(mutex_);
    if (current_) {
      // Peek at the manifest version to keep the reload-current case cheap.
      std::ifstream in(dir / "manifest.json");
      if (in) {
        nlohmann::json manifest;
        try {
          in >> manifest;
          if (manifest.value("version_id", "") == current_->version_id)
            return current_->version_id;
        } catch (const nlohmann::json::exception&) {
          // fall through; the full load reports the error
        }
      }
    }
  }

  std::shared_ptr<const EmbeddingModel> incoming = load_embedding_model(dir);

  std::shared_ptr<const EmbeddingModel> displaced;
  std::string version;
  {
    std::lock_guard lock(mutex_);
    const std::uint64_t current_bytes = current_ ? current_->total_bytes : 0;
    if (current_ && current_->version_id != incoming->version_id &&
        current_bytes + incoming->total_bytes > config_.memory_budget_bytes)
      throw Unavailable("load_model: current + incoming models exceed the memory budget");
    displaced = std::move(current_);
    current_ = std::move(incoming);
    version = current_->version_id;
  }
  // `displaced` releases out here so a big deallocation never blocks readers.
  return version;
}

std::string CpuLeaf::current_version() const {
  std::lock_guard lock(mutex_);
  return current_ ? current_->version_id : "";
}

nlohmann::json CpuLeaf::handle_generate(const nlohmann::json& request) {
  const std::string id = request.value("request_id", "");

  // One snapshot per request: every table answered below belongs to the same
  // model generation and the response V is exactly that generation's id.
  std::shared_ptr<const EmbeddingModel> model;
  {
    std::lock_guard lock(mutex_);
    model = current_;
  }
  if (!model) return wire::error_response(id, "no_model", "no embedding model loaded");

  nlohmann::json embeddings = nlohmann::json::object();
  const auto ids_field = request.find("ids");
  if (ids_field == request.end() || !ids_field->is_object())
    return wire::error_response(id, "bad_request", "missing ids object");

  for (const auto& [name, id_list] : ids_field->items()) {
    const auto table_it = model->tables.find(name);
    if (table_it == model->tables.end())
      return wire::error_response(id, "unknown_table", "no table named '" + name + "'");
    std::vector<EntityId> ids;
    try {
      ids = id_list.get<std::vector<EntityId>>();
    } catch (const nlohmann::json::exception& e) {
      return wire::error_response(id, "bad_request", e.what());
    }
    const LookupResult result = table_it->second.lookup_ids(ids);
    nlohmann::json matrix = nlohmann::json::array();
    for (std::size_t i = 0; i < result.batch; ++i) {
      const auto row = result.row(i);
      matrix.push_back(std::vector<float>(row.begin(), row.end()));
    }
    embeddings[name] = std::move(matrix);
  }
  return {{"request_id", id}, {"version_id", model->version_id}, {"embeddings", embeddings}};
}

nlohmann::json CpuLeaf::handle(const nlohmann::json& request) {
  const std::string id = request.is_object() ? request.value("request_id", "") : "";
  if (!request.is_object() || !request.contains("op"))
    return wire::error_response(id, "bad_request", "missing op");
  const std::string op = request.at("op").get<std::string>();

  if (op == "generate_embeddings") return handle_generate(request);

  if (op == "load_model") {
    try {
      const std::string version = load_model(request.at("path").get<std::string>());
      return {{"request_id", id}, {"version_id", version}};
    } catch (const IntegrityError& e) {
      return wire::error_response(id, "integrity_error", e.what());
    } catch (const Unavailable& e) {
      return wire::error_response(id, "memory_budget", e.what());
    } catch (const std::exception& e) {
      return wire::error_response(id, "load_error", e.what());
    }
  }

  if (op == "status") {
    nlohmann::json response = {{"request_id", id}, {"version_id", current_version()}};
    return response;
  }

  return wire::error_response(id, "bad_request", "unknown op '" + op + "'");
}

}  // namespace embrank
