#include "embrank/gpu_leaf.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "embrank/errors.hpp"
#include "embrank/wire.hpp"

namespace embrank {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& hash, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    hash ^= p[i];
    hash *= kFnvPrime;
  }
}

void fnv_f32(std::uint64_t& hash, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  std::uint8_t le[4] = {static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8),
                        static_cast<std::uint8_t>(bits >> 16), static_cast<std::uint8_t>(bits >> 24)};
  fnv_bytes(hash, le, 4);
}

float f32_sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

std::uint32_t UpperModel::input_dim() const {
  std::uint32_t n = dense_dim;
  for (const auto& [name, dim] : layout) n += dim;
  return n;
}

std::vector<float> UpperModel::score(const std::map<std::string, std::vector<float>>& embeddings,
                                     std::span<const float> dense) const {
  if (dense.size() != dense_dim) throw InvalidArgument("score: dense dim mismatch");
  std::vector<float> input;
  input.reserve(input_dim());
  for (const auto& [name, dim] : layout) {
    const auto it = embeddings.find(name);
    if (it == embeddings.end()) throw InvalidArgument("score: missing embedding for table " + name);
    if (it->second.size() != dim)
      throw InvalidArgument("score: embedding dim mismatch for table " + name);
    input.insert(input.end(), it->second.begin(), it->second.end());
  }
  input.insert(input.end(), dense.begin(), dense.end());

  std::vector<float> out;
  out.reserve(heads.size());
  for (const auto& head : heads) {
    float logit = head.bias;
    for (std::size_t j = 0; j < input.size(); ++j) logit += head.weights[j] * input[j];
    out.push_back(f32_sigmoid(logit));
  }
  return out;
}

std::string model_fingerprint(const UpperModel& model) {
  std::uint64_t hash = kFnvOffset;
  fnv_bytes(hash, model.version_id.data(), model.version_id.size());
  const std::uint8_t kind = static_cast<std::uint8_t>(model.head_kind);
  fnv_bytes(hash, &kind, 1);
  for (const auto& [name, dim] : model.layout) {
    fnv_bytes(hash, name.data(), name.size());
    const std::uint32_t d = dim;
    fnv_bytes(hash, &d, 4);
  }
  fnv_bytes(hash, &model.dense_dim, 4);
  for (const auto& head : model.heads) {
    for (float w : head.weights) fnv_f32(hash, w);
    fnv_f32(hash, head.bias);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

UpperModel UpperModel::from_json(const nlohmann::json& j) {
  UpperModel m;
  m.version_id = j.at("version_id").get<std::string>();
  if (m.version_id.empty()) throw IntegrityError("upper model: empty version_id");
  const std::string kind = j.at("head_kind").get<std::string>();
  if (kind == "ctr")
    m.head_kind = HeadKind::CTR;
  else if (kind == "cvr")
    m.head_kind = HeadKind::CVR;
  else
    throw IoError("upper model: unknown head_kind " + kind);
  for (const auto& t : j.at("layout").at("tables"))
    m.layout.emplace_back(t.at("name").get<std::string>(), t.at("dim").get<std::uint32_t>());
  m.dense_dim = j.at("layout").at("dense_dim").get<std::uint32_t>();
  for (const auto& h : j.at("heads")) {
    UpperModel::Head head;
    head.weights = h.at("weights").get<std::vector<float>>();
    head.bias = h.at("bias").get<float>();
    if (head.weights.size() != m.input_dim())
      throw IoError("upper model: weight count does not match layout");
    m.heads.push_back(std::move(head));
  }
  const std::size_t expected_heads = m.head_kind == HeadKind::CTR ? 1 : 2;
  if (m.heads.size() != expected_heads)
    throw IoError("upper model: head count does not match head_kind");
  m.fingerprint = model_fingerprint(m);
  return m;
}

nlohmann::json UpperModel::to_json() const {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& [name, dim] : layout) tables.push_back({{"name", name}, {"dim", dim}});
  nlohmann::json heads_json = nlohmann::json::array();
  for (const auto& head : heads)
    heads_json.push_back({{"weights", head.weights}, {"bias", head.bias}});
  return {{"version_id", version_id},
          {"head_kind", head_kind == HeadKind::CTR ? "ctr" : "cvr"},
          {"layout", {{"tables", tables}, {"dense_dim", dense_dim}}},
          {"heads", heads_json}};
}

UpperModel UpperModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("upper model: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("upper model: bad json in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void UpperModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("upper model: cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

double combine_utility(double ctr, double ccvr, double vtcvr) {
  for (double v : {ctr, ccvr, vtcvr})
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("combine_utility: inputs must be in [0,1]");
  const double utility = ctr * ccvr + vtcvr;
  return std::min(1.0, std::max(0.0, utility));
}

GpuLeaf::GpuLeaf(std::uint32_t max_versions) : max_versions_(max_versions) {
  if (max_versions_ == 0) throw InvalidArgument("GpuLeaf: max_versions must be positive");
}

std::string GpuLeaf::install_model(const std::filesystem::path& path) {
  UpperModel model = UpperModel::load(path);
  const std::string version = model.version_id;
  install_model(std::move(model));
  return version;
}

void GpuLeaf::install_model(UpperModel model) {
  std::lock_guard lock(mutex_);
  const auto it = models_.find(model.version_id);
  if (it != models_.end()) {
    if (it->second.model->fingerprint != model.fingerprint)
      throw IntegrityError("install_model: version " + model.version_id +
                           " already installed with different weights");
    return;  // idempotent
  }
  if (models_.size() >= max_versions_)
    throw Unavailable("install_model: version limit reached (" + std::to_string(max_versions_) + ")");
  Hosted hosted;
  hosted.model = std::make_shared<const UpperModel>(std::move(model));
  hosted.installed_at = std::chrono::steady_clock::now();
  hosted.last_scored = hosted.installed_at;
  models_.emplace(hosted.model->version_id, std::move(hosted));
}

void GpuLeaf::retire_model(const std::string& version_id) {
  std::lock_guard lock(mutex_);
  const auto it = models_.find(version_id);
  if (it == models_.end()) throw InvalidArgument("retire_model: unknown version " + version_id);
  if (models_.size() == 1)
    throw Unavailable("retire_model: refusing to retire the last version");
  // In-flight scoring holds the shared_ptr, so removal drains naturally.
  models_.erase(it);
}

std::vector<std::string> GpuLeaf::versions() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  out.reserve(models_.size());
  for (const auto& [v, hosted] : models_) out.push_back(v);
  return out;
}

nlohmann::json GpuLeaf::handle_score(const nlohmann::json& request) {
  const std::string id = request.value("request_id", "");
  const std::string version = request.value("version_id", "");

  std::shared_ptr<const UpperModel> model;
  {
    std::lock_guard lock(mutex_);
    const auto it = models_.find(version);
    if (it == models_.end())
      return wire::error_response(id, "version_mismatch",
                                  "no installed model with version_id '" + version + "'");
    it->second.last_scored = std::chrono::steady_clock::now();
    it->second.scored_since_install = true;
    model = it->second.model;
  }

  const std::string head = request.value("head", "ctr");
  if ((head == "ctr") != (model->head_kind == HeadKind::CTR))
    return wire::error_response(id, "bad_payload", "model " + version + " serves head '" +
                                                       (model->head_kind == HeadKind::CTR ? "ctr" : "cvr") +
                                                       "', request asked for '" + head + "'");
  std::map<std::string, std::vector<float>> embeddings;
  std::vector<float> dense;
  try {
    const auto& emb = request.at("embeddings");
    for (const auto& [name, matrix] : emb.items()) {
      if (!matrix.is_array() || matrix.size() != 1)
        return wire::error_response(id, "bad_payload",
                                    "embeddings." + name + " must be a 1-row matrix");
      embeddings[name] = matrix.at(0).get<std::vector<float>>();
    }
    dense = request.value("dense", std::vector<float>{});
  } catch (const nlohmann::json::exception& e) {
    return wire::error_response(id, "bad_payload", e.what());
  }

  std::vector<float> scores;
  try {
    scores = model->score(embeddings, dense);
  } catch (const InvalidArgument& e) {
    return wire::error_response(id, "bad_payload", e.what());
  }

  nlohmann::json response = {{"request_id", id}, {"fingerprint", model->fingerprint}};
  if (model->head_kind == HeadKind::CTR)
    response["score"] = scores[0];
  else
    response["scores"] = scores;
  return response;
}

nlohmann::json GpuLeaf::handle(const nlohmann::json& request) {
  const std::string id = request.is_object() ? request.value("request_id", "") : "";
  if (!request.is_object() || !request.contains("op"))
    return wire::error_response(id, "bad_request", "missing op");
  const std::string op = request.at("op").get<std::string>();

  if (op == "score") return handle_score(request);

  if (op == "install_model") {
    try {
      const std::string version = install_model(request.at("path").get<std::string>());
      return {{"request_id", id}, {"version_id", version}};
    } catch (const IntegrityError& e) {
      return wire::error_response(id, "integrity_error", e.what());
    } catch (const Unavailable& e) {
      return wire::error_response(id, "version_limit", e.what());
    } catch (const std::exception& e) {
      return wire::error_response(id, "load_error", e.what());
    }
  }

  if (op == "retire_model") {
    try {
      retire_model(request.at("version_id").get<std::string>());
      return {{"request_id", id}, {"retired", request.at("version_id").get<std::string>()}};
    } catch (const InvalidArgument& e) {
      return wire::error_response(id, "bad_request", e.what());
    } catch (const Unavailable& e) {
      return wire::error_response(id, "last_version", e.what());
    }
  }

  if (op == "status") {
    std::lock_guard lock(mutex_);
    nlohmann::json versions = nlohmann::json::array();
    nlohmann::json scored_ms_ago = nlohmann::json::object();
    nlohmann::json fingerprints = nlohmann::json::object();
    const auto now = std::chrono::steady_clock::now();
    for (const auto& [v, hosted] : models_) {
      versions.push_back(v);
      if (hosted.scored_since_install)
        scored_ms_ago[v] =
            std::chrono::duration_cast<std::chrono::milliseconds>(now - hosted.last_scored).count();
      else
        scored_ms_ago[v] = -1;
      fingerprints[v] = hosted.model->fingerprint;
    }
    return {{"request_id", id},
            {"versions", versions},
            {"scored_ms_ago", scored_ms_ago},
            {"fingerprints", fingerprints}};
  }

  return wire::error_response(id, "bad_request", "unknown op '" + op + "'");
}

}  // namespace embrank
