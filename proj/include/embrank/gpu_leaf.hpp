#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace embrank {

enum class HeadKind : std::uint8_t { CTR = 0, CVR = 1 };

// Logistic head(s) over [concatenated table embeddings || dense features].
// CTR carries one head, CVR two (click-through and view-through). Scoring is
// f32 arithmetic with a fixed summation order, so identical inputs produce
// bitwise-identical scores everywhere.
struct UpperModel {
  std::string version_id;
  HeadKind head_kind = HeadKind::CTR;
  std::vector<std::pair<std::string, std::uint32_t>> layout;  // table name, dim
  std::uint32_t dense_dim = 0;
  struct Head {
    std::vector<float> weights;
    float bias = 0.0f;
  };
  std::vector<Head> heads;      // 1 for CTR, 2 for CVR
  std::string fingerprint;      // FNV-1a64 over version, layout, and weights

  std::uint32_t input_dim() const;

  // Scores one example; embeddings keyed by layout table name, each of that
  // table's dim. Returns 1 (CTR) or 2 (CVR) probabilities.
  std::vector<float> score(const std::map<std::string, std::vector<float>>& embeddings,
                           std::span<const float> dense) const;

  static UpperModel load(const std::filesystem::path& path);
  static UpperModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

std::string model_fingerprint(const UpperModel& model);

// Utility combination for the auction stage: ctr * ccvr + vtcvr, clamped to
// [0, 1]. Inputs outside [0, 1] are invalid.
double combine_utility(double ctr, double ccvr, double vtcvr);

// The upper-model scorer service: hosts several model versions concurrently
// and scores payloads strictly with the version they name.
class GpuLeaf {
 public:
  explicit GpuLeaf(std::uint32_t max_versions = 2);

  // Throws on parse errors; installing an identical version twice is a no-op.
  std::string install_model(const std::filesystem::path& path);
  void install_model(UpperModel model);
  void retire_model(const std::string& version_id);
  std::vector<std::string> versions() const;

  // Framed-protocol entry point: ops score, install_model, retire_model, status.
  nlohmann::json handle(const nlohmann::json& request);

 private:
  struct Hosted {
    std::shared_ptr<const UpperModel> model;
    std::chrono::steady_clock::time_point installed_at;
    std::chrono::steady_clock::time_point last_scored;
    bool scored_since_install = false;
  };

  nlohmann::json handle_score(const nlohmann::json& request);

  std::uint32_t max_versions_;
  mutable std::mutex mutex_;
  std::map<std::string, Hosted> models_;
};

}  // namespace embrank
