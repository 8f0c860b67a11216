#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "embrank/synthetic.hpp"
#include "embrank/trainers.hpp"
#include "json.hpp"

namespace embrank {

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

// The committed desk-scale benchmark: contrastive pretraining on a block-model
// engagement stream, then three downstream arms over one labeled set —
// fine-tuned pretrained tables, frozen pretrained tables, and from-scratch
// tables — all scored on a held-out tail.
struct BenefitConfig {
  BlockModelConfig block;
  LabeledDataConfig labeled;
  TrainConfig pretrain;
  TrainConfig finetune;
  double test_fraction = 0.25;

  static BenefitConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static BenefitConfig load(const std::filesystem::path& path);
};

struct BenefitResult {
  double auc_pretrained = 0;
  double auc_frozen = 0;
  double auc_scratch = 0;
  double within_cosine = 0;  // mean cosine of same-block user/pin row pairs
  double cross_cosine = 0;
  bool freeze_contract_held = false;  // frozen arm left tables bitwise unchanged

  nlohmann::json to_json() const;
};

// Runs all three arms with every seed in the config offset by seed_offset, so
// multi-seed studies stay independent but reproducible.
BenefitResult run_benefit(const BenefitConfig& cfg, std::uint64_t seed_offset = 0);

// Mean cosine similarity between user and pin table rows of same-block vs
// cross-block entity pairs (diagnostic for the contrastive objective).
std::pair<double, double> block_cosine_stats(const BlockModelConfig& block,
                                             const ContrastiveTables& tables);

// Fine-tune-quality comparison between F32 pretrained tables and their
// INT4-quantized (dequantized-at-load) counterparts; mean AUC over num_seeds.
struct QuantQualityResult {
  double auc_f32 = 0;
  double auc_int4 = 0;
  nlohmann::json to_json() const;
};
QuantQualityResult run_quant_quality(const BenefitConfig& cfg, std::uint32_t group_size,
                                     std::uint32_t num_seeds);

// Staleness study over the drifting block stream: pretraining window ends
// gap_periods before the fixed fine-tuning window.
struct StalenessConfig {
  DriftConfig drift;
  std::uint32_t pretrain_periods = 6;
  std::uint32_t finetune_periods = 3;
  TrainConfig pretrain;
  TrainConfig finetune;
  double test_fraction = 0.25;
  std::vector<std::uint32_t> gaps = {0, 3, 6};

  static StalenessConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static StalenessConfig load(const std::filesystem::path& path);
};

struct StalenessPoint {
  std::uint32_t gap_periods = 0;
  double auc_pretrained = 0;
  double auc_scratch = 0;
  double auc_gain = 0;
};

// One gap evaluation; throws InvalidArgument when the pretraining window would
// run off the stream or overlap the fine-tuning window.
StalenessPoint staleness_experiment(const StalenessConfig& cfg, const DriftingStream& stream,
                                    std::uint32_t gap_periods);

std::vector<StalenessPoint> run_staleness(const StalenessConfig& cfg);

nlohmann::json staleness_to_json(const std::vector<StalenessPoint>& points);

}  // namespace embrank
