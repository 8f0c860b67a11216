#pragma once

#include <cstdint>
#include <vector>

#include "embrank/trainers_types.hpp"

namespace embrank {

// Synthetic supervision for the desk-scale benchmarks. Users and pins belong
// to hidden communities ("blocks"); engagement concentrates within blocks, and
// downstream labels carry block-level main effects plus per-entity offsets so
// that pretrained embeddings transfer and fine-tuning still has headroom.

struct BlockModelConfig {
  std::uint32_t num_blocks = 8;
  std::uint32_t num_users = 512;
  std::uint32_t num_pins = 512;
  double within_rate = 0.9;  // acceptance rate for same-block pairs
  double cross_rate = 0.1;   // acceptance rate for cross-block pairs
  std::uint32_t num_interactions = 10000;
  std::uint64_t seed = 7;
};

// Static block assignment, hashed from (seed, side, id).
std::uint32_t block_of_user(const BlockModelConfig& cfg, EntityId user);
std::uint32_t block_of_pin(const BlockModelConfig& cfg, EntityId pin);

// Engagement stream: pairs proposed uniformly, accepted at the within/cross
// rate of their block relation. Timestamps increase by one per event.
std::vector<InteractionRecord> block_model_interactions(const BlockModelConfig& cfg);

struct LabeledDataConfig {
  std::uint32_t num_examples = 6000;
  std::uint32_t dense_dim = 2;
  double block_effect = 1.25;         // stddev of per-block logit offsets
  double idiosyncratic_effect = 0.5;  // stddev of per-entity logit offsets
  double dense_effect = 0.75;         // weight of the shared dense signal
  std::uint64_t seed = 11;
};

// Labeled (user, pin, dense, label) examples over uniform pairs:
//   logit = alpha[user_block] + beta[pin_block] + idio(user) + idio(pin)
//         + dense_effect * pattern . dense
std::vector<LabeledExample> block_model_labeled(const BlockModelConfig& cfg,
                                                const LabeledDataConfig& lcfg);

// Drifting variant: at each period boundary every entity re-rolls its block
// with probability reassign_prob, so pretraining signal decays with the time
// gap between windows.
struct DriftConfig {
  BlockModelConfig base;       // num_interactions applies per period
  LabeledDataConfig labeled;   // num_examples applies per period
  std::uint32_t num_periods = 15;
  double reassign_prob = 0.5;
  std::int64_t period_seconds = 1000;
};

std::uint32_t drifting_block_of_user(const DriftConfig& cfg, EntityId user, std::uint32_t period);
std::uint32_t drifting_block_of_pin(const DriftConfig& cfg, EntityId pin, std::uint32_t period);

struct DriftingStream {
  std::vector<InteractionRecord> interactions;  // timestamped engagement
  std::vector<LabeledExample> labeled;          // downstream supervision
  std::vector<std::int64_t> labeled_timestamps;
};

DriftingStream drifting_block_stream(const DriftConfig& cfg);

// Heterogeneous graph for KGE pretraining: pins cluster under advertisers,
// carry image signatures and items, and users engage within their block.
struct KgGeneratorConfig {
  std::uint32_t num_users = 256;
  std::uint32_t num_pins = 256;
  std::uint32_t num_advertisers = 32;
  std::uint32_t num_image_sigs = 64;
  std::uint32_t num_items = 64;
  std::uint32_t num_engagement_edges = 4000;
  std::uint32_t num_blocks = 8;
  double within_rate = 0.9;
  double cross_rate = 0.1;
  std::uint64_t seed = 13;
};

std::vector<KGTriple> kg_generate(const KgGeneratorConfig& cfg);

}  // namespace embrank
