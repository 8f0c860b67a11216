#pragma once

#include <map>
#include <optional>
#include <span>

#include "embrank/trainers_types.hpp"

namespace embrank {

struct ContrastiveTables {
  EmbeddingTable user_table;
  EmbeddingTable pin_table;
};

// Contrastive user-pin pretraining. Tables start from seeded
// uniform(-1/sqrt(dim), +1/sqrt(dim)); every positive trains against the other
// in-batch pins plus num_out_batch_negatives uniformly sampled pin rows; SGD
// on the mean InfoNCE loss; rows touched by an update are re-normalized to
// unit L2. Bitwise deterministic for a given (seed, config, data).
ContrastiveTables contrastive_pretrain(std::span<const InteractionRecord> interactions,
                                       const TrainConfig& config);

struct KgeTables {
  std::map<EntityType, EmbeddingTable> entity_tables;
  EmbeddingTable relation_table;  // kNumRelations rows, indexed by Relation
  std::map<EntityType, std::vector<EntityId>> entities;  // distinct ids seen, sorted

  std::vector<float> entity_vec(EntityType type, EntityId id) const;
  std::span<const float> relation_vec(Relation r) const;
};

// TransE link-prediction pretraining with margin ranking against one corrupted
// triple (head or tail by fair coin, uniform same-type replacement). Entity
// rows are kept at unit L2 norm around every batch update; relations float
// free. Deterministic given seed. epoch_loss, when given, receives the mean
// margin-ranking loss of each epoch.
KgeTables kge_pretrain(std::span<const KGTriple> triples, const TrainConfig& config,
                       std::vector<double>* epoch_loss = nullptr);

// Score of (h, r, t) under trained tables: -||h + r - t||.
double kge_score(const KgeTables& tables, const KGNode& head, Relation relation,
                 const KGNode& tail);

// Mean reciprocal rank of the true tail among num_candidates - 1 sampled
// same-type entities plus itself, ties broken by ascending entity id. With
// dedup_candidates the sampler avoids drawing the true tail (falls back to
// duplicates only when the pool has no other entity).
double link_prediction_eval(const KgeTables& tables, std::span<const KGTriple> held_out,
                            std::uint32_t num_candidates, std::uint64_t seed,
                            bool dedup_candidates = true);

// Logistic head over [user_emb || pin_emb || dense].
struct DownstreamModel {
  std::uint32_t dim = 0;
  std::uint32_t dense_dim = 0;
  bool freeze_tables = false;
  std::vector<float> weights;  // 2*dim + dense_dim
  float bias = 0.0f;

  double predict(std::span<const float> user_row, std::span<const float> pin_row,
                 std::span<const float> dense) const;
};

struct FinetuneResult {
  DownstreamModel model;
  EmbeddingTable user_table;
  EmbeddingTable pin_table;
};

// Downstream fine-tuning. With pretrained tables and freeze_tables=false the
// batch gradients also flow into the touched table rows; with
// freeze_tables=true the tables come back bitwise unchanged; with no
// pretrained tables training starts from seeded-random tables (the
// from-scratch arm).
FinetuneResult finetune(std::span<const LabeledExample> train,
                        const ContrastiveTables* pretrained, bool freeze_tables,
                        const TrainConfig& config);

std::vector<double> predict_scores(const DownstreamModel& model, const EmbeddingTable& user_table,
                                   const EmbeddingTable& pin_table,
                                   std::span<const LabeledExample> examples);

}  // namespace embrank
