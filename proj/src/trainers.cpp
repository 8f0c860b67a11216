#include "embrank/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "embrank/losses.hpp"
#include "embrank/rng.hpp"

namespace embrank {

const char* entity_type_name(EntityType t) {
  switch (t) {
    case EntityType::USER: return "user";
    case EntityType::PIN: return "pin";
    case EntityType::ADVERTISER: return "advertiser";
    case EntityType::IMAGE_SIG: return "image_sig";
    case EntityType::ITEM: return "item";
  }
  return "?";
}

EntityType entity_type_from_name(const std::string& name) {
  for (std::uint32_t i = 0; i < kNumEntityTypes; ++i)
    if (name == entity_type_name(static_cast<EntityType>(i))) return static_cast<EntityType>(i);
  throw DataError("unknown entity type: " + name);
}

const char* relation_name(Relation r) {
  switch (r) {
    case Relation::ENGAGED: return "engaged";
    case Relation::CONVERTED: return "converted";
    case Relation::BELONGS_TO: return "belongs_to";
    case Relation::DEPICTS: return "depicts";
  }
  return "?";
}

Relation relation_from_name(const std::string& name) {
  for (std::uint32_t i = 0; i < kNumRelations; ++i)
    if (name == relation_name(static_cast<Relation>(i))) return static_cast<Relation>(i);
  throw DataError("unknown relation: " + name);
}

namespace {

// Sparse double-precision gradient buffer over table rows, applied in row
// order so updates are deterministic.
class RowGrads {
 public:
  explicit RowGrads(std::uint32_t dim) : dim_(dim) {}

  std::vector<double>& at(std::uint64_t row) {
    auto [it, inserted] = grads_.try_emplace(row);
    if (inserted) it->second.assign(dim_, 0.0);
    return it->second;
  }

  void apply_sgd(EmbeddingTable& table, double lr, double inv_batch) {
    for (const auto& [row, grad] : grads_) {
      auto r = table.row_f32(row);
      for (std::uint32_t j = 0; j < dim_; ++j)
        r[j] = static_cast<float>(static_cast<double>(r[j]) - lr * inv_batch * grad[j]);
    }
  }

  void normalize_rows(EmbeddingTable& table) const {
    for (const auto& [row, grad] : grads_) {
      (void)grad;
      auto r = table.row_f32(row);
      double norm2 = 0;
      for (float v : r) norm2 += static_cast<double>(v) * v;
      const double norm = std::sqrt(norm2);
      if (norm > 0) {
        for (float& v : r) v = static_cast<float>(v / norm);
      }
    }
  }

  void clear() { grads_.clear(); }
  const std::map<std::uint64_t, std::vector<double>>& rows() const { return grads_; }

 private:
  std::uint32_t dim_;
  std::map<std::uint64_t, std::vector<double>> grads_;
};

std::vector<double> widen(std::span<const float> row) {
  return std::vector<double>(row.begin(), row.end());
}

void add_scaled(std::vector<double>& acc, const std::vector<double>& g) {
  for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
}

void normalize_all_rows(EmbeddingTable& table) {
  for (std::uint64_t r = 0; r < table.num_rows(); ++r) {
    auto row = table.row_f32(r);
    double norm2 = 0;
    for (float v : row) norm2 += static_cast<double>(v) * v;
    const double norm = std::sqrt(norm2);
    if (norm > 0)
      for (float& v : row) v = static_cast<float>(v / norm);
  }
}

}  // namespace

ContrastiveTables contrastive_pretrain(std::span<const InteractionRecord> interactions,
                                       const TrainConfig& config) {
  config.validate();
  if (interactions.empty()) throw InvalidArgument("contrastive_pretrain: empty interaction list");
  for (const auto& rec : interactions)
    if (rec.timestamp < 0) throw DataError("contrastive_pretrain: negative timestamp");

  EmbeddingTable user_table = EmbeddingTable::random_init(
      "user", "pretrain", config.num_rows, config.dim, derive_seed(config.seed, 1));
  EmbeddingTable pin_table = EmbeddingTable::random_init(
      "pin", "pretrain", config.num_rows, config.dim, derive_seed(config.seed, 2));

  Rng order_rng(derive_seed(config.seed, 3));
  Rng negative_rng(derive_seed(config.seed, 4));

  std::vector<std::uint32_t> order(interactions.size());
  std::iota(order.begin(), order.end(), 0);

  RowGrads user_grads(config.dim);
  RowGrads pin_grads(config.dim);

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t batch = end - start;

      std::vector<std::uint64_t> user_rows(batch), pin_rows(batch);
      std::vector<std::vector<double>> anchors(batch), positives(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        const auto& rec = interactions[order[start + i]];
        user_rows[i] = hash_to_row(rec.user_id, config.num_rows);
        pin_rows[i] = hash_to_row(rec.pin_id, config.num_rows);
        anchors[i] = widen(user_table.row_f32(user_rows[i]));
        positives[i] = widen(pin_table.row_f32(pin_rows[i]));
      }

      // Out-batch negative rows are drawn up front so the RNG stream does not
      // depend on how the per-anchor loop below is organized.
      std::vector<std::vector<std::uint64_t>> out_rows(batch);
      std::vector<std::vector<std::vector<double>>> out_vecs(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        out_rows[i].reserve(config.num_out_batch_negatives);
        for (std::uint32_t k = 0; k < config.num_out_batch_negatives; ++k) {
          const std::uint64_t row = negative_rng.uniform_u64(config.num_rows);
          out_rows[i].push_back(row);
          out_vecs[i].push_back(widen(pin_table.row_f32(row)));
        }
      }

      user_grads.clear();
      pin_grads.clear();

      // Per-anchor InfoNCE against the other in-batch pins plus the sampled
      // out-batch rows: same math as infonce_loss(), inlined to accumulate
      // into the sparse gradients without per-candidate copies.
      const double inv_tau = 1.0 / config.temperature;
      std::vector<double> logits, weights;
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t k_total = batch - 1 + out_rows[i].size();
        if (k_total == 0) continue;  // single-example batch with no negatives available
        logits.assign(k_total + 1, 0.0);
        const std::span<const double> anchor(anchors[i]);

        logits[0] = dot(anchor, std::span<const double>(positives[i])) * inv_tau;
        std::size_t slot = 1;
        for (std::size_t j = 0; j < batch; ++j) {
          if (j == i) continue;
          logits[slot++] = dot(anchor, std::span<const double>(positives[j])) * inv_tau;
        }
        for (const auto& v : out_vecs[i])
          logits[slot++] = dot(anchor, std::span<const double>(v)) * inv_tau;

        const double max_logit = *std::max_element(logits.begin(), logits.end());
        weights.assign(logits.size(), 0.0);
        double denom = 0;
        for (std::size_t k = 0; k < logits.size(); ++k) {
          weights[k] = std::exp(logits[k] - max_logit);
          denom += weights[k];
        }
        for (double& w : weights) w /= denom;

        auto& anchor_grad = user_grads.at(user_rows[i]);
        auto accumulate_pair = [&](const std::vector<double>& pin_vec, std::uint64_t pin_row,
                                   double coef) {
          auto& pin_grad = pin_grads.at(pin_row);
          for (std::uint32_t jj = 0; jj < config.dim; ++jj) {
            pin_grad[jj] += coef * anchors[i][jj];
            anchor_grad[jj] += coef * pin_vec[jj];
          }
        };
        accumulate_pair(positives[i], pin_rows[i], (weights[0] - 1.0) * inv_tau);
        slot = 1;
        for (std::size_t j = 0; j < batch; ++j) {
          if (j == i) continue;
          accumulate_pair(positives[j], pin_rows[j], weights[slot++] * inv_tau);
        }
        for (std::size_t k = 0; k < out_vecs[i].size(); ++k)
          accumulate_pair(out_vecs[i][k], out_rows[i][k], weights[slot++] * inv_tau);
      }

      const double inv_batch = 1.0 / static_cast<double>(batch);
      user_grads.apply_sgd(user_table, config.learning_rate, inv_batch);
      pin_grads.apply_sgd(pin_table, config.learning_rate, inv_batch);
      user_grads.normalize_rows(user_table);
      pin_grads.normalize_rows(pin_table);
    }
  }
  return {std::move(user_table), std::move(pin_table)};
}

std::vector<float> KgeTables::entity_vec(EntityType type, EntityId id) const {
  const auto it = entity_tables.find(type);
  if (it == entity_tables.end())
    throw InvalidArgument(std::string("kge: no table for entity type ") + entity_type_name(type));
  return it->second.row(hash_to_row(id, it->second.num_rows()));
}

std::span<const float> KgeTables::relation_vec(Relation r) const {
  return relation_table.row_f32(static_cast<std::uint64_t>(r));
}

KgeTables kge_pretrain(std::span<const KGTriple> triples, const TrainConfig& config,
                       std::vector<double>* epoch_loss) {
  config.validate();
  if (triples.empty()) throw InvalidArgument("kge_pretrain: empty triple list");

  std::map<EntityType, std::set<EntityId>> seen;
  for (const auto& t : triples) {
    if (t.head.type == t.tail.type && t.head.id == t.tail.id)
      throw DataError("kge_pretrain: self-loop triple (head == tail)");
    seen[t.head.type].insert(t.head.id);
    seen[t.tail.type].insert(t.tail.id);
  }

  KgeTables out{
      {},
      EmbeddingTable::random_init("kge_relation", "pretrain", kNumRelations, config.dim,
                                  derive_seed(config.seed, 20)),
      {}};
  for (const auto& [type, ids] : seen) {
    out.entity_tables.emplace(
        type, EmbeddingTable::random_init(std::string("kge_") + entity_type_name(type), "pretrain",
                                          config.num_rows, config.dim,
                                          derive_seed(config.seed, 10 + static_cast<int>(type))));
    out.entities.emplace(type, std::vector<EntityId>(ids.begin(), ids.end()));
  }
  // Unit entity rows before the first batch; updates re-normalize as they go.
  for (auto& [type, table] : out.entity_tables) normalize_all_rows(table);

  Rng order_rng(derive_seed(config.seed, 21));
  Rng corrupt_rng(derive_seed(config.seed, 22));
  std::vector<std::uint32_t> order(triples.size());
  std::iota(order.begin(), order.end(), 0);

  std::map<EntityType, RowGrads> entity_grads;
  for (const auto& [type, table] : out.entity_tables) entity_grads.emplace(type, RowGrads(config.dim));
  RowGrads relation_grads(config.dim);

  if (epoch_loss) epoch_loss->clear();
  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t batch = end - start;

      for (auto& [type, grads] : entity_grads) grads.clear();
      relation_grads.clear();

      for (std::size_t i = start; i < end; ++i) {
        const KGTriple& triple = triples[order[i]];
        const auto& head_table = out.entity_tables.at(triple.head.type);
        const auto& tail_table = out.entity_tables.at(triple.tail.type);
        const std::uint64_t head_row = hash_to_row(triple.head.id, head_table.num_rows());
        const std::uint64_t tail_row = hash_to_row(triple.tail.id, tail_table.num_rows());
        const std::uint64_t rel_row = static_cast<std::uint64_t>(triple.relation);

        // Fair-coin corruption with a uniform same-type entity.
        const bool corrupt_head = corrupt_rng.bernoulli(0.5);
        const EntityType corrupted_type = corrupt_head ? triple.head.type : triple.tail.type;
        const auto& pool = out.entities.at(corrupted_type);
        const EntityId corrupted_id = pool[corrupt_rng.uniform_u64(pool.size())];
        const auto& corrupted_table = out.entity_tables.at(corrupted_type);
        const std::uint64_t corrupted_row = hash_to_row(corrupted_id, corrupted_table.num_rows());

        const std::vector<double> h = widen(head_table.row_f32(head_row));
        const std::vector<double> r = widen(out.relation_table.row_f32(rel_row));
        const std::vector<double> t = widen(tail_table.row_f32(tail_row));
        const std::vector<double> nh = corrupt_head ? widen(corrupted_table.row_f32(corrupted_row)) : h;
        const std::vector<double> nt = corrupt_head ? t : widen(corrupted_table.row_f32(corrupted_row));

        const auto result = margin_ranking_loss<double>(h, r, t, nh, nt, config.margin);
        loss_sum += result.loss;
        if (result.loss == 0) continue;

        add_scaled(entity_grads.at(triple.head.type).at(head_row), result.grad_head);
        add_scaled(entity_grads.at(triple.tail.type).at(tail_row), result.grad_tail);
        add_scaled(relation_grads.at(rel_row), result.grad_relation);
        if (corrupt_head)
          add_scaled(entity_grads.at(corrupted_type).at(corrupted_row), result.grad_neg_head);
        else
          add_scaled(entity_grads.at(corrupted_type).at(corrupted_row), result.grad_neg_tail);
      }

      const double inv_batch = 1.0 / static_cast<double>(batch);
      for (auto& [type, grads] : entity_grads) {
        grads.apply_sgd(out.entity_tables.at(type), config.learning_rate, inv_batch);
        grads.normalize_rows(out.entity_tables.at(type));
      }
      relation_grads.apply_sgd(out.relation_table, config.learning_rate, inv_batch);
    }
    if (epoch_loss) epoch_loss->push_back(loss_sum / static_cast<double>(order.size()));
  }
  return out;
}

double kge_score(const KgeTables& tables, const KGNode& head, Relation relation,
                 const KGNode& tail) {
  const std::vector<float> h = tables.entity_vec(head.type, head.id);
  const std::vector<float> t = tables.entity_vec(tail.type, tail.id);
  const auto r = tables.relation_vec(relation);
  double acc = 0;
  for (std::size_t j = 0; j < h.size(); ++j) {
    const double d = static_cast<double>(h[j]) + r[j] - t[j];
    acc += d * d;
  }
  return -std::sqrt(acc);
}

double link_prediction_eval(const KgeTables& tables, std::span<const KGTriple> held_out,
                            std::uint32_t num_candidates, std::uint64_t seed,
                            bool dedup_candidates) {
  if (held_out.empty()) throw InvalidArgument("link_prediction_eval: empty held-out set");
  if (num_candidates < 2) throw InvalidArgument("link_prediction_eval: num_candidates must be >= 2");

  Rng rng(derive_seed(seed, 30));
  double mrr_sum = 0;
  for (const auto& triple : held_out) {
    const auto& pool = tables.entities.at(triple.tail.type);
    const double true_score = kge_score(tables, triple.head, triple.relation, triple.tail);

    std::uint64_t better = 0, tied_lower_id = 0;
    for (std::uint32_t c = 0; c + 1 < num_candidates; ++c) {
      EntityId cand = pool[rng.uniform_u64(pool.size())];
      if (dedup_candidates) {
        // Resample away from the true tail while the pool allows it.
        for (int attempt = 0; attempt < 64 && cand == triple.tail.id; ++attempt)
          cand = pool[rng.uniform_u64(pool.size())];
      }
      const double s = kge_score(tables, triple.head, triple.relation, {triple.tail.type, cand});
      if (s > true_score)
        ++better;
      else if (s == true_score && cand < triple.tail.id)
        ++tied_lower_id;
    }
    const std::uint64_t rank = 1 + better + tied_lower_id;
    mrr_sum += 1.0 / static_cast<double>(rank);
  }
  return mrr_sum / static_cast<double>(held_out.size());
}

double DownstreamModel::predict(std::span<const float> user_row, std::span<const float> pin_row,
                                std::span<const float> dense) const {
  if (user_row.size() != dim || pin_row.size() != dim || dense.size() != dense_dim)
    throw InvalidArgument("DownstreamModel::predict: dimension mismatch");
  double logit = bias;
  std::size_t w = 0;
  for (float v : user_row) logit += static_cast<double>(weights[w++]) * v;
  for (float v : pin_row) logit += static_cast<double>(weights[w++]) * v;
  for (float v : dense) logit += static_cast<double>(weights[w++]) * v;
  return sigmoid(logit);
}

FinetuneResult finetune(std::span<const LabeledExample> train, const ContrastiveTables* pretrained,
                        bool freeze_tables, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw InvalidArgument("finetune: empty training set");
  const std::uint32_t dense_dim = static_cast<std::uint32_t>(train[0].dense.size());
  for (const auto& ex : train) {
    if (ex.label != 0 && ex.label != 1) throw DataError("finetune: label outside {0,1}");
    if (ex.dense.size() != dense_dim) throw DataError("finetune: inconsistent dense dims");
  }
  if (pretrained && (pretrained->user_table.dim() != config.dim ||
                     pretrained->user_table.num_rows() != config.num_rows ||
                     pretrained->pin_table.num_rows() != config.num_rows))
    throw InvalidArgument("finetune: pretrained table shape does not match config");

  EmbeddingTable user_table =
      pretrained ? pretrained->user_table
                 : EmbeddingTable::random_init("user", "scratch", config.num_rows, config.dim,
                                               derive_seed(config.seed, 40));
  EmbeddingTable pin_table =
      pretrained ? pretrained->pin_table
                 : EmbeddingTable::random_init("pin", "scratch", config.num_rows, config.dim,
                                               derive_seed(config.seed, 41));

  DownstreamModel model;
  model.dim = config.dim;
  model.dense_dim = dense_dim;
  model.freeze_tables = freeze_tables;
  model.weights.assign(2 * config.dim + dense_dim, 0.0f);
  model.bias = 0.0f;

  Rng order_rng(derive_seed(config.seed, 42));
  std::vector<std::uint32_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> weight_grad(model.weights.size());
  RowGrads user_grads(config.dim);
  RowGrads pin_grads(config.dim);

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t batch = end - start;

      std::fill(weight_grad.begin(), weight_grad.end(), 0.0);
      double bias_grad = 0;
      user_grads.clear();
      pin_grads.clear();

      for (std::size_t i = start; i < end; ++i) {
        const LabeledExample& ex = train[order[i]];
        const std::uint64_t user_row = hash_to_row(ex.user_id, config.num_rows);
        const std::uint64_t pin_row = hash_to_row(ex.pin_id, config.num_rows);
        const auto u = user_table.row_f32(user_row);
        const auto p = pin_table.row_f32(pin_row);

        const double prob = model.predict(u, p, ex.dense);
        const double g = prob - ex.label;  // dLogloss/dlogit

        std::size_t w = 0;
        for (std::uint32_t j = 0; j < config.dim; ++j) weight_grad[w++] += g * u[j];
        for (std::uint32_t j = 0; j < config.dim; ++j) weight_grad[w++] += g * p[j];
        for (std::uint32_t j = 0; j < dense_dim; ++j) weight_grad[w++] += g * ex.dense[j];
        bias_grad += g;

        if (!freeze_tables) {
          auto& ugrad = user_grads.at(user_row);
          auto& pgrad = pin_grads.at(pin_row);
          for (std::uint32_t j = 0; j < config.dim; ++j) {
            ugrad[j] += g * model.weights[j];
            pgrad[j] += g * model.weights[config.dim + j];
          }
        }
      }

      const double inv_batch = 1.0 / static_cast<double>(batch);
      for (std::size_t w = 0; w < model.weights.size(); ++w)
        model.weights[w] = static_cast<float>(model.weights[w] -
                                              config.learning_rate * inv_batch * weight_grad[w]);
      model.bias = static_cast<float>(model.bias - config.learning_rate * inv_batch * bias_grad);
      if (!freeze_tables) {
        user_grads.apply_sgd(user_table, config.learning_rate, inv_batch);
        pin_grads.apply_sgd(pin_table, config.learning_rate, inv_batch);
      }
    }
  }
  return {std::move(model), std::move(user_table), std::move(pin_table)};
}

std::vector<double> predict_scores(const DownstreamModel& model, const EmbeddingTable& user_table,
                                   const EmbeddingTable& pin_table,
                                   std::span<const LabeledExample> examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto u = user_table.row_f32(hash_to_row(ex.user_id, user_table.num_rows()));
    const auto p = pin_table.row_f32(hash_to_row(ex.pin_id, pin_table.num_rows()));
    out.push_back(model.predict(u, p, ex.dense));
  }
  return out;
}

}  // namespace embrank
