#include "embrank/synthetic.hpp"

#include <cmath>

#include "embrank/losses.hpp"
#include "embrank/rng.hpp"

namespace embrank {

namespace {

constexpr std::uint64_t kUserSalt = 0x75736572ULL;  // "user"
constexpr std::uint64_t kPinSalt = 0x70696eULL;     // "pin"

std::uint32_t hashed_block(std::uint64_t seed, std::uint64_t salt, EntityId id,
                           std::uint32_t num_blocks) {
  return static_cast<std::uint32_t>(splitmix64_mix(seed ^ splitmix64_mix(salt ^ id)) % num_blocks);
}

// Per-entity logit offset in [-effect, effect] land, deterministic in id.
double hashed_offset(std::uint64_t seed, std::uint64_t salt, EntityId id, double stddev) {
  Rng rng(derive_seed(seed, splitmix64_mix(salt ^ id)));
  return rng.normal(0.0, stddev);
}

}  // namespace

std::uint32_t block_of_user(const BlockModelConfig& cfg, EntityId user) {
  return hashed_block(cfg.seed, kUserSalt, user, cfg.num_blocks);
}

std::uint32_t block_of_pin(const BlockModelConfig& cfg, EntityId pin) {
  return hashed_block(cfg.seed, kPinSalt, pin, cfg.num_blocks);
}

std::vector<InteractionRecord> block_model_interactions(const BlockModelConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 1));
  std::vector<InteractionRecord> out;
  out.reserve(cfg.num_interactions);
  std::int64_t ts = 0;
  while (out.size() < cfg.num_interactions) {
    const EntityId user = rng.uniform_u64(cfg.num_users);
    const EntityId pin = rng.uniform_u64(cfg.num_pins);
    const bool same = block_of_user(cfg, user) == block_of_pin(cfg, pin);
    const double accept = same ? cfg.within_rate : cfg.cross_rate;
    if (!rng.bernoulli(accept)) continue;
    out.push_back({user, pin, InteractionKind::CLICK, ts++});
  }
  return out;
}

std::vector<LabeledExample> block_model_labeled(const BlockModelConfig& cfg,
                                                const LabeledDataConfig& lcfg) {
  Rng rng(derive_seed(lcfg.seed, 2));
  Rng effects(derive_seed(lcfg.seed, 3));
  std::vector<double> alpha(cfg.num_blocks), beta(cfg.num_blocks);
  for (auto& a : alpha) a = effects.normal(0.0, lcfg.block_effect);
  for (auto& b : beta) b = effects.normal(0.0, lcfg.block_effect);

  std::vector<LabeledExample> out;
  out.reserve(lcfg.num_examples);
  for (std::uint32_t i = 0; i < lcfg.num_examples; ++i) {
    LabeledExample ex;
    ex.user_id = rng.uniform_u64(cfg.num_users);
    ex.pin_id = rng.uniform_u64(cfg.num_pins);
    double logit = alpha[block_of_user(cfg, ex.user_id)] + beta[block_of_pin(cfg, ex.pin_id)];
    logit += hashed_offset(lcfg.seed, kUserSalt, ex.user_id, lcfg.idiosyncratic_effect);
    logit += hashed_offset(lcfg.seed, kPinSalt, ex.pin_id, lcfg.idiosyncratic_effect);
    ex.dense.resize(lcfg.dense_dim);
    double dense_sum = 0;
    for (std::uint32_t j = 0; j < lcfg.dense_dim; ++j) {
      ex.dense[j] = static_cast<float>(rng.normal());
      dense_sum += (j % 2 == 0 ? 1.0 : -1.0) * ex.dense[j];
    }
    if (lcfg.dense_dim > 0) logit += lcfg.dense_effect * dense_sum / std::sqrt(lcfg.dense_dim);
    ex.label = rng.bernoulli(sigmoid(logit)) ? 1 : 0;
    out.push_back(std::move(ex));
  }
  return out;
}

std::uint32_t drifting_block_of_user(const DriftConfig& cfg, EntityId user, std::uint32_t period) {
  std::uint32_t block = block_of_user(cfg.base, user);
  for (std::uint32_t p = 1; p <= period; ++p) {
    Rng rng(derive_seed(cfg.base.seed, splitmix64_mix(kUserSalt ^ (user * 31 + p))));
    if (rng.bernoulli(cfg.reassign_prob))
      block = static_cast<std::uint32_t>(rng.uniform_u64(cfg.base.num_blocks));
  }
  return block;
}

std::uint32_t drifting_block_of_pin(const DriftConfig& cfg, EntityId pin, std::uint32_t period) {
  std::uint32_t block = block_of_pin(cfg.base, pin);
  for (std::uint32_t p = 1; p <= period; ++p) {
    Rng rng(derive_seed(cfg.base.seed, splitmix64_mix(kPinSalt ^ (pin * 37 + p))));
    if (rng.bernoulli(cfg.reassign_prob))
      block = static_cast<std::uint32_t>(rng.uniform_u64(cfg.base.num_blocks));
  }
  return block;
}

DriftingStream drifting_block_stream(const DriftConfig& cfg) {
  DriftingStream stream;
  const auto& base = cfg.base;
  Rng rng(derive_seed(base.seed, 4));
  Rng effects(derive_seed(cfg.labeled.seed, 3));
  std::vector<double> alpha(base.num_blocks), beta(base.num_blocks);
  for (auto& a : alpha) a = effects.normal(0.0, cfg.labeled.block_effect);
  for (auto& b : beta) b = effects.normal(0.0, cfg.labeled.block_effect);

  for (std::uint32_t period = 0; period < cfg.num_periods; ++period) {
    const std::int64_t t0 = static_cast<std::int64_t>(period) * cfg.period_seconds;
    // Engagement for this period under the period's assignments.
    std::uint32_t emitted = 0;
    std::int64_t ts = t0;
    while (emitted < base.num_interactions) {
      const EntityId user = rng.uniform_u64(base.num_users);
      const EntityId pin = rng.uniform_u64(base.num_pins);
      const bool same =
          drifting_block_of_user(cfg, user, period) == drifting_block_of_pin(cfg, pin, period);
      if (!rng.bernoulli(same ? base.within_rate : base.cross_rate)) continue;
      stream.interactions.push_back({user, pin, InteractionKind::CLICK, ts++});
      ++emitted;
    }
    // Labeled examples for this period.
    for (std::uint32_t i = 0; i < cfg.labeled.num_examples; ++i) {
      LabeledExample ex;
      ex.user_id = rng.uniform_u64(base.num_users);
      ex.pin_id = rng.uniform_u64(base.num_pins);
      double logit = alpha[drifting_block_of_user(cfg, ex.user_id, period)] +
                     beta[drifting_block_of_pin(cfg, ex.pin_id, period)];
      logit += hashed_offset(cfg.labeled.seed, kUserSalt, ex.user_id, cfg.labeled.idiosyncratic_effect);
      logit += hashed_offset(cfg.labeled.seed, kPinSalt, ex.pin_id, cfg.labeled.idiosyncratic_effect);
      ex.dense.resize(cfg.labeled.dense_dim);
      double dense_sum = 0;
      for (std::uint32_t j = 0; j < cfg.labeled.dense_dim; ++j) {
        ex.dense[j] = static_cast<float>(rng.normal());
        dense_sum += (j % 2 == 0 ? 1.0 : -1.0) * ex.dense[j];
      }
      if (cfg.labeled.dense_dim > 0)
        logit += cfg.labeled.dense_effect * dense_sum / std::sqrt(cfg.labeled.dense_dim);
      ex.label = rng.bernoulli(sigmoid(logit)) ? 1 : 0;
      stream.labeled.push_back(std::move(ex));
      stream.labeled_timestamps.push_back(t0 + static_cast<std::int64_t>(i));
    }
  }
  return stream;
}

std::vector<KGTriple> kg_generate(const KgGeneratorConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 5));
  std::vector<KGTriple> out;
  out.reserve(cfg.num_pins * 2 + cfg.num_engagement_edges);

  auto pin_block = [&](EntityId pin) {
    return hashed_block(cfg.seed, kPinSalt, pin, cfg.num_blocks);
  };
  auto user_block = [&](EntityId user) {
    return hashed_block(cfg.seed, kUserSalt, user, cfg.num_blocks);
  };

  // Structural edges: every pin belongs to an advertiser in its block's slice
  // and depicts one image signature; some pins map to catalog items.
  for (EntityId pin = 0; pin < cfg.num_pins; ++pin) {
    const std::uint32_t block = pin_block(pin);
    const EntityId adv = block * (cfg.num_advertisers / cfg.num_blocks) +
                         rng.uniform_u64(std::max(1u, cfg.num_advertisers / cfg.num_blocks));
    out.push_back({{EntityType::PIN, pin}, Relation::BELONGS_TO, {EntityType::ADVERTISER, adv}});
    out.push_back({{EntityType::PIN, pin},
                   Relation::DEPICTS,
                   {EntityType::IMAGE_SIG, rng.uniform_u64(cfg.num_image_sigs)}});
    if (rng.bernoulli(0.5))
      out.push_back(
          {{EntityType::PIN, pin}, Relation::DEPICTS, {EntityType::ITEM, rng.uniform_u64(cfg.num_items)}});
  }

  // Engagement and conversion edges concentrated within blocks.
  std::uint32_t emitted = 0;
  while (emitted < cfg.num_engagement_edges) {
    const EntityId user = rng.uniform_u64(cfg.num_users);
    const EntityId pin = rng.uniform_u64(cfg.num_pins);
    const bool same = user_block(user) == pin_block(pin);
    if (!rng.bernoulli(same ? cfg.within_rate : cfg.cross_rate)) continue;
    const Relation rel = rng.bernoulli(0.25) ? Relation::CONVERTED : Relation::ENGAGED;
    out.push_back({{EntityType::USER, user}, rel, {EntityType::PIN, pin}});
    ++emitted;
  }
  return out;
}

}  // namespace embrank
