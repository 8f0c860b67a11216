#include "embrank/experiments.hpp"

#include <cmath>
#include <fstream>

#include "embrank/losses.hpp"
#include "embrank/metrics.hpp"
#include "embrank/quant.hpp"

namespace embrank {

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("dim")) cfg.dim = j.at("dim").get<std::uint32_t>();
  if (j.contains("num_rows")) cfg.num_rows = j.at("num_rows").get<std::uint64_t>();
  if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::uint32_t>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::uint32_t>();
  if (j.contains("temperature")) cfg.temperature = j.at("temperature").get<double>();
  if (j.contains("margin")) cfg.margin = j.at("margin").get<double>();
  if (j.contains("num_out_batch_negatives"))
    cfg.num_out_batch_negatives = j.at("num_out_batch_negatives").get<std::uint32_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"dim", cfg.dim},
          {"num_rows", cfg.num_rows},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"temperature", cfg.temperature},
          {"margin", cfg.margin},
          {"num_out_batch_negatives", cfg.num_out_batch_negatives},
          {"seed", cfg.seed}};
}

namespace {

BlockModelConfig block_config_from_json(const nlohmann::json& j) {
  BlockModelConfig cfg;
  if (j.contains("num_blocks")) cfg.num_blocks = j.at("num_blocks").get<std::uint32_t>();
  if (j.contains("num_users")) cfg.num_users = j.at("num_users").get<std::uint32_t>();
  if (j.contains("num_pins")) cfg.num_pins = j.at("num_pins").get<std::uint32_t>();
  if (j.contains("within_rate")) cfg.within_rate = j.at("within_rate").get<double>();
  if (j.contains("cross_rate")) cfg.cross_rate = j.at("cross_rate").get<double>();
  if (j.contains("num_interactions"))
    cfg.num_interactions = j.at("num_interactions").get<std::uint32_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

nlohmann::json block_config_to_json(const BlockModelConfig& cfg) {
  return {{"num_blocks", cfg.num_blocks}, {"num_users", cfg.num_users},
          {"num_pins", cfg.num_pins},     {"within_rate", cfg.within_rate},
          {"cross_rate", cfg.cross_rate}, {"num_interactions", cfg.num_interactions},
          {"seed", cfg.seed}};
}

LabeledDataConfig labeled_config_from_json(const nlohmann::json& j) {
  LabeledDataConfig cfg;
  if (j.contains("num_examples")) cfg.num_examples = j.at("num_examples").get<std::uint32_t>();
  if (j.contains("dense_dim")) cfg.dense_dim = j.at("dense_dim").get<std::uint32_t>();
  if (j.contains("block_effect")) cfg.block_effect = j.at("block_effect").get<double>();
  if (j.contains("idiosyncratic_effect"))
    cfg.idiosyncratic_effect = j.at("idiosyncratic_effect").get<double>();
  if (j.contains("dense_effect")) cfg.dense_effect = j.at("dense_effect").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

nlohmann::json labeled_config_to_json(const LabeledDataConfig& cfg) {
  return {{"num_examples", cfg.num_examples},
          {"dense_dim", cfg.dense_dim},
          {"block_effect", cfg.block_effect},
          {"idiosyncratic_effect", cfg.idiosyncratic_effect},
          {"dense_effect", cfg.dense_effect},
          {"seed", cfg.seed}};
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

// Offsets every seed in the config so independent repetitions stay disjoint.
BenefitConfig offset_seeds(BenefitConfig cfg, std::uint64_t offset) {
  cfg.block.seed = derive_seed(cfg.block.seed, offset * 4 + 1);
  cfg.labeled.seed = derive_seed(cfg.labeled.seed, offset * 4 + 2);
  cfg.pretrain.seed = derive_seed(cfg.pretrain.seed, offset * 4 + 3);
  cfg.finetune.seed = derive_seed(cfg.finetune.seed, offset * 4 + 4);
  return cfg;
}

struct SplitData {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

SplitData split_examples(std::vector<LabeledExample> all, double test_fraction) {
  const std::size_t test_n = static_cast<std::size_t>(std::floor(all.size() * test_fraction));
  if (test_n == 0 || test_n >= all.size())
    throw InvalidArgument("test_fraction leaves an empty split");
  SplitData out;
  out.test.assign(all.end() - static_cast<std::ptrdiff_t>(test_n), all.end());
  all.resize(all.size() - test_n);
  out.train = std::move(all);
  return out;
}

double eval_auc(const FinetuneResult& arm, std::span<const LabeledExample> test) {
  const std::vector<double> scores = predict_scores(arm.model, arm.user_table, arm.pin_table, test);
  std::vector<int> labels(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) labels[i] = test[i].label;
  return roc_auc(scores, labels);
}

}  // namespace

BenefitConfig BenefitConfig::from_json(const nlohmann::json& j) {
  BenefitConfig cfg;
  if (j.contains("block")) cfg.block = block_config_from_json(j.at("block"));
  if (j.contains("labeled")) cfg.labeled = labeled_config_from_json(j.at("labeled"));
  if (j.contains("pretrain")) cfg.pretrain = train_config_from_json(j.at("pretrain"));
  if (j.contains("finetune")) cfg.finetune = train_config_from_json(j.at("finetune"));
  if (j.contains("test_fraction")) cfg.test_fraction = j.at("test_fraction").get<double>();
  return cfg;
}

nlohmann::json BenefitConfig::to_json() const {
  return {{"block", block_config_to_json(block)},
          {"labeled", labeled_config_to_json(labeled)},
          {"pretrain", train_config_to_json(pretrain)},
          {"finetune", train_config_to_json(finetune)},
          {"test_fraction", test_fraction}};
}

BenefitConfig BenefitConfig::load(const std::filesystem::path& path) {
  return from_json(load_json_file(path));
}

nlohmann::json BenefitResult::to_json() const {
  return {{"auc_pretrained", auc_pretrained},
          {"auc_frozen", auc_frozen},
          {"auc_scratch", auc_scratch},
          {"within_cosine", within_cosine},
          {"cross_cosine", cross_cosine},
          {"freeze_contract_held", freeze_contract_held}};
}

std::pair<double, double> block_cosine_stats(const BlockModelConfig& block,
                                             const ContrastiveTables& tables) {
  double within_sum = 0, cross_sum = 0;
  std::uint64_t within_n = 0, cross_n = 0;
  Rng rng(derive_seed(block.seed, 50));
  const std::uint32_t pairs = 20000;
  for (std::uint32_t i = 0; i < pairs; ++i) {
    const EntityId user = rng.uniform_u64(block.num_users);
    const EntityId pin = rng.uniform_u64(block.num_pins);
    const auto u = tables.user_table.row_f32(hash_to_row(user, tables.user_table.num_rows()));
    const auto p = tables.pin_table.row_f32(hash_to_row(pin, tables.pin_table.num_rows()));
    double un = 0, pn = 0, up = 0;
    for (std::uint32_t j = 0; j < u.size(); ++j) {
      un += static_cast<double>(u[j]) * u[j];
      pn += static_cast<double>(p[j]) * p[j];
      up += static_cast<double>(u[j]) * p[j];
    }
    if (un == 0 || pn == 0) continue;
    const double cosine = up / std::sqrt(un * pn);
    if (block_of_user(block, user) == block_of_pin(block, pin)) {
      within_sum += cosine;
      ++within_n;
    } else {
      cross_sum += cosine;
      ++cross_n;
    }
  }
  return {within_n ? within_sum / within_n : 0.0, cross_n ? cross_sum / cross_n : 0.0};
}

BenefitResult run_benefit(const BenefitConfig& base_cfg, std::uint64_t seed_offset) {
  const BenefitConfig cfg = seed_offset == 0 ? base_cfg : offset_seeds(base_cfg, seed_offset);

  const std::vector<InteractionRecord> interactions = block_model_interactions(cfg.block);
  const std::vector<LabeledExample> labeled = block_model_labeled(cfg.block, cfg.labeled);
  const SplitData split = split_examples(labeled, cfg.test_fraction);

  const ContrastiveTables pretrained = contrastive_pretrain(interactions, cfg.pretrain);

  BenefitResult result;
  std::tie(result.within_cosine, result.cross_cosine) = block_cosine_stats(cfg.block, pretrained);

  const FinetuneResult tuned = finetune(split.train, &pretrained, false, cfg.finetune);
  const FinetuneResult frozen = finetune(split.train, &pretrained, true, cfg.finetune);
  const FinetuneResult scratch = finetune(split.train, nullptr, false, cfg.finetune);

  result.freeze_contract_held = frozen.user_table.same_data(pretrained.user_table) &&
                                frozen.pin_table.same_data(pretrained.pin_table);
  result.auc_pretrained = eval_auc(tuned, split.test);
  result.auc_frozen = eval_auc(frozen, split.test);
  result.auc_scratch = eval_auc(scratch, split.test);
  return result;
}

nlohmann::json QuantQualityResult::to_json() const {
  return {{"auc_f32", auc_f32}, {"auc_int4", auc_int4}, {"auc_delta", auc_int4 - auc_f32}};
}

QuantQualityResult run_quant_quality(const BenefitConfig& base_cfg, std::uint32_t group_size,
                                     std::uint32_t num_seeds) {
  if (num_seeds == 0) throw InvalidArgument("run_quant_quality: num_seeds must be positive");
  QuantQualityResult out;
  for (std::uint32_t s = 0; s < num_seeds; ++s) {
    const BenefitConfig cfg = s == 0 ? base_cfg : offset_seeds(base_cfg, 1000 + s);
    const std::vector<InteractionRecord> interactions = block_model_interactions(cfg.block);
    const std::vector<LabeledExample> labeled = block_model_labeled(cfg.block, cfg.labeled);
    const SplitData split = split_examples(labeled, cfg.test_fraction);

    const ContrastiveTables pretrained = contrastive_pretrain(interactions, cfg.pretrain);

    // INT4 arm: quantize the pretrained tables, load them back as F32 rows.
    EmbeddingTable user_q = quantize_int4(pretrained.user_table, group_size);
    EmbeddingTable pin_q = quantize_int4(pretrained.pin_table, group_size);
    std::vector<float> user_deq, pin_deq;
    for (std::uint64_t r = 0; r < user_q.num_rows(); ++r) {
      const auto row = user_q.row(r);
      user_deq.insert(user_deq.end(), row.begin(), row.end());
    }
    for (std::uint64_t r = 0; r < pin_q.num_rows(); ++r) {
      const auto row = pin_q.row(r);
      pin_deq.insert(pin_deq.end(), row.begin(), row.end());
    }
    const ContrastiveTables int4_tables{
        EmbeddingTable::from_f32("user", "pretrain", user_q.num_rows(), user_q.dim(),
                                 std::move(user_deq)),
        EmbeddingTable::from_f32("pin", "pretrain", pin_q.num_rows(), pin_q.dim(),
                                 std::move(pin_deq))};

    const FinetuneResult arm_f32 = finetune(split.train, &pretrained, false, cfg.finetune);
    const FinetuneResult arm_int4 = finetune(split.train, &int4_tables, false, cfg.finetune);
    out.auc_f32 += eval_auc(arm_f32, split.test);
    out.auc_int4 += eval_auc(arm_int4, split.test);
  }
  out.auc_f32 /= num_seeds;
  out.auc_int4 /= num_seeds;
  return out;
}

StalenessConfig StalenessConfig::from_json(const nlohmann::json& j) {
  StalenessConfig cfg;
  if (j.contains("drift")) {
    const auto& d = j.at("drift");
    if (d.contains("base")) cfg.drift.base = block_config_from_json(d.at("base"));
    if (d.contains("labeled")) cfg.drift.labeled = labeled_config_from_json(d.at("labeled"));
    if (d.contains("num_periods")) cfg.drift.num_periods = d.at("num_periods").get<std::uint32_t>();
    if (d.contains("reassign_prob")) cfg.drift.reassign_prob = d.at("reassign_prob").get<double>();
    if (d.contains("period_seconds"))
      cfg.drift.period_seconds = d.at("period_seconds").get<std::int64_t>();
  }
  if (j.contains("pretrain_periods")) cfg.pretrain_periods = j.at("pretrain_periods").get<std::uint32_t>();
  if (j.contains("finetune_periods")) cfg.finetune_periods = j.at("finetune_periods").get<std::uint32_t>();
  if (j.contains("pretrain")) cfg.pretrain = train_config_from_json(j.at("pretrain"));
  if (j.contains("finetune")) cfg.finetune = train_config_from_json(j.at("finetune"));
  if (j.contains("test_fraction")) cfg.test_fraction = j.at("test_fraction").get<double>();
  if (j.contains("gaps")) cfg.gaps = j.at("gaps").get<std::vector<std::uint32_t>>();
  return cfg;
}

nlohmann::json StalenessConfig::to_json() const {
  return {{"drift",
           {{"base", block_config_to_json(drift.base)},
            {"labeled", labeled_config_to_json(drift.labeled)},
            {"num_periods", drift.num_periods},
            {"reassign_prob", drift.reassign_prob},
            {"period_seconds", drift.period_seconds}}},
          {"pretrain_periods", pretrain_periods},
          {"finetune_periods", finetune_periods},
          {"pretrain", train_config_to_json(pretrain)},
          {"finetune", train_config_to_json(finetune)},
          {"test_fraction", test_fraction},
          {"gaps", gaps}};
}

StalenessConfig StalenessConfig::load(const std::filesystem::path& path) {
  return from_json(load_json_file(path));
}

StalenessPoint staleness_experiment(const StalenessConfig& cfg, const DriftingStream& stream,
                                    std::uint32_t gap_periods) {
  const std::uint32_t ft_start = cfg.drift.num_periods - cfg.finetune_periods;
  if (cfg.finetune_periods >= cfg.drift.num_periods)
    throw InvalidArgument("staleness: fine-tune window spans the whole stream");
  if (gap_periods + cfg.pretrain_periods > ft_start)
    throw InvalidArgument("staleness: pretrain window would overlap or precede the stream");
  const std::uint32_t w1_end = ft_start - gap_periods;   // exclusive, in periods
  const std::uint32_t w1_begin = w1_end - cfg.pretrain_periods;

  const std::int64_t w1_begin_ts = static_cast<std::int64_t>(w1_begin) * cfg.drift.period_seconds;
  const std::int64_t w1_end_ts = static_cast<std::int64_t>(w1_end) * cfg.drift.period_seconds;
  const std::int64_t w2_begin_ts = static_cast<std::int64_t>(ft_start) * cfg.drift.period_seconds;

  std::vector<InteractionRecord> pretrain_window;
  for (const auto& rec : stream.interactions)
    if (rec.timestamp >= w1_begin_ts && rec.timestamp < w1_end_ts) pretrain_window.push_back(rec);

  std::vector<LabeledExample> finetune_window;
  for (std::size_t i = 0; i < stream.labeled.size(); ++i)
    if (stream.labeled_timestamps[i] >= w2_begin_ts) finetune_window.push_back(stream.labeled[i]);

  const SplitData split = split_examples(std::move(finetune_window), cfg.test_fraction);

  const ContrastiveTables pretrained = contrastive_pretrain(pretrain_window, cfg.pretrain);
  const FinetuneResult tuned = finetune(split.train, &pretrained, false, cfg.finetune);
  const FinetuneResult scratch = finetune(split.train, nullptr, false, cfg.finetune);

  StalenessPoint point;
  point.gap_periods = gap_periods;
  point.auc_pretrained = eval_auc(tuned, split.test);
  point.auc_scratch = eval_auc(scratch, split.test);
  point.auc_gain = point.auc_pretrained - point.auc_scratch;
  return point;
}

std::vector<StalenessPoint> run_staleness(const StalenessConfig& cfg) {
  const DriftingStream stream = drifting_block_stream(cfg.drift);
  std::vector<StalenessPoint> points;
  points.reserve(cfg.gaps.size());
  for (std::uint32_t gap : cfg.gaps) points.push_back(staleness_experiment(cfg, stream, gap));
  return points;
}

nlohmann::json staleness_to_json(const std::vector<StalenessPoint>& points) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : points)
    arr.push_back({{"gap_periods", p.gap_periods},
                   {"auc_pretrained", p.auc_pretrained},
                   {"auc_scratch", p.auc_scratch},
                   {"auc_gain", p.auc_gain}});
  return arr;
}

}  // namespace embrank
