#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "embrank/errors.hpp"
#include "embrank/table.hpp"

namespace embrank {

enum class InteractionKind : std::uint8_t { CLICK = 0, CONVERSION = 1 };

// One user-pin engagement or conversion event.
struct InteractionRecord {
  EntityId user_id = 0;
  EntityId pin_id = 0;
  InteractionKind kind = InteractionKind::CLICK;
  std::int64_t timestamp = 0;  // seconds since epoch, >= 0
};

enum class EntityType : std::uint8_t { USER = 0, PIN = 1, ADVERTISER = 2, IMAGE_SIG = 3, ITEM = 4 };
inline constexpr std::uint32_t kNumEntityTypes = 5;

enum class Relation : std::uint8_t { ENGAGED = 0, CONVERTED = 1, BELONGS_TO = 2, DEPICTS = 3 };
inline constexpr std::uint32_t kNumRelations = 4;

const char* entity_type_name(EntityType t);
EntityType entity_type_from_name(const std::string& name);
const char* relation_name(Relation r);
Relation relation_from_name(const std::string& name);

struct KGNode {
  EntityType type = EntityType::USER;
  EntityId id = 0;
  bool operator==(const KGNode&) const = default;
};

// Directed heterogeneous graph edge.
struct KGTriple {
  KGNode head;
  Relation relation = Relation::ENGAGED;
  KGNode tail;
};

// Downstream supervision: one user-pin pair with dense side features.
struct LabeledExample {
  EntityId user_id = 0;
  EntityId pin_id = 0;
  std::vector<float> dense;
  int label = 0;  // {0,1}
};

struct TrainConfig {
  std::uint32_t dim = 64;
  std::uint64_t num_rows = 1ull << 16;
  double learning_rate = 0.05;
  std::uint32_t batch_size = 128;
  std::uint32_t epochs = 10;
  double temperature = 0.1;         // contrastive
  double margin = 1.0;              // KGE margin ranking
  std::uint32_t num_out_batch_negatives = 4;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim == 0 || num_rows == 0) throw InvalidArgument("TrainConfig: dim and num_rows must be positive");
    if (!(learning_rate > 0)) throw InvalidArgument("TrainConfig: learning_rate must be positive");
    if (batch_size == 0 || epochs == 0) throw InvalidArgument("TrainConfig: batch_size and epochs must be positive");
    if (!(temperature > 0)) throw InvalidArgument("TrainConfig: temperature must be positive");
    if (!(margin > 0)) throw InvalidArgument("TrainConfig: margin must be positive");
  }
};

}  // namespace embrank
