#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embrank/rng.hpp"

namespace embrank {

// Opaque 64-bit entity identifier (user / pin / advertiser / image-signature /
// item). Any value is valid; 0 is an ordinary id.
using EntityId = std::uint64_t;

enum class Dtype : std::uint8_t { F32 = 0, F16 = 1, INT4Q = 2 };

const char* dtype_name(Dtype d);

// Deterministic id -> row mapping: SplitMix64 finalizer, then modulo.
// The wire and disk formats depend on this staying fixed forever.
std::uint64_t hash_to_row(EntityId id, std::uint64_t num_rows);

struct LookupResult {
  std::size_t batch = 0;
  std::uint32_t dim = 0;
  std::vector<float> embeddings;       // batch x dim, row-major, query order
  std::vector<std::uint8_t> collided;  // diagnostic: another distinct id in the
                                       // same batch landed on the same row

  std::span<const float> row(std::size_t i) const {
    return {embeddings.data() + i * dim, dim};
  }
};

// Versioned dense matrix with hashed-lookup semantics. Immutable once built
// and published: concurrent read-only lookups are safe, "mutation" is a new
// table. The mutable row accessors exist for builders (trainers, quantizer)
// that own the table exclusively before publishing it.
class EmbeddingTable {
 public:
  // Zero-filled F32 table.
  static EmbeddingTable zeros(std::string table_id, std::string version_id,
                              std::uint64_t num_rows, std::uint32_t dim);

  // Seeded uniform(-1/sqrt(dim), +1/sqrt(dim)) init, F32.
  static EmbeddingTable random_init(std::string table_id, std::string version_id,
                                    std::uint64_t num_rows, std::uint32_t dim,
                                    std::uint64_t seed);

  // F16 table from float data (row-major num_rows x dim).
  static EmbeddingTable from_f16(std::string table_id, std::string version_id,
                                 std::uint64_t num_rows, std::uint32_t dim,
                                 std::vector<std::uint16_t> data);

  static EmbeddingTable from_f32(std::string table_id, std::string version_id,
                                 std::uint64_t num_rows, std::uint32_t dim,
                                 std::vector<float> data);

  // INT4Q table from a packed payload laid out exactly as the on-disk format:
  // per row, ceil(dim/group_size) groups of
  //   scale f32 LE | zero_point u8 | pad u8 | ceil(group_dim/2) code bytes.
  static EmbeddingTable from_int4q(std::string table_id, std::string version_id,
                                   std::uint64_t num_rows, std::uint32_t dim,
                                   std::uint32_t group_size,
                                   std::vector<std::uint8_t> packed);

  const std::string& table_id() const { return table_id_; }
  const std::string& version_id() const { return version_id_; }
  std::uint64_t num_rows() const { return num_rows_; }
  std::uint32_t dim() const { return dim_; }
  Dtype dtype() const { return dtype_; }
  std::uint32_t group_size() const { return group_size_; }  // 0 unless INT4Q

  void set_ids(std::string table_id, std::string version_id);

  // Widen/dequantize one row into `out` (size dim). This is the single
  // dequantization path shared by lookups, serving, and the quant module.
  void read_row(std::uint64_t row, std::span<float> out) const;
  std::vector<float> row(std::uint64_t row) const;

  // Direct F32 row views; throws unless dtype == F32.
  std::span<float> row_f32(std::uint64_t row);
  std::span<const float> row_f32(std::uint64_t row) const;

  const std::vector<float>& f32_data() const;
  const std::vector<std::uint16_t>& f16_data() const;
  const std::vector<std::uint8_t>& int4_data() const;

  // Logical payload size in bytes, matching the on-disk payload exactly.
  std::uint64_t payload_bytes() const;
  std::uint32_t row_stride_bytes() const;
  std::uint32_t num_groups() const;

  bool same_data(const EmbeddingTable& other) const;

 private:
  EmbeddingTable() = default;
  void validate() const;

  std::string table_id_;
  std::string version_id_;
  std::uint64_t num_rows_ = 0;
  std::uint32_t dim_ = 0;
  Dtype dtype_ = Dtype::F32;
  std::uint32_t group_size_ = 0;
  std::vector<float> f32_;
  std::vector<std::uint16_t> f16_;
  std::vector<std::uint8_t> packed_;
};

// Batched hashed lookup; result rows follow query order. Always returns F32
// regardless of the table's storage dtype.
LookupResult lookup(const EmbeddingTable& table, std::span<const EntityId> ids);

// Expected fraction of ids that do not occupy a distinct bucket when n ids
// hash uniformly into m rows: 1 - m*(1 - (1 - 1/m)^n)/n.
double expected_collision_fraction(std::uint64_t n_ids, std::uint64_t num_rows);

}  // namespace embrank
