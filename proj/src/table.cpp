#include "embrank/table.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

#include "embrank/errors.hpp"
#include "embrank/half.hpp"

namespace embrank {

const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::F32: return "f32";
    case Dtype::F16: return "f16";
    case Dtype::INT4Q: return "int4q";
  }
  return "?";
}

std::uint64_t hash_to_row(EntityId id, std::uint64_t num_rows) {
  if (num_rows == 0) throw InvalidArgument("hash_to_row: num_rows must be >= 1");
  return splitmix64_mix(id) % num_rows;
}

EmbeddingTable EmbeddingTable::zeros(std::string table_id, std::string version_id,
                                     std::uint64_t num_rows, std::uint32_t dim) {
  EmbeddingTable t;
  t.table_id_ = std::move(table_id);
  t.version_id_ = std::move(version_id);
  t.num_rows_ = num_rows;
  t.dim_ = dim;
  t.dtype_ = Dtype::F32;
  t.f32_.assign(static_cast<std::size_t>(num_rows) * dim, 0.0f);
  t.validate();
  return t;
}

EmbeddingTable EmbeddingTable::random_init(std::string table_id, std::string version_id,
                                           std::uint64_t num_rows, std::uint32_t dim,
                                           std::uint64_t seed) {
  EmbeddingTable t = zeros(std::move(table_id), std::move(version_id), num_rows, dim);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (float& v : t.f32_) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

EmbeddingTable EmbeddingTable::from_f32(std::string table_id, std::string version_id,
                                        std::uint64_t num_rows, std::uint32_t dim,
                                        std::vector<float> data) {
  EmbeddingTable t;
  t.table_id_ = std::move(table_id);
  t.version_id_ = std::move(version_id);
  t.num_rows_ = num_rows;
  t.dim_ = dim;
  t.dtype_ = Dtype::F32;
  t.f32_ = std::move(data);
  t.validate();
  return t;
}

EmbeddingTable EmbeddingTable::from_f16(std::string table_id, std::string version_id,
                                        std::uint64_t num_rows, std::uint32_t dim,
                                        std::vector<std::uint16_t> data) {
  EmbeddingTable t;
  t.table_id_ = std::move(table_id);
  t.version_id_ = std::move(version_id);
  t.num_rows_ = num_rows;
  t.dim_ = dim;
  t.dtype_ = Dtype::F16;
  t.f16_ = std::move(data);
  t.validate();
  return t;
}

EmbeddingTable EmbeddingTable::from_int4q(std::string table_id, std::string version_id,
                                          std::uint64_t num_rows, std::uint32_t dim,
                                          std::uint32_t group_size,
                                          std::vector<std::uint8_t> packed) {
  EmbeddingTable t;
  t.table_id_ = std::move(table_id);
  t.version_id_ = std::move(version_id);
  t.num_rows_ = num_rows;
  t.dim_ = dim;
  t.dtype_ = Dtype::INT4Q;
  t.group_size_ = group_size;
  t.packed_ = std::move(packed);
  t.validate();
  return t;
}

void EmbeddingTable::validate() const {
  if (num_rows_ == 0) throw InvalidArgument("EmbeddingTable: num_rows must be positive");
  if (dim_ == 0) throw InvalidArgument("EmbeddingTable: dim must be positive");
  if (version_id_.empty()) throw InvalidArgument("EmbeddingTable: version_id must be non-empty");
  const std::size_t logical = static_cast<std::size_t>(num_rows_) * dim_;
  switch (dtype_) {
    case Dtype::F32:
      if (f32_.size() != logical) throw InvalidArgument("EmbeddingTable: f32 payload size mismatch");
      break;
    case Dtype::F16:
      if (f16_.size() != logical) throw InvalidArgument("EmbeddingTable: f16 payload size mismatch");
      break;
    case Dtype::INT4Q:
      if (dim_ % 2 != 0) throw InvalidArgument("EmbeddingTable: INT4Q dim must be a multiple of 2");
      if (group_size_ == 0) throw InvalidArgument("EmbeddingTable: INT4Q needs group_size");
      if (packed_.size() != payload_bytes())
        throw InvalidArgument("EmbeddingTable: INT4Q payload size mismatch");
      break;
  }
}

void EmbeddingTable::set_ids(std::string table_id, std::string version_id) {
  if (version_id.empty()) throw InvalidArgument("EmbeddingTable: version_id must be non-empty");
  table_id_ = std::move(table_id);
  version_id_ = std::move(version_id);
}

std::uint32_t EmbeddingTable::num_groups() const {
  if (dtype_ != Dtype::INT4Q) return 0;
  return (dim_ + group_size_ - 1) / group_size_;
}

std::uint32_t EmbeddingTable::row_stride_bytes() const {
  switch (dtype_) {
    case Dtype::F32: return dim_ * 4;
    case Dtype::F16: return dim_ * 2;
    case Dtype::INT4Q: {
      std::uint32_t stride = 0;
      const std::uint32_t groups = num_groups();
      for (std::uint32_t g = 0; g < groups; ++g) {
        const std::uint32_t gdim = std::min(group_size_, dim_ - g * group_size_);
        stride += 6 + (gdim + 1) / 2;  // scale f32 + zp u8 + pad u8 + codes
      }
      return stride;
    }
  }
  return 0;
}

std::uint64_t EmbeddingTable::payload_bytes() const {
  return num_rows_ * static_cast<std::uint64_t>(row_stride_bytes());
}

void EmbeddingTable::read_row(std::uint64_t row, std::span<float> out) const {
  if (row >= num_rows_) throw InvalidArgument("read_row: row index out of range");
  if (out.size() != dim_) throw InvalidArgument("read_row: output span size != dim");
  const std::size_t base = static_cast<std::size_t>(row) * dim_;
  switch (dtype_) {
    case Dtype::F32:
      std::memcpy(out.data(), f32_.data() + base, dim_ * sizeof(float));
      return;
    case Dtype::F16:
      for (std::uint32_t j = 0; j < dim_; ++j) out[j] = f16_to_f32(f16_[base + j]);
      return;
    case Dtype::INT4Q: {
      const std::uint8_t* p = packed_.data() + static_cast<std::size_t>(row) * row_stride_bytes();
      const std::uint32_t groups = num_groups();
      std::uint32_t j = 0;
      for (std::uint32_t g = 0; g < groups; ++g) {
        const std::uint32_t gdim = std::min(group_size_, dim_ - g * group_size_);
        float scale;
        std::memcpy(&scale, p, 4);
        const std::uint8_t zero_point = p[4];
        p += 6;
        for (std::uint32_t k = 0; k < gdim; ++k) {
          const std::uint8_t byte = p[k / 2];
          const std::uint8_t code = (k % 2 == 0) ? (byte & 0x0Fu) : (byte >> 4);
          out[j++] = scale * (static_cast<float>(code) - static_cast<float>(zero_point));
        }
        p += (gdim + 1) / 2;
      }
      return;
    }
  }
}

std::vector<float> EmbeddingTable::row(std::uint64_t r) const {
  std::vector<float> out(dim_);
  read_row(r, out);
  return out;
}

std::span<float> EmbeddingTable::row_f32(std::uint64_t row) {
  if (dtype_ != Dtype::F32) throw InvalidArgument("row_f32: table is not F32");
  if (row >= num_rows_) throw InvalidArgument("row_f32: row index out of range");
  return {f32_.data() + static_cast<std::size_t>(row) * dim_, dim_};
}

std::span<const float> EmbeddingTable::row_f32(std::uint64_t row) const {
  if (dtype_ != Dtype::F32) throw InvalidArgument("row_f32: table is not F32");
  if (row >= num_rows_) throw InvalidArgument("row_f32: row index out of range");
  return {f32_.data() + static_cast<std::size_t>(row) * dim_, dim_};
}

const std::vector<float>& EmbeddingTable::f32_data() const {
  if (dtype_ != Dtype::F32) throw InvalidArgument("f32_data: table is not F32");
  return f32_;
}

const std::vector<std::uint16_t>& EmbeddingTable::f16_data() const {
  if (dtype_ != Dtype::F16) throw InvalidArgument("f16_data: table is not F16");
  return f16_;
}

const std::vector<std::uint8_t>& EmbeddingTable::int4_data() const {
  if (dtype_ != Dtype::INT4Q) throw InvalidArgument("int4_data: table is not INT4Q");
  return packed_;
}

bool EmbeddingTable::same_data(const EmbeddingTable& other) const {
  return dtype_ == other.dtype_ && num_rows_ == other.num_rows_ && dim_ == other.dim_ &&
         group_size_ == other.group_size_ && f32_ == other.f32_ && f16_ == other.f16_ &&
         packed_ == other.packed_;
}

LookupResult lookup(const EmbeddingTable& table, std::span<const EntityId> ids) {
  LookupResult result;
  result.batch = ids.size();
  result.dim = table.dim();
  result.embeddings.resize(ids.size() * static_cast<std::size_t>(table.dim()));
  result.collided.assign(ids.size(), 0);

  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> by_row;
  by_row.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::uint64_t row = hash_to_row(ids[i], table.num_rows());
    table.read_row(row, {result.embeddings.data() + i * table.dim(), table.dim()});
    by_row[row].push_back(static_cast<std::uint32_t>(i));
  }
  // Collision flags count only distinct ids sharing a row; repeated queries of
  // one id are not collisions.
  for (const auto& [row, idxs] : by_row) {
    if (idxs.size() < 2) continue;
    bool distinct = false;
    for (std::size_t k = 1; k < idxs.size() && !distinct; ++k)
      distinct = ids[idxs[k]] != ids[idxs[0]];
    if (distinct)
      for (std::uint32_t i : idxs) result.collided[i] = 1;
  }
  return result;
}

double expected_collision_fraction(std::uint64_t n_ids, std::uint64_t num_rows) {
  if (n_ids == 0 || num_rows == 0)
    throw InvalidArgument("expected_collision_fraction: arguments must be >= 1");
  if (n_ids == 1) return 0.0;  // a single id cannot collide
  const double n = static_cast<double>(n_ids);
  const double m = static_cast<double>(num_rows);
  // 1 - m*(1 - (1-1/m)^n)/n, computed via expm1/log1p for large n, m.
  const double occupied_frac = -std::expm1(n * std::log1p(-1.0 / m));  // 1-(1-1/m)^n
  double value = 1.0 - m * occupied_frac / n;
  if (value < 0.0) value = 0.0;  // guard tiny negative round-off at n=1
  if (value > 1.0) value = 1.0;
  return value;
}

}  // namespace embrank
