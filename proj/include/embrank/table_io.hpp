#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "embrank/table.hpp"

namespace embrank {

// PEMB container, little-endian throughout:
//   "PEMB" | format_version u16 (=1) | dtype u8 | reserved u8 |
//   table_id_len u16 + bytes | version_id_len u16 + bytes |
//   num_rows u64 | dim u32 | group_size u32 (0 unless INT4Q) | payload
// F32/F16 payload: rows consecutive, elements little-endian.
// INT4Q payload: per row, per group: scale f32 | zero_point u8 | pad u8 |
// packed codes, two per byte, low nibble = even index.

inline constexpr std::uint16_t kPembFormatVersion = 1;

std::vector<std::uint8_t> encode_pemb(const EmbeddingTable& table);
EmbeddingTable decode_pemb(const std::vector<std::uint8_t>& bytes);

void write_pemb(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_pemb(const std::filesystem::path& path);

}  // namespace embrank
