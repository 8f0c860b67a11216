#pragma once

#include <cstdint>
#include <vector>

#include "embrank/table.hpp"

namespace embrank {

// Per-group affine parameters: x ~ scale * (code - zero_point), code in [0,15].
// scale == 0 happens only for all-zero groups (dequantizes to zeros).
struct QuantGroupParams {
  float scale = 0.0f;
  std::uint8_t zero_point = 0;
};

// Post-training INT4 group-wise quantization of an F32 or F16 table.
// Asymmetric min/max affine per group; the group range is widened to include
// zero so the integer zero_point can represent the offset and every element
// round-trips within scale/2. Throws DataError on non-finite input.
EmbeddingTable quantize_int4(const EmbeddingTable& table, std::uint32_t group_size);

// Dequantized row of an INT4Q table (same code path as lookup widening).
std::vector<float> dequantize_row(const EmbeddingTable& qtable, std::uint64_t row);

// Decoded parameters of one quant group.
QuantGroupParams read_group_params(const EmbeddingTable& qtable, std::uint64_t row,
                                   std::uint32_t group);

// Raw 4-bit codes of one row, unpacked.
std::vector<std::uint8_t> read_codes(const EmbeddingTable& qtable, std::uint64_t row);

struct SizeReport {
  std::uint64_t quantized_bytes = 0;
  double ratio = 0.0;  // quantized payload / F16 baseline payload
};

// Payload-vs-payload size comparison; headers excluded on both sides, group
// parameters included on the quantized side.
SizeReport size_report(std::uint64_t table_f16_bytes, const EmbeddingTable& qtable);

}  // namespace embrank
