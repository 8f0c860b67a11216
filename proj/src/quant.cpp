#include "embrank/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstring>
#include <string>

#include "embrank/errors.hpp"

namespace embrank {

namespace {

void require_int4q(const EmbeddingTable& t, const char* who) {
  if (t.dtype() != Dtype::INT4Q)
    throw InvalidArgument(std::string(who) + ": table dtype is not INT4Q");
}

const std::uint8_t* group_ptr(const EmbeddingTable& t, std::uint64_t row, std::uint32_t group) {
  const std::uint8_t* p = t.int4_data().data() + row * static_cast<std::uint64_t>(t.row_stride_bytes());
  for (std::uint32_t g = 0; g < group; ++g) {
    const std::uint32_t gdim = std::min(t.group_size(), t.dim() - g * t.group_size());
    p += 6 + (gdim + 1) / 2;
  }
  return p;
}

}  // namespace

EmbeddingTable quantize_int4(const EmbeddingTable& table, std::uint32_t group_size) {
  if (table.dtype() == Dtype::INT4Q)
    throw InvalidArgument("quantize_int4: input is already INT4Q");
  if (group_size < 2) throw InvalidArgument("quantize_int4: group_size must be >= 2");
  if (table.dim() % 2 != 0)
    throw InvalidArgument("quantize_int4: dim must be a multiple of 2");

  const std::uint64_t num_rows = table.num_rows();
  const std::uint32_t dim = table.dim();
  const std::uint32_t num_groups = (dim + group_size - 1) / group_size;

  std::uint32_t stride = 0;
  for (std::uint32_t g = 0; g < num_groups; ++g) {
    const std::uint32_t gdim = std::min(group_size, dim - g * group_size);
    stride += 6 + (gdim + 1) / 2;
  }

  std::vector<std::uint8_t> packed(num_rows * static_cast<std::uint64_t>(stride), 0);
  std::vector<float> rowbuf(dim);

  for (std::uint64_t r = 0; r < num_rows; ++r) {
    table.read_row(r, rowbuf);
    std::uint8_t* p = packed.data() + r * stride;
    for (std::uint32_t g = 0; g < num_groups; ++g) {
      const std::uint32_t off = g * group_size;
      const std::uint32_t gdim = std::min(group_size, dim - off);

      float vmin = rowbuf[off];
      float vmax = rowbuf[off];
      for (std::uint32_t k = 0; k < gdim; ++k) {
        const float x = rowbuf[off + k];
        if (!std::isfinite(x))
          throw DataError("quantize_int4: non-finite value at row " + std::to_string(r) +
                          ", column " + std::to_string(off + k));
        vmin = std::min(vmin, x);
        vmax = std::max(vmax, x);
      }
      // Widen the range to include zero: zero_point must land in [0,15], and a
      // representable exact zero keeps padding/sparse rows exact.
      const float lo = std::min(vmin, 0.0f);
      const float hi = std::max(vmax, 0.0f);
      const float raw_scale = (hi - lo) / 15.0f;
      std::uint8_t zero_point = 0;
      if (raw_scale > 0.0f) {
        const float zp = std::round(-lo / raw_scale);
        zero_point = static_cast<std::uint8_t>(std::clamp(zp, 0.0f, 15.0f));
      }

      // Scale search over the raw value and its ulp neighbors, keeping the
      // candidate with the smallest max reconstruction error. On data that is
      // already a reconstruction lattice the original scale scores an exact
      // zero, which makes quantize -> dequantize a bitwise fixed point.
      float scale = raw_scale;
      std::vector<std::uint8_t> group_codes(gdim, zero_point);
      if (raw_scale > 0.0f) {
        float best_err = std::numeric_limits<float>::infinity();
        std::vector<std::uint8_t> cand_codes(gdim);
        for (int step = 0; step <= 3; ++step) {
          for (int dir = 0; dir < (step == 0 ? 1 : 2); ++dir) {
            float cand = raw_scale;
            for (int s = 0; s < step; ++s)
              cand = std::nextafter(cand, dir == 0 ? 0.0f : std::numeric_limits<float>::max());
            if (!(cand > 0.0f)) continue;
            float err = 0.0f;
            for (std::uint32_t k = 0; k < gdim; ++k) {
              const float x = rowbuf[off + k];
              const float q = std::round(x / cand) + static_cast<float>(zero_point);
              const auto code =
                  static_cast<std::uint8_t>(std::clamp(q, 0.0f, 15.0f));
              cand_codes[k] = code;
              err = std::max(err, std::abs(cand * (static_cast<float>(code) -
                                                   static_cast<float>(zero_point)) -
                                           x));
            }
            if (err < best_err) {
              best_err = err;
              scale = cand;
              group_codes = cand_codes;
            }
          }
        }
      }

      std::memcpy(p, &scale, 4);
      p[4] = zero_point;
      p[5] = 0;
      std::uint8_t* codes = p + 6;
      for (std::uint32_t k = 0; k < gdim; ++k) {
        const std::uint8_t code = group_codes[k];
        if (k % 2 == 0)
          codes[k / 2] = code;  // low nibble = even index
        else
          codes[k / 2] = static_cast<std::uint8_t>(codes[k / 2] | (code << 4));
      }
      p += 6 + (gdim + 1) / 2;
    }
  }

  return EmbeddingTable::from_int4q(table.table_id(), table.version_id(), num_rows, dim,
                                    group_size, std::move(packed));
}

std::vector<float> dequantize_row(const EmbeddingTable& qtable, std::uint64_t row) {
  require_int4q(qtable, "dequantize_row");
  if (row >= qtable.num_rows()) throw InvalidArgument("dequantize_row: row out of range");
  return qtable.row(row);
}

QuantGroupParams read_group_params(const EmbeddingTable& qtable, std::uint64_t row,
                                   std::uint32_t group) {
  require_int4q(qtable, "read_group_params");
  if (row >= qtable.num_rows() || group >= qtable.num_groups())
    throw InvalidArgument("read_group_params: index out of range");
  const std::uint8_t* p = group_ptr(qtable, row, group);
  QuantGroupParams params;
  std::memcpy(&params.scale, p, 4);
  params.zero_point = p[4];
  return params;
}

std::vector<std::uint8_t> read_codes(const EmbeddingTable& qtable, std::uint64_t row) {
  require_int4q(qtable, "read_codes");
  if (row >= qtable.num_rows()) throw InvalidArgument("read_codes: row out of range");
  std::vector<std::uint8_t> out;
  out.reserve(qtable.dim());
  const std::uint32_t num_groups = qtable.num_groups();
  for (std::uint32_t g = 0; g < num_groups; ++g) {
    const std::uint32_t gdim = std::min(qtable.group_size(), qtable.dim() - g * qtable.group_size());
    const std::uint8_t* codes = group_ptr(qtable, row, g) + 6;
    for (std::uint32_t k = 0; k < gdim; ++k) {
      const std::uint8_t byte = codes[k / 2];
      out.push_back((k % 2 == 0) ? (byte & 0x0Fu) : (byte >> 4));
    }
  }
  return out;
}

SizeReport size_report(std::uint64_t table_f16_bytes, const EmbeddingTable& qtable) {
  require_int4q(qtable, "size_report");
  if (table_f16_bytes == 0) throw InvalidArgument("size_report: zero baseline");
  SizeReport report;
  report.quantized_bytes = qtable.payload_bytes();
  report.ratio = static_cast<double>(report.quantized_bytes) /
                 static_cast<double>(table_f16_bytes);
  return report;
}

}  // namespace embrank
