#include "embrank/table_io.hpp"

#include <cstring>
#include <fstream>

#include "embrank/errors.hpp"

namespace embrank {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    const std::uint8_t* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  std::string str(std::size_t n) {
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("pemb: truncated file");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_pemb(const EmbeddingTable& table) {
  std::vector<std::uint8_t> out;
  out.reserve(24 + table.table_id().size() + table.version_id().size() +
              static_cast<std::size_t>(table.payload_bytes()));
  out.insert(out.end(), {'P', 'E', 'M', 'B'});
  put_u16(out, kPembFormatVersion);
  out.push_back(static_cast<std::uint8_t>(table.dtype()));
  out.push_back(0);  // reserved
  if (table.table_id().size() > 0xFFFF || table.version_id().size() > 0xFFFF)
    throw InvalidArgument("pemb: id strings must fit u16 length");
  put_u16(out, static_cast<std::uint16_t>(table.table_id().size()));
  out.insert(out.end(), table.table_id().begin(), table.table_id().end());
  put_u16(out, static_cast<std::uint16_t>(table.version_id().size()));
  out.insert(out.end(), table.version_id().begin(), table.version_id().end());
  put_u64(out, table.num_rows());
  put_u32(out, table.dim());
  put_u32(out, table.group_size());

  switch (table.dtype()) {
    case Dtype::F32:
      for (float v : table.f32_data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(out, bits);
      }
      break;
    case Dtype::F16:
      for (std::uint16_t v : table.f16_data()) put_u16(out, v);
      break;
    case Dtype::INT4Q: {
      // Scales inside the packed payload are stored via memcpy on the build
      // host; re-emit them byte-for-byte (they were written little-endian).
      const auto& p = table.int4_data();
      out.insert(out.end(), p.begin(), p.end());
      break;
    }
  }
  return out;
}

EmbeddingTable decode_pemb(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != "PEMB") throw IoError("pemb: bad magic");
  const std::uint16_t version = r.u16();
  if (version != kPembFormatVersion)
    throw IoError("pemb: unsupported format version " + std::to_string(version));
  const std::uint8_t dtype_raw = r.u8();
  if (dtype_raw > 2) throw IoError("pemb: unknown dtype " + std::to_string(dtype_raw));
  const Dtype dtype = static_cast<Dtype>(dtype_raw);
  r.u8();  // reserved
  const std::string table_id = r.str(r.u16());
  const std::string version_id = r.str(r.u16());
  const std::uint64_t num_rows = r.u64();
  const std::uint32_t dim = r.u32();
  const std::uint32_t group_size = r.u32();
  if (num_rows == 0 || dim == 0) throw IoError("pemb: zero num_rows or dim");

  const std::size_t logical = static_cast<std::size_t>(num_rows) * dim;
  switch (dtype) {
    case Dtype::F32: {
      std::vector<float> data(logical);
      for (std::size_t i = 0; i < logical; ++i) {
        const std::uint32_t bits = r.u32();
        std::memcpy(&data[i], &bits, 4);
      }
      if (r.remaining() != 0) throw IoError("pemb: trailing bytes");
      return EmbeddingTable::from_f32(table_id, version_id, num_rows, dim, std::move(data));
    }
    case Dtype::F16: {
      std::vector<std::uint16_t> data(logical);
      for (std::size_t i = 0; i < logical; ++i) data[i] = r.u16();
      if (r.remaining() != 0) throw IoError("pemb: trailing bytes");
      return EmbeddingTable::from_f16(table_id, version_id, num_rows, dim, std::move(data));
    }
    case Dtype::INT4Q: {
      const std::size_t n = r.remaining();
      const std::uint8_t* p = r.take(n);
      std::vector<std::uint8_t> packed(p, p + n);
      return EmbeddingTable::from_int4q(table_id, version_id, num_rows, dim, group_size,
                                        std::move(packed));
    }
  }
  throw IoError("pemb: unreachable dtype");
}

void write_pemb(const std::filesystem::path& path, const EmbeddingTable& table) {
  const std::vector<std::uint8_t> bytes = encode_pemb(table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("pemb: cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("pemb: write failed: " + path.string());
}

EmbeddingTable read_pemb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("pemb: cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_pemb(bytes);
}

}  // namespace embrank
