#pragma once

#include <cstdint>
#include <cstring>

namespace embrank {

// IEEE 754 binary16 <-> binary32 conversions. Storage-only dtype: every
// lookup widens to float, so only the codec lives here. Round to nearest even,
// with overflow to infinity and gradual underflow to subnormals.

inline std::uint16_t f32_to_f16(float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  const std::uint32_t sign = (bits >> 16) & 0x8000u;
  const std::uint32_t abs = bits & 0x7FFFFFFFu;

  if (abs >= 0x7F800000u) {  // inf or nan
    const std::uint32_t mantissa = (abs > 0x7F800000u) ? 0x0200u : 0u;
    return static_cast<std::uint16_t>(sign | 0x7C00u | mantissa | ((abs >> 13) & 0x03FFu));
  }
  if (abs >= 0x477FF000u) {  // rounds to >= 2^16: overflow to inf
    return static_cast<std::uint16_t>(sign | 0x7C00u);
  }
  if (abs < 0x38800000u) {  // subnormal half (or zero)
    if (abs < 0x33000000u) return static_cast<std::uint16_t>(sign);  // underflows to 0
    const std::uint32_t shift = 126u - (abs >> 23);  // in [1, 24]
    const std::uint32_t mant = (abs & 0x007FFFFFu) | 0x00800000u;
    const std::uint32_t rounded = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t half = 1u << (shift - 1);
    std::uint32_t out = rounded;
    if (rem > half || (rem == half && (rounded & 1u))) ++out;
    return static_cast<std::uint16_t>(sign | out);
  }
  // Normal range.
  const std::uint32_t exp = ((abs >> 23) - 112u) << 10;
  const std::uint32_t mant = (abs >> 13) & 0x03FFu;
  std::uint32_t out = exp | mant;
  const std::uint32_t rem = abs & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (out & 1u))) ++out;  // may carry into exp: correct
  return static_cast<std::uint16_t>(sign | out);
}

inline float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  const std::uint32_t mant = h & 0x03FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {  // subnormal: renormalize
      std::uint32_t m = mant;
      std::uint32_t e = 113;
      while ((m & 0x0400u) == 0) {
        m <<= 1;
        --e;
      }
      bits = sign | (e << 23) | ((m & 0x03FFu) << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 112u) << 23) | (mant << 13);
  }
  float out;
  std::memcpy(&out, &bits, sizeof out);
  return out;
}

}  // namespace embrank
