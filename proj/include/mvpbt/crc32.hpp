#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

#if defined(__SSE4_2__)
#include <nmmintrin.h>
#endif

namespace mvpbt {

// CRC32C (Castagnoli); hardware instruction when available.
namespace detail {

inline const std::array<std::uint32_t, 256>& crc32c_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    constexpr std::uint32_t poly = 0x82F63B78u;  // reflected 0x1EDC6F41
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int j = 0; j < 8; ++j) c = (c & 1) ? (poly ^ (c >> 1)) : (c >> 1);
      t[i] = c;
    }
    return t;
  }();
  return table;
}

inline std::uint32_t crc32c_sw(const std::uint8_t* p, std::size_t n,
                               std::uint32_t c) {
  const auto& table = crc32c_table();
  for (std::size_t i = 0; i < n; ++i) {
    c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  }
  return c;
}

#if defined(__SSE4_2__)
inline std::uint32_t crc32c_hw(const std::uint8_t* p, std::size_t n,
                               std::uint32_t c) {
  std::uint64_t c64 = c;
  while (n >= 8) {
    std::uint64_t chunk;
    __builtin_memcpy(&chunk, p, 8);
    c64 = _mm_crc32_u64(c64, chunk);
    p += 8;
    n -= 8;
  }
  c = static_cast<std::uint32_t>(c64);
  while (n > 0) {
    c = _mm_crc32_u8(c, *p);
    ++p;
    --n;
  }
  return c;
}
#endif

}  // namespace detail

inline std::uint32_t crc32c(const void* data, std::size_t n,
                            std::uint32_t seed = 0) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
#if defined(__SSE4_2__)
  c = detail::crc32c_hw(p, n, c);
#else
  c = detail::crc32c_sw(p, n, c);
#endif
  return c ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32c(std::string_view s, std::uint32_t seed = 0) {
  return crc32c(s.data(), s.size(), seed);
}

}  // namespace mvpbt
