#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "mvpbt/errors.hpp"

namespace mvpbt {

// LEB128 unsigned varint, 1..10 bytes for a u64.

inline void put_varint(std::string& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<char>((v & 0x7F) | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<char>(v));
}

inline std::uint64_t get_varint(std::string_view buf, std::size_t& pos) {
  std::uint64_t v = 0;
  int shift = 0;
  while (true) {
    if (pos >= buf.size() || shift > 63) {
      throw CorruptionError("truncated or oversized varint", 0);
    }
    std::uint8_t b = static_cast<std::uint8_t>(buf[pos++]);
    v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
    if ((b & 0x80) == 0) return v;
    shift += 7;
  }
}

inline std::size_t varint_size(std::uint64_t v) {
  std::size_t n = 1;
  while (v >= 0x80) {
    v >>= 7;
    ++n;
  }
  return n;
}

}  // namespace mvpbt
