#include "mvpbt/keys.hpp"

#include <stdexcept>

#include "mvpbt/errors.hpp"

namespace mvpbt {

PartitionedKey make_key(PartitionNumber pnr, std::string_view user_key) {
  if (user_key.empty()) {
    throw std::invalid_argument("user key must be non-empty");
  }
  return PartitionedKey{pnr, std::string(user_key)};
}

std::strong_ordering compare(const PartitionedKey& a, const PartitionedKey& b) {
  return a <=> b;
}

std::string_view strip_prefix(const PartitionedKey& k) { return k.user_key; }

void put_pnr_be(std::string& out, PartitionNumber pnr) {
  out.push_back(static_cast<char>(pnr >> 8));
  out.push_back(static_cast<char>(pnr & 0xFF));
}

PartitionNumber get_pnr_be(std::string_view buf) {
  if (buf.size() < 2) throw CorruptionError("short partition number", 0);
  return static_cast<PartitionNumber>(
      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[0])) << 8) |
      static_cast<std::uint8_t>(buf[1]));
}

std::string encode_key(const PartitionedKey& k) {
  std::string out;
  out.reserve(2 + k.user_key.size());
  put_pnr_be(out, k.pnr);
  out.append(k.user_key);
  return out;
}

PartitionedKey decode_key(std::string_view buf) {
  if (buf.size() < 3) throw CorruptionError("serialized key too short", 0);
  PartitionedKey k;
  k.pnr = get_pnr_be(buf);
  k.user_key.assign(buf.substr(2));
  return k;
}

}  // namespace mvpbt
