#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace mvpbt {

// Ordinal of a horizontal partition. Prepended big-endian to every record key
// so that ordinary lexicographic key order groups records by partition.
using PartitionNumber = std::uint16_t;

inline constexpr PartitionNumber kMaxPartitionNumber = 0xFFFF;

// A user key fused with its partition number. The total order is
// (pnr, user_key), identical to byte-wise comparison of the serialized form.
struct PartitionedKey {
  PartitionNumber pnr = 0;
  std::string user_key;

  friend bool operator==(const PartitionedKey& a, const PartitionedKey& b) {
    return a.pnr == b.pnr && a.user_key == b.user_key;
  }
  friend std::strong_ordering operator<=>(const PartitionedKey& a,
                                          const PartitionedKey& b) {
    if (auto c = a.pnr <=> b.pnr; c != 0) return c;
    int r = a.user_key.compare(b.user_key);
    return r < 0    ? std::strong_ordering::less
           : r == 0 ? std::strong_ordering::equal
                    : std::strong_ordering::greater;
  }
};

// Builds a partitioned key. The user key must be non-empty.
PartitionedKey make_key(PartitionNumber pnr, std::string_view user_key);

std::strong_ordering compare(const PartitionedKey& a, const PartitionedKey& b);

// Returns the user key with the partition prefix hidden. No copy.
std::string_view strip_prefix(const PartitionedKey& k);

// Serialized layout: 2 bytes big-endian pnr followed by the user key bytes.
std::string encode_key(const PartitionedKey& k);
PartitionedKey decode_key(std::string_view buf);

void put_pnr_be(std::string& out, PartitionNumber pnr);
PartitionNumber get_pnr_be(std::string_view buf);

}  // namespace mvpbt
