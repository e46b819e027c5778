#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvpbt/records.hpp"

namespace mvpbt {

inline constexpr std::uint32_t kPageMagic = 0x4D565042;  // "MVPB"
inline constexpr std::size_t kPageHeaderSize = 32;
// Slot offsets are 16-bit payload-relative positions.
inline constexpr std::size_t kMaxPageSize = 60 * 1024;

// Fixed 32-byte page header:
//   magic u32 | page_id u64 | level u8 | ptype u8 | entry_count u16 |
//   pnr u16 | position u16 | payload_len u32 | crc u32 | reserved u32
// Keys on a page share the partition number; it is stored once here and
// truncated from every record (prefix truncation at page granularity).
struct PageHeader {
  std::uint64_t page_id = 0;
  std::uint8_t level = 0;  // 0 = leaf
  char ptype = 'R';
  std::uint16_t entry_count = 0;
  PartitionNumber pnr = 0;
  PartitionNumber position = 0;  // search-succession slot of the partition
  std::uint32_t payload_len = 0;
  std::uint32_t crc = 0;
};

// Payload layouts (slotted so lookups bisect raw bytes without decoding):
//   leaf : next_leaf u64 | slot u16 x n | records
//   inner: slot u16 x n | entries (separator varint+bytes, child u64)

struct InnerEntry {
  std::string separator;  // user-key separator, suffix-truncated
  std::uint64_t child = 0;
};

struct DecodedPage {
  PageHeader hdr;
  std::uint64_t next_leaf = 0;         // leaf only; 0 = end of chain
  std::vector<VersionRecord> records;  // leaf only
  std::vector<InnerEntry> entries;     // inner only
  bool is_leaf() const { return hdr.level == 0; }
};

// Borrowed view of one record inside a page buffer.
struct RecordRef {
  RecordType rtype = RecordType::Regular;
  Timestamp ts = 0;
  std::string_view user_key;
  std::string_view value;
};

// Read-only zero-copy access to a raw page image. Lookups bisect the slot
// directory; records materialize only when chosen.
class PageView {
 public:
  explicit PageView(std::string bytes);  // validates magic and checksum

  const PageHeader& header() const { return hdr_; }
  bool is_leaf() const { return hdr_.level == 0; }
  std::size_t size() const { return hdr_.entry_count; }
  std::uint64_t next_leaf() const { return next_leaf_; }

  RecordRef record(std::size_t i) const;            // leaf pages
  VersionRecord materialize(std::size_t i) const;   // leaf pages
  // The encoded bytes of record i, reusable verbatim on another leaf page.
  std::string_view record_span(std::size_t i) const;
  std::string_view separator(std::size_t i) const;  // inner pages
  std::uint64_t child(std::size_t i) const;         // inner pages

  // Index of the first record with user_key >= key.
  std::size_t lower_bound(std::string_view key) const;
  // Inner routing: index of the child covering key.
  std::size_t route(std::string_view key) const;

  std::size_t charge() const { return bytes_.size(); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::size_t slot(std::size_t i) const;
  std::string bytes_;
  PageHeader hdr_;
  std::size_t payload_off_ = 0;
  std::size_t slots_off_ = 0;
  std::uint64_t next_leaf_ = 0;
};

using PageViewPtr = std::shared_ptr<const PageView>;

std::string encode_leaf_page(std::uint64_t page_id, char ptype,
                             PartitionNumber pnr, PartitionNumber position,
                             std::uint64_t next_leaf,
                             std::span<const VersionRecord> records);

// Assembles a leaf page from pre-encoded record bytes; `rel_slots` are
// offsets into `record_bytes`.
std::string encode_leaf_page_raw(std::uint64_t page_id, char ptype,
                                 PartitionNumber pnr, PartitionNumber position,
                                 std::uint64_t next_leaf,
                                 std::string_view record_bytes,
                                 std::span<const std::uint32_t> rel_slots);

std::string encode_inner_page(std::uint64_t page_id, std::uint8_t level,
                              char ptype, PartitionNumber pnr,
                              PartitionNumber position,
                              std::span<const InnerEntry> entries);

// Verifies magic and payload checksum; throws CorruptionError.
DecodedPage decode_page(std::string_view bytes);

std::size_t inner_entry_wire_size(const InnerEntry& e);

// Shortest separator s with prev_last < s <= next_first; requires
// prev_last < next_first.
std::string shortest_separator(std::string_view prev_last,
                               std::string_view next_first);

// Pages occupy a fixed page_size on storage; the payload length in the
// header marks where the content ends.
inline void pad_page(std::string& bytes, std::size_t page_size) {
  if (bytes.size() < page_size) bytes.resize(page_size, '\0');
}

}  // namespace mvpbt
