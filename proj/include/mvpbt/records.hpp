#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvpbt/keys.hpp"

namespace mvpbt {

// Commit timestamp drawn from a per-engine monotone counter.
// 0 is reserved for bulk-loaded records that are visible to every snapshot.
using Timestamp = std::uint64_t;

inline constexpr Timestamp kBulkTimestamp = 0;

enum class RecordType : std::uint8_t {
  Regular = 1,      // begins a version chain
  Replacement = 2,  // new value; its timestamp invalidates the predecessor
  Anti = 3,         // invalidates the predecessor on key modification
  Tombstone = 4,    // logical delete; no successor until a new Regular
  CachedIndex = 5,  // key -> partition number entry of a cached partition
};

// Replacement, Anti and Tombstone all carry the single timestamp that
// validates them and invalidates the newest predecessor (one-point
// invalidation). Regular starts a chain; CachedIndex is not a version.
inline bool invalidates_predecessor(RecordType t) {
  return t == RecordType::Replacement || t == RecordType::Anti ||
         t == RecordType::Tombstone;
}

// Record types whose visible resolution means "no logical tuple".
inline bool ends_chain(RecordType t) {
  return t == RecordType::Tombstone || t == RecordType::Anti;
}

struct VersionRecord {
  RecordType rtype = RecordType::Regular;
  Timestamp ts = kBulkTimestamp;
  PartitionedKey key;
  std::string value;  // CachedIndex: 2-byte big-endian target partition number

  PartitionNumber cached_target() const;
};

// A transaction's visibility horizon: everything committed at or before
// read_ts is visible except work of the transactions in active_set.
struct Snapshot {
  Timestamp read_ts = 0;
  std::vector<Timestamp> active_set;  // sorted ascending, all <= read_ts

  bool is_active(Timestamp ts) const;
};

Snapshot make_snapshot(Timestamp read_ts, std::vector<Timestamp> active_set);

bool is_visible(const VersionRecord& r, const Snapshot& s);

// Resolves a version chain ordered new-to-old to the record a snapshot
// observes. Returns nullptr when the newest visible record ends the chain
// (Tombstone/Anti) or nothing is visible. Never inspects candidates older
// than the first visible one; `probes`, when given, receives the number of
// records inspected.
const VersionRecord* resolve_chain(std::span<const VersionRecord> candidates,
                                   const Snapshot& s,
                                   std::size_t* probes = nullptr);

// On-page record layout. The partition number is not stored per record;
// pages carry it once in their header (shared-prefix truncation).
//   rtype u8 | ts varint | user_key_len varint | user_key | value_len varint | value
void encode_record(const VersionRecord& r, std::string& out);
VersionRecord decode_record(std::string_view buf, std::size_t& pos,
                            PartitionNumber page_pnr);
std::size_t record_wire_size(const VersionRecord& r);

// Encodes a partition number as a CachedIndex record value.
std::string encode_cached_target(PartitionNumber pnr);

}  // namespace mvpbt
