#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mvpbt/records.hpp"

namespace mvpbt {

// Intra-partition record order: user key ascending, timestamp descending,
// so a forward walk meets version chains new-to-old.
inline bool record_order_less(const VersionRecord& a, const VersionRecord& b) {
  if (int c = a.key.user_key.compare(b.key.user_key); c != 0) return c < 0;
  return a.ts > b.ts;
}

// Flexible in-memory node. Grows past the disk page size while its partition
// is mutable or victim; reconciliation later divides it into dense pages.
struct MemNode {
  std::vector<VersionRecord> entries;  // sorted by record_order_less
  std::uint64_t base_page_id = 0;      // 0 = no persisted base image
  bool dirty = false;
  std::size_t byte_footprint = 0;      // wire-size estimate of entries

  // Returns false when an identical (user_key, ts) pair is already present.
  bool insert(VersionRecord rec);
  std::uint64_t erase_range(std::string_view low, std::string_view high,
                            bool high_unbounded);
};

// One partition's in-memory subtree: a sorted directory over flexible leaf
// nodes. The root starts as a single leaf and the directory grows as nodes
// split.
class MemSubtree {
 public:
  MemSubtree();

  // Inserts and splits the target node when it exceeds split_limit bytes.
  // The rightmost node splits append-friendly (95/5), others at 50/50.
  bool insert(VersionRecord rec, std::size_t split_limit);

  // Index of the leaf whose interval covers user_key.
  std::size_t locate(std::string_view user_key) const;
  const MemNode& node(std::size_t i) const { return *nodes_[i]; }
  MemNode& node(std::size_t i) { return *nodes_[i]; }
  std::size_t node_count() const { return nodes_.size(); }
  std::string_view low_of(std::size_t i) const { return lows_[i]; }

  // All versions of user_key, newest first.
  std::vector<VersionRecord> collect_versions(std::string_view user_key) const;

  // Records in [low, high) ascending; high_unbounded ignores high.
  std::vector<VersionRecord> collect_range(std::string_view low,
                                           std::string_view high,
                                           bool high_unbounded) const;

  std::uint64_t erase_range(std::string_view low, std::string_view high,
                            bool high_unbounded);

  std::size_t total_bytes() const { return total_bytes_; }
  std::uint64_t total_records() const { return total_records_; }

 private:
  void split_node(std::size_t idx, std::size_t split_limit);

  std::vector<std::string> lows_;  // lows_[0] is always empty (open low end)
  std::vector<std::unique_ptr<MemNode>> nodes_;
  std::size_t total_bytes_ = 0;
  std::uint64_t total_records_ = 0;
};

}  // namespace mvpbt
