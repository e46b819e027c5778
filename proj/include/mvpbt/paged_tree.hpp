#pragma once

#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvpbt/page.hpp"
#include "mvpbt/store.hpp"

namespace mvpbt {

// Classic single-partition paged B-tree used as the comparison baseline:
// fixed page-size nodes, 50/50 splits, and a no-overwrite checkpoint that
// relocates every dirty node (and therefore its ancestor path) on commit.
class PagedTree {
 public:
  struct Config {
    std::size_t page_size = 16 * 1024;
    std::uint64_t cache_bytes = 10ull << 20;
    double dense_fill_target = 0.9;
    std::uint32_t directory_every = 1024;  // checkpoints per directory commit
  };

  PagedTree(PageStore& store, Config cfg);

  // Dense read-optimized load from a sorted stream; pages packed to capacity.
  void bulk_load(const std::vector<std::pair<std::string, std::string>>& rows,
                 Timestamp ts);

  void upsert(std::string_view key, std::string_view value, Timestamp ts);
  bool erase(std::string_view key);
  std::optional<std::string> get(std::string_view key);
  // Ascending rows in [low, high), at most limit.
  std::vector<std::pair<std::string, std::string>> scan(std::string_view low,
                                                        std::string_view high,
                                                        std::size_t limit);

  // Relocating write of all dirty nodes, leaf level first. One call per
  // commit gives the classic write amplification of a no-overwrite tree.
  void checkpoint();
  void commit_directory();
  void recover();

  std::uint64_t record_count() const { return record_count_; }
  std::uint64_t node_count() const { return nodes_.size(); }
  std::uint64_t checkpoints() const { return checkpoints_; }
  std::uint8_t height() const;

 private:
  struct Node {
    std::uint64_t id = 0;  // current page id (changes on relocation)
    std::uint8_t level = 0;
    bool dirty = false;
    bool resident = true;
    std::vector<VersionRecord> records;  // leaves
    std::vector<InnerEntry> entries;     // inners; separator/child pairs
    std::size_t bytes = 0;               // serialized estimate
    std::uint64_t persisted_id = 0;      // extent to free on relocation
  };

  Node& load(std::uint64_t id);
  // Descends to the leaf covering key. `high_bound`, when non-null, receives
  // the lower bound of the next leaf to the right (nullopt at the right edge).
  Node& descend_to_leaf(std::string_view key, std::vector<std::uint64_t>* path,
                        std::optional<std::string>* high_bound = nullptr);
  void mark_path_dirty(const std::vector<std::uint64_t>& path);
  void split_if_needed(std::vector<std::uint64_t>& path);
  void evict_to_budget();
  std::size_t node_charge(const Node& n) const;
  std::string serialize(const Node& n) const;

  PageStore& store_;
  Config cfg_;
  std::unordered_map<std::uint64_t, Node> nodes_;
  std::uint64_t root_ = 0;
  std::uint64_t record_count_ = 0;
  std::uint64_t checkpoints_ = 0;
  std::size_t resident_bytes_ = 0;
  std::list<std::uint64_t> lru_;  // clean resident leaves, cold first
  std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> lru_pos_;
};

}  // namespace mvpbt
