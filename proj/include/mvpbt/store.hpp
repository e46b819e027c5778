#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvpbt/keys.hpp"

namespace mvpbt {

enum class ExtentState : std::uint8_t { Live = 0, Dead = 1 };

struct Extent {
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
  std::uint64_t page_id = 0;
  ExtentState state = ExtentState::Live;
  std::uint32_t crc = 0;
  std::uint8_t level = 0;
  PartitionNumber pnr = 0;
};

struct TraceEvent {
  std::uint64_t tick_us = 0;
  char op = 'W';  // 'R' or 'W'
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
};

struct StoreReport {
  std::uint64_t bytes_written = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t writes = 0;
  std::uint64_t reads = 0;
  std::uint64_t live_bytes = 0;
  std::uint64_t reclaimed_bytes = 0;
  std::uint64_t superblock_writes = 0;
};

struct PageImage {
  std::uint64_t page_id = 0;
  std::uint8_t level = 0;
  PartitionNumber pnr = 0;
  std::string bytes;
};

// Structural bootstrap persisted with every flush: enough to locate all live
// pages after a restart. Partition statistics are not trusted from here; a
// leaf-chain scan rebuilds them.
struct DirectoryPartition {
  PartitionNumber pnr = 0;
  PartitionNumber position = 0;
  char type = 'R';
  bool visible = true;
  std::uint64_t root_page_id = 0;
  std::uint64_t first_leaf_page_id = 0;
  std::uint8_t height = 1;
  PartitionNumber cover_lo = 0;  // cached partitions: covered position range
  PartitionNumber cover_hi = 0;
};

struct DirectorySnapshot {
  std::uint64_t next_page_id = 1;
  std::vector<DirectoryPartition> partitions;
  std::vector<Extent> extents;  // live extents only
};

// Single-file append store. Layout: 4 KiB superblock followed by extents.
// Offsets are allocated monotonically; freed extents are hole-punched and
// their space recycled by the filesystem, never compacted in place.
class PageStore {
 public:
  struct Options {
    std::uint64_t max_bytes = 0;  // 0 = unlimited
    bool sync_on_commit = false;  // fsync around directory commits
    // Device model for benchmarks: per-page service time added to reads and
    // writes, emulating direct-I/O latency that a RAM-backed file lacks.
    std::uint32_t read_latency_us = 0;
    std::uint32_t write_latency_us = 0;
  };

  PageStore(const std::string& path, Options opts, bool create);
  ~PageStore();

  PageStore(const PageStore&) = delete;
  PageStore& operator=(const PageStore&) = delete;

  // Writes pages at strictly ascending offsets, one write per page,
  // all-or-nothing with respect to extent visibility.
  std::vector<Extent> allocate_and_write(std::span<const PageImage> pages);

  std::string read_page(std::uint64_t page_id);
  std::uint64_t free_extents(std::span<const std::uint64_t> page_ids);

  StoreReport report() const;
  std::vector<TraceEvent> trace() const;
  void dump_trace_csv(const std::string& path) const;

  std::uint64_t allocate_page_id();
  std::uint64_t peek_next_page_id() const { return next_page_id_; }
  bool has_page(std::uint64_t page_id) const;
  std::optional<Extent> extent_of(std::uint64_t page_id) const;

  // Durability point: persists the directory and flips the superblock.
  void commit_directory(const DirectorySnapshot& dir);
  DirectorySnapshot read_directory();
  bool has_directory() const { return dir_length_ > 0; }

  void sync();

  // Test hook: throw StorageFullError after n more page writes (-1 = off).
  void fail_after_writes(std::int64_t n) { fail_after_writes_ = n; }

 private:
  void write_superblock();
  void load_superblock();
  void trace_event(char op, std::uint64_t offset, std::uint32_t length);
  void punch_hole(std::uint64_t offset, std::uint64_t length);

  int fd_ = -1;
  Options opts_;
  std::uint64_t tail_ = 4096;
  std::uint64_t generation_ = 0;
  std::uint64_t dir_offset_ = 0;
  std::uint64_t dir_length_ = 0;
  std::uint32_t dir_crc_ = 0;
  std::uint64_t next_page_id_ = 1;

  mutable std::shared_mutex extents_mu_;
  std::unordered_map<std::uint64_t, Extent> extents_;

  std::mutex alloc_mu_;

  mutable std::mutex trace_mu_;
  std::vector<TraceEvent> trace_;
  std::uint64_t open_tick_us_ = 0;

  mutable std::mutex counter_mu_;
  StoreReport counters_;

  std::int64_t fail_after_writes_ = -1;
};

}  // namespace mvpbt
