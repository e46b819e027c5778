#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <shared_mutex>
#include <string>
#include <vector>

#include "mvpbt/bloom.hpp"
#include "mvpbt/cache.hpp"
#include "mvpbt/memnode.hpp"
#include "mvpbt/page.hpp"
#include "mvpbt/store.hpp"

namespace mvpbt {

struct TreeConfig {
  std::uint64_t relation_id = 1;
  std::size_t page_size = 16 * 1024;
  double dense_fill_target = 0.9;
  std::size_t mem_node_limit = 16 * 1024;
  int bloom_bits_per_key = 10;
  int bloom_hashes = 7;
  std::size_t bulk_chunk_pages = 256;
  std::string sidecar_path;  // advisory metadata checkpoint file; empty = off
};

enum class PartitionState { Mutable, Victim, Persisted };

// Runtime image of a persisted partition subtree.
struct PersistedView {
  std::uint64_t root_page_id = 0;
  std::uint8_t height = 1;  // levels including leaves
  std::vector<std::uint64_t> leaf_page_ids;  // ascending key order
  std::vector<std::string> leaf_first_keys;  // first user key per leaf
  std::vector<std::uint64_t> all_page_ids;   // leaves first, then inner levels
};

struct Partition {
  PartitionNumber pnr = 0;
  // Slot in the logical new-to-old search succession. Equals pnr for
  // partitions created by a switch; maintenance outputs inherit the newest
  // position of their sources.
  PartitionNumber position = 0;
  char type = 'R';  // 'R' regular, 'C' cached index, 'G' gc output
  PartitionState state = PartitionState::Mutable;
  bool visible = true;
  bool synced = false;
  std::uint64_t n_records = 0;
  std::string fence_low, fence_high;
  std::shared_ptr<const PartitionFilter> filter;
  std::unique_ptr<MemSubtree> mem;  // Mutable / Victim states
  PersistedView disk;               // Persisted state
  PartitionNumber cover_lo = 0, cover_hi = 0;  // 'C': covered positions
  bool covered = false;     // a cached partition substitutes for this one
  // Cached partitions take over the role of the filter structures and stay
  // memory resident like them, charged against the cache budget.
  std::shared_ptr<const std::unordered_map<std::uint64_t, PageViewPtr>>
      resident;
  std::atomic<int> pins{0};
  mutable std::mutex mem_mu;  // serializes mutations of the mem subtree

  bool is_mem() const { return state != PartitionState::Persisted; }
};

using PartitionPtr = std::shared_ptr<Partition>;

// Holds a partition against truncation for the duration of a read.
class PartitionPin {
 public:
  PartitionPin() = default;
  explicit PartitionPin(PartitionPtr p) : p_(std::move(p)) {
    if (p_) p_->pins.fetch_add(1, std::memory_order_acq_rel);
  }
  ~PartitionPin() { release(); }
  PartitionPin(PartitionPin&& o) noexcept : p_(std::move(o.p_)) { o.p_.reset(); }
  PartitionPin& operator=(PartitionPin&& o) noexcept {
    if (this != &o) {
      release();
      p_ = std::move(o.p_);
      o.p_.reset();
    }
    return *this;
  }
  PartitionPin(const PartitionPin&) = delete;
  PartitionPin& operator=(const PartitionPin&) = delete;
  void release() {
    if (p_) {
      p_->pins.fetch_sub(1, std::memory_order_acq_rel);
      p_.reset();
    }
  }

 private:
  PartitionPtr p_;
};

struct FlushReport {
  PartitionNumber pnr = 0;
  std::uint64_t pages_written = 0;
  std::uint64_t bytes_written = 0;
  std::vector<Extent> extents;  // in write order
};

struct ReconcileResult {
  std::vector<PageImage> pages;  // leaves ascending, then inner levels, root last
  PersistedView view;
  std::shared_ptr<PartitionFilter> filter;
  std::string fence_low, fence_high;
  std::uint64_t n_records = 0;
};

// Builds a skipping filter over sorted partition records.
std::shared_ptr<PartitionFilter> build_filter(
    std::span<const VersionRecord> records, int bits_per_key, int hashes);

// Greedy dense packer: pages are cut at capacity and the final two pages are
// rebalanced so no page of a multi-page run falls below the fill target.
class LeafPacker {
 public:
  LeafPacker(std::size_t page_size, double fill_target);
  void add(VersionRecord rec);
  // Groups of records per page, in order. Clears the packer.
  std::vector<std::vector<VersionRecord>> finish();
  static std::size_t leaf_capacity(std::size_t page_size);

 private:
  std::size_t capacity_;
  double fill_target_;
  std::vector<std::vector<VersionRecord>> groups_;
  std::vector<VersionRecord> current_;
  std::size_t current_bytes_ = 0;
};

struct TreeStatsSnapshot {
  std::uint64_t switches = 0;
  std::uint64_t stale_pnr_retries = 0;
  std::uint64_t flushes = 0;
  std::uint64_t partitions_truncated = 0;
  std::uint64_t records_truncated = 0;
};

// The multi-version partitioned tree: one logical key space, horizontally
// partitioned by key prefix. Exactly one partition is mutable; at most one
// is the victim of an in-progress switch.
class Tree {
 public:
  Tree(PageStore& store, PageCache& cache, TreeConfig cfg);

  // --- foreground write path -------------------------------------------
  // Inserts into the mutable partition. The record's pnr is overwritten with
  // the current mutable partition number; a stale hint is re-resolved.
  PartitionNumber insert_record(VersionRecord rec);

  // --- switch / flush ---------------------------------------------------
  bool switch_in_progress() const { return is_switching_.load(); }
  // Freezes the mutable partition as victim, opens a fresh mutable one.
  // Returns the victim's partition number.
  PartitionNumber switch_partition();
  // Reconciles + flushes + publishes the victim. Returns the flush report
  // (empty when the victim held no records).
  FlushReport sync_victim();
  bool has_victim() const;

  ReconcileResult reconcile(Partition& victim);
  FlushReport flush_sequential(std::vector<PageImage>& pages);

  // --- lookup -----------------------------------------------------------
  PartitionNumber mutable_pnr() const;
  PartitionNumber max_pnr() const;
  std::size_t mutable_bytes() const;
  std::uint64_t mutable_records() const;

  // Partitions to consult for an equality search, newest logical first.
  // Sources covered by a cached partition are substituted by it. The
  // snapshot is immutable and shared; readers that race a truncation see a
  // freed-page error from the store and retry with a fresh snapshot.
  std::shared_ptr<const std::vector<PartitionPtr>> equality_snapshot() const;
  std::vector<PartitionPtr> equality_succession() const;
  // All visible data partitions (no cached-index partitions), newest first.
  std::vector<PartitionPtr> scan_succession() const;
  PartitionPtr partition(PartitionNumber pnr) const;
  std::vector<PartitionPtr> all_partitions() const;

  // Newest record of user_key visible under the snapshot, resolved without
  // materializing the whole version chain. `decided` reports whether this
  // partition determined the outcome (a visible record was met).
  std::optional<VersionRecord> visible_version(const Partition& p,
                                               std::string_view user_key,
                                               const Snapshot& snap,
                                               bool& decided,
                                               std::uint64_t* page_reads = nullptr);

  // All versions of user_key within one partition, newest first.
  std::vector<VersionRecord> point_versions(const Partition& p,
                                            std::string_view user_key,
                                            std::uint64_t* page_reads = nullptr);

  // Stable copy of an in-memory partition's records in [low, high).
  std::vector<VersionRecord> range_versions(const Partition& p,
                                            std::string_view low,
                                            std::string_view high,
                                            bool high_unbounded);

  // Leaf reference for a partitioned key (fence-interval containment).
  struct LeafRef {
    PartitionPtr part;
    std::uint64_t page_id = 0;     // persisted partitions
    std::size_t mem_index = 0;     // in-memory partitions
  };
  LeafRef traverse(const PartitionedKey& key);

  PageViewPtr load_page(std::uint64_t page_id,
                        std::uint64_t* reads = nullptr);
  PageViewPtr load_page_of(const Partition& p, std::uint64_t page_id,
                           std::uint64_t* reads = nullptr);

  // --- maintenance support ---------------------------------------------
  PartitionNumber allocate_output_pnr();
  // Registers a bulk-built partition (invisible until published).
  void adopt_bulk_partition(PartitionPtr p);
  // Atomic visibility switch for a finished maintenance job.
  //  - cached: sources become covered, their blooms retire.
  //  - gc: sources (and cached partitions over them) become invalid.
  void publish_cached(PartitionNumber output,
                      const std::vector<PartitionNumber>& sources);
  void publish_gc(PartitionNumber output,
                  const std::vector<PartitionNumber>& sources,
                  std::vector<PartitionNumber>& invalidated_out);
  // GC variant with no surviving records: only invalidates the sources.
  void publish_gc_empty(const std::vector<PartitionNumber>& sources,
                        std::vector<PartitionNumber>& invalidated_out);
  void drop_partition_object(PartitionNumber pnr);
  // Wholesale removal of one partition. Returns false while pinned.
  bool truncate_partition(PartitionNumber pnr);
  // Pin-safe partition lookup for target chasing.
  struct PinnedPartition {
    PartitionPtr part;
    PartitionPin pin;
  };
  std::optional<PinnedPartition> partition_pinned(PartitionNumber pnr) const;
  std::vector<PinnedPartition> scan_succession_pinned() const;

  // --- truncation -------------------------------------------------------
  // Removes [low, high). nullopt = an active cursor pins an overlapped
  // partition; retry after it drains.
  std::optional<std::uint64_t> range_truncate(const PartitionedKey& low,
                                              const PartitionedKey& high);

  // --- durability -------------------------------------------------------
  void commit_directory();
  void write_sidecar();
  void recover();
  // Highest commit timestamp seen while scanning at recovery; the engine
  // restarts its clock above it.
  Timestamp recovered_max_ts() const { return recovered_max_ts_; }

  std::string metadata_dump(bool synced_only = true) const;
  TreeStatsSnapshot stats() const;
  const std::vector<FlushReport>& flush_history() const { return flush_history_; }
  const TreeConfig& config() const { return cfg_; }
  PageStore& store() { return store_; }
  PageCache& cache() { return cache_; }

  // Test hook invoked between the mutable-pnr read and the node insert.
  std::function<void(PartitionNumber)> insert_pause_hook;

 private:
  DirectorySnapshot build_directory_locked() const;
  void charge_mem_delta(std::int64_t delta);
  void publish_filter(Partition& p, std::shared_ptr<PartitionFilter> f);
  void retire_bloom(Partition& p);
  void make_resident(Partition& p);
  void release_resident(Partition& p);
  std::uint64_t truncate_persisted_partial(Partition& p, std::string_view lo,
                                           std::string_view hi,
                                           bool hi_unbounded);

  PageStore& store_;
  PageCache& cache_;
  TreeConfig cfg_;

  void refresh_successions_locked();

  mutable std::shared_mutex table_mu_;
  std::mutex dir_mu_;
  std::shared_ptr<const std::vector<PartitionPtr>> equality_cache_;
  std::map<PartitionNumber, PartitionPtr> partitions_;
  PartitionNumber mutable_pnr_ = 0;
  PartitionNumber max_pnr_ = 0;
  std::atomic<bool> is_switching_{false};
  std::optional<PartitionNumber> victim_pnr_;

  Timestamp recovered_max_ts_ = 0;
  std::atomic<std::uint64_t> switches_{0};
  std::atomic<std::uint64_t> stale_retries_{0};
  std::atomic<std::uint64_t> flushes_{0};
  std::atomic<std::uint64_t> partitions_truncated_{0};
  std::atomic<std::uint64_t> records_truncated_{0};
  std::vector<FlushReport> flush_history_;
  std::mutex flush_history_mu_;

  friend class BulkPartitionBuilder;
};

// Streams pre-sorted records into a new invisible partition, dense-packing
// and flushing in chunks so a long merge never buffers the whole output.
// Records arrive either as structures or as pre-encoded byte spans lifted
// verbatim from source pages (the on-page record format carries no
// partition number, so merge output never re-encodes).
class BulkPartitionBuilder {
 public:
  BulkPartitionBuilder(Tree& tree, PartitionNumber pnr,
                       PartitionNumber position, char type,
                       std::uint64_t expected_records);
  // (user_key asc, ts desc) order across both entry points.
  void add(const VersionRecord& rec);
  void add_raw(std::string_view user_key, Timestamp ts,
               std::string_view record_bytes);
  // Completes the partition and registers it (invisible). Returns it.
  PartitionPtr finish();
  // Frees everything written so far.
  void abandon();
  std::uint64_t records_added() const { return n_records_; }
  const std::vector<Extent>& flushed_extents() const { return extents_; }

 private:
  struct Group {
    std::uint64_t page_id = 0;
    std::string buffer;                // concatenated encoded records
    std::vector<std::uint32_t> slots;  // record offsets into buffer
    std::string first_key, last_key;
    std::size_t cost() const { return buffer.size() + 2 * slots.size(); }
  };
  void close_current_page();
  void flush_full_chunks(bool keep_tail);
  void rebalance_tail();

  Tree& tree_;
  PartitionNumber pnr_;
  PartitionNumber position_;
  char type_;
  std::size_t capacity_;
  std::shared_ptr<PartitionFilter> filter_;
  Group current_;
  std::vector<Group> pending_;
  struct LeafMeta {
    std::uint64_t page_id;
    std::string first_key, last_key;
  };
  std::vector<LeafMeta> leaf_metas_;
  std::vector<std::uint64_t> flushed_ids_;
  std::vector<Extent> extents_;
  std::uint64_t n_records_ = 0;
  std::string fence_low_, fence_high_;
  std::string last_key_seen_;
  Timestamp last_ts_seen_ = 0;
  std::string scratch_;
  bool finished_ = false;
};

}  // namespace mvpbt
