#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mvpbt/cache.hpp"
#include "mvpbt/maintenance.hpp"
#include "mvpbt/paged_tree.hpp"
#include "mvpbt/store.hpp"
#include "mvpbt/tree.hpp"

namespace mvpbt {

enum class EngineMode { Mvpbt, MvpbtNoCacheNoGc, BtreeBaseline };

struct EngineConfig {
  std::string path;
  EngineMode mode = EngineMode::Mvpbt;
  std::uint64_t cache_bytes = 10ull << 20;
  double buffer_share_max = 0.25;
  std::uint64_t partition_cap_bytes = 2ull << 20;
  std::size_t page_size = 16 * 1024;
  int bloom_bits_per_key = 10;
  int bloom_hashes = 7;
  double dense_fill_target = 0.9;
  std::uint32_t gc_every = 40;
  std::uint32_t cached_every = 8;
  std::size_t mem_node_limit = 16 * 1024;
  bool background_maintenance = true;
  bool sync_on_flush = false;
  std::uint64_t store_max_bytes = 0;
  std::uint32_t read_latency_us = 0;   // device model, see PageStore::Options
  std::uint32_t write_latency_us = 0;
  std::uint64_t relation_id = 1;
  std::uint32_t baseline_directory_every = 1024;

  // Parses the documented configuration keys (cache_bytes, buffer_share_max,
  // partition_cap_bytes, bloom_bits_per_key, ...).
  static EngineConfig from_map(const std::string& path,
                               const std::map<std::string, std::string>& kv);
};

// Buffer-pressure bookkeeping shared by all trees of an engine.
struct GlobalMeta {
  double buffer_share = 0.0;  // current dirty share of the cache
  double buffer_share_max = 0.25;
  std::uint64_t cache_bytes = 0;
  bool require_switch = false;
};

// Picks the tree whose mutable partition holds the most dirty bytes once the
// shared threshold is crossed; trees mid-switch are skipped.
std::optional<std::size_t> maybe_trigger_switch(
    GlobalMeta& global, const std::vector<Tree*>& trees);

class Engine;

class Transaction {
 public:
  enum class State { Active, Committed, Aborted };
  Timestamp id() const { return id_; }
  const Snapshot& snapshot() const { return snapshot_; }
  State state() const { return state_; }

 private:
  friend class Engine;
  struct PendingWrite {
    std::string key;
    std::string value;
    RecordType rtype = RecordType::Regular;
  };
  Timestamp id_ = 0;
  Snapshot snapshot_;
  std::vector<PendingWrite> writes_;
  State state_ = State::Active;
};

// Per-call introspection of the equality search path.
struct GetTrace {
  std::optional<std::string> value;
  std::uint64_t partitions_considered = 0;
  std::uint64_t filters_probed = 0;
  std::uint64_t positive_probes = 0;  // filter hits + always-searched parts
  std::uint64_t page_reads = 0;       // storage reads (cache misses)
  std::uint64_t cached_consults = 0;
  std::uint8_t max_height = 1;
  std::optional<PartitionNumber> chosen_pnr;
};

// Snapshot-visible merge over the partition succession, ascending user keys.
class ScanCursor {
 public:
  std::optional<std::pair<std::string, std::string>> next();
  std::size_t children() const { return children_.size(); }

 private:
  friend class Engine;
  struct Child {
    Tree::PinnedPartition part;
    std::vector<VersionRecord> buffer;  // mem snapshot or current leaf slice
    std::size_t idx = 0;
    std::size_t leaf_idx = 0;  // persisted iteration state
    bool mem = false;
    bool exhausted = false;
  };
  const VersionRecord* head(Child& c);
  void advance(Child& c);
  void refill(Child& c);
  void refill_from(Child& c, std::string_view low);

  Engine* engine_ = nullptr;
  Snapshot snap_;
  std::string high_;
  std::vector<Child> children_;
  std::string last_emitted_;
  bool baseline_ = false;
  std::vector<std::pair<std::string, std::string>> baseline_rows_;
  std::size_t baseline_idx_ = 0;
};

class Engine {
 public:
  static std::unique_ptr<Engine> open(EngineConfig cfg);
  ~Engine();
  void close();

  Transaction begin();
  Timestamp commit(Transaction& tx);
  void abort(Transaction& tx);

  void put(Transaction& tx, std::string_view key, std::string_view value);
  void del(Transaction& tx, std::string_view key);
  std::optional<std::string> get(Transaction& tx, std::string_view key);
  GetTrace get_traced(Transaction& tx, std::string_view key);
  ScanCursor scan(Transaction& tx, std::string_view low, std::string_view high);

  std::map<std::string, std::uint64_t> stats() const;
  GlobalMeta global_meta() const;
  Snapshot oldest_active_snapshot() const;

  // One unit of background work; returns whether anything was done.
  bool maintenance_tick();
  // Runs maintenance to quiescence: victim flushed, scheduled jobs finished.
  void drain_maintenance();
  void force_switch();
  // Switches out and persists the mutable partition, then drains. Safe to
  // call while the background thread runs.
  void flush_all();
  MaintenanceStats maintenance_stats() const;
  MaintenanceJob* running_job();

  // Starts a job explicitly (used by tests and drain paths).
  MaintenanceJob& start_job(JobKind kind, std::vector<PartitionPtr> sources);

  // Drops all volatile state without flushing, as a crash would.
  void simulate_crash();

  Tree& tree() { return *tree_; }
  PageStore& store() { return *store_; }
  PageCache& cache() { return *cache_; }
  PagedTree& baseline() { return *baseline_; }
  const EngineConfig& config() const { return cfg_; }
  EngineMode mode() const { return cfg_.mode; }

 private:
  friend class ScanCursor;
  Engine() = default;
  std::optional<std::string> committed_get(const Snapshot& snap,
                                           std::string_view key,
                                           GetTrace* trace);
  std::optional<std::string> chase_partition(const Partition& p,
                                             const Snapshot& snap,
                                             std::string_view key,
                                             GetTrace* trace, bool& decided);
  void post_commit_maintenance();
  void background_loop();
  bool switch_needed() const;
  bool maintenance_tick_locked();

  // Serializes switch/flush/job work between the background thread and
  // foreground flush requests.
  std::mutex maint_mu_;

  EngineConfig cfg_;
  std::unique_ptr<PageStore> store_;
  std::unique_ptr<PageCache> cache_;
  std::unique_ptr<Tree> tree_;
  std::unique_ptr<PagedTree> baseline_;

  mutable std::mutex txn_mu_;
  Timestamp clock_ = 0;
  std::map<Timestamp, Snapshot> active_;
  std::set<Timestamp> applying_;

  std::unique_ptr<MaintenanceScheduler> scheduler_;
  std::unique_ptr<MaintenanceJob> job_;
  mutable std::mutex job_mu_;
  MaintenanceStats maint_stats_;
  std::vector<PartitionNumber> pending_truncations_;

  std::thread bg_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> crashed_{false};
  bool closed_ = false;

  std::atomic<std::uint64_t> begins_{0};
  std::atomic<std::uint64_t> commits_{0};
  std::atomic<std::uint64_t> gets_{0};
  std::atomic<std::uint64_t> scans_{0};
  std::atomic<std::uint64_t> filter_probes_{0};
  std::atomic<std::uint64_t> filter_positives_{0};
  std::atomic<std::uint64_t> baseline_commits_{0};
};

}  // namespace mvpbt
