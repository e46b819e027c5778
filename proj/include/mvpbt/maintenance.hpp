#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvpbt/tree.hpp"

namespace mvpbt {

enum class JobKind { CachedPartition, GarbageCollection };
enum class JobState { Running, Paused, Finalizing, Done };

struct MaintenanceStats {
  std::uint64_t jobs_run = 0;
  std::uint64_t cached_jobs = 0;
  std::uint64_t gc_jobs = 0;
  std::uint64_t records_merged = 0;
  std::uint64_t records_dropped = 0;
  std::uint64_t partitions_truncated = 0;
};

// A pausable background merge-sort into an invisible partition, finished by
// an atomic visibility switch. Exactly one job runs per tree at a time.
class MaintenanceJob {
 public:
  // Sources must be synced, visible, non-mutable and pairwise distinct.
  // `horizon` is consulted for garbage collection only.
  MaintenanceJob(Tree& tree, JobKind kind, std::vector<PartitionPtr> sources,
                 Snapshot horizon);
  ~MaintenanceJob();

  JobKind kind() const { return kind_; }
  JobState state() const { return state_; }
  PartitionNumber output_pnr() const { return output_pnr_; }
  const std::vector<PartitionNumber>& source_pnrs() const { return source_pnrs_; }
  std::optional<std::string> progress_key() const { return progress_key_; }
  std::uint64_t records_merged() const { return merged_; }
  std::uint64_t records_dropped() const { return dropped_; }
  std::uint64_t records_emitted() const { return emitted_; }

  // Merges up to max_records more records. Returns the resulting state:
  // Paused while work remains, Finalizing when the merge is complete.
  JobState step(std::size_t max_records);

  // Publishes the output partition with an atomic visibility switch. For GC
  // the purified (now invalidated) partitions are returned for cropping once
  // the cursors that pin them drain.
  std::vector<PartitionNumber> finalize();

  // Discards the invisible output; sources stay untouched.
  void abandon();

 private:
  struct SourceCursor {
    PartitionPtr part;
    std::size_t leaf_idx = 0;
    std::size_t rec_idx = 0;
    std::shared_ptr<const PageView> page;
    bool exhausted = false;
  };

  bool head(SourceCursor& c, RecordRef& out);
  void advance(SourceCursor& c);
  void process_group();

  Tree& tree_;
  JobKind kind_;
  JobState state_ = JobState::Running;
  std::vector<PartitionPtr> sources_;  // position-descending
  std::vector<PartitionNumber> source_pnrs_;
  std::vector<PartitionPin> pins_;
  Snapshot horizon_;
  bool covers_oldest_ = false;
  PartitionNumber output_pnr_ = 0;
  PartitionNumber output_position_ = 0;
  std::unique_ptr<BulkPartitionBuilder> builder_;
  std::vector<SourceCursor> cursors_;
  std::optional<std::string> progress_key_;
  std::uint64_t merged_ = 0;
  std::uint64_t dropped_ = 0;
  std::uint64_t emitted_ = 0;
  bool output_has_records_ = false;
};

struct SchedulerConfig {
  std::uint32_t cached_every = 8;
  std::uint32_t gc_every = 40;
  bool enable_cached = true;
  bool enable_gc = true;
};

// Cadence-based job selection over a tree's synced partitions.
class MaintenanceScheduler {
 public:
  explicit MaintenanceScheduler(SchedulerConfig cfg) : cfg_(cfg) {}

  struct Decision {
    JobKind kind;
    std::vector<PartitionPtr> sources;
  };
  std::optional<Decision> schedule(Tree& tree);
  void note_gc_done(PartitionNumber watermark) { gc_watermark_ = watermark; }
  PartitionNumber gc_watermark() const { return gc_watermark_; }

 private:
  SchedulerConfig cfg_;
  PartitionNumber gc_watermark_ = 0;
};

}  // namespace mvpbt
