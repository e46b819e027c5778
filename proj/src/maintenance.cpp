#include "mvpbt/maintenance.hpp"

#include <algorithm>
#include <thread>

#include "mvpbt/errors.hpp"

namespace mvpbt {

MaintenanceJob::MaintenanceJob(Tree& tree, JobKind kind,
                               std::vector<PartitionPtr> sources,
                               Snapshot horizon)
    : tree_(tree), kind_(kind), sources_(std::move(sources)),
      horizon_(std::move(horizon)) {
  if (sources_.empty()) throw std::invalid_argument("job needs sources");
  for (const auto& s : sources_) {
    if (!s->synced || !s->visible || s->is_mem()) {
      throw StateError("job source must be a synced visible partition");
    }
  }
  std::sort(sources_.begin(), sources_.end(),
            [](const PartitionPtr& a, const PartitionPtr& b) {
              return a->position > b->position;
            });
  std::uint64_t expected = 0;
  PartitionNumber newest_pos = 0;
  for (const auto& s : sources_) {
    source_pnrs_.push_back(s->pnr);
    pins_.emplace_back(s);
    expected += s->n_records;
    newest_pos = std::max(newest_pos, s->position);
    cursors_.push_back(SourceCursor{s, 0, 0, nullptr, false});
  }
  // A trailing tombstone may only be dropped when nothing older than the
  // merged set can resurface.
  PartitionNumber oldest_pos = sources_.back()->position;
  covers_oldest_ = true;
  for (const auto& p : tree_.scan_succession()) {
    if (p->synced && p->visible && p->position < oldest_pos) {
      covers_oldest_ = false;
      break;
    }
  }
  output_pnr_ = tree_.allocate_output_pnr();
  output_position_ = newest_pos;
  builder_ = std::make_unique<BulkPartitionBuilder>(
      tree_, output_pnr_, output_position_,
      kind_ == JobKind::CachedPartition ? 'C' : 'G', expected);
}

MaintenanceJob::~MaintenanceJob() {
  if (state_ != JobState::Done && builder_) builder_->abandon();
}

bool MaintenanceJob::head(SourceCursor& c, RecordRef& out) {
  while (!c.exhausted) {
    const auto& leaf_ids = c.part->disk.leaf_page_ids;
    if (c.leaf_idx >= leaf_ids.size()) {
      c.exhausted = true;
      break;
    }
    if (!c.page) {
      // Bypass the page cache: a full background merge must not flush the
      // hot read set.
      c.page = std::make_shared<const PageView>(
          tree_.store().read_page(leaf_ids[c.leaf_idx]));
    }
    if (c.rec_idx < c.page->size()) {
      out = c.page->record(c.rec_idx);
      return true;
    }
    c.page.reset();
    c.rec_idx = 0;
    ++c.leaf_idx;
  }
  return false;
}

void MaintenanceJob::advance(SourceCursor& c) { ++c.rec_idx; }

void MaintenanceJob::process_group() {
  // Smallest user key across cursors; cursors are position-descending, so
  // concatenating per-source runs yields the chain newest-to-oldest.
  RecordRef h;
  std::string_view min_key;
  bool any = false;
  for (auto& c : cursors_) {
    if (!head(c, h)) continue;
    if (!any || h.user_key < min_key) min_key = h.user_key;
    any = true;
  }
  if (!any) {
    state_ = JobState::Finalizing;
    return;
  }
  std::string key(min_key);

  // Gathered refs alias cursor pages; hold the pages for the group's scope.
  struct Version {
    RecordRef ref;
    std::string_view span;
    PartitionNumber source_pnr;
  };
  std::vector<Version> versions;
  std::vector<std::shared_ptr<const PageView>> held;
  for (auto& c : cursors_) {
    while (head(c, h)) {
      if (h.user_key != key) break;
      if (held.empty() || held.back() != c.page) held.push_back(c.page);
      versions.push_back(Version{h, c.page->record_span(c.rec_idx),
                                 c.part->pnr});
      advance(c);
      // The run may continue on the next page of the same source.
      if (c.rec_idx >= c.page->size() && held.back() == c.page) {
        std::shared_ptr<const PageView> finished_page = c.page;
        (void)finished_page;
      }
    }
  }
  merged_ += versions.size();
  progress_key_ = key;

  if (kind_ == JobKind::CachedPartition) {
    // One entry per distinct key pointing at the partition that holds the
    // newest version; pointers through cached sources are forwarded.
    const Version& newest = versions.front();
    PartitionNumber target = newest.ref.rtype == RecordType::CachedIndex
                                 ? get_pnr_be(newest.ref.value)
                                 : newest.source_pnr;
    VersionRecord entry;
    entry.rtype = RecordType::CachedIndex;
    entry.ts = newest.ref.ts;
    entry.key = PartitionedKey{output_pnr_, key};
    entry.value = encode_cached_target(target);
    builder_->add(entry);
    ++emitted_;
    output_has_records_ = true;
    return;
  }

  // Garbage collection: keep everything newer than the horizon plus the one
  // version the horizon still sees; predecessors of that version are
  // obsolete for every current and future snapshot.
  auto visible_to_horizon = [&](const RecordRef& r) {
    return r.ts <= horizon_.read_ts && !horizon_.is_active(r.ts);
  };
  std::size_t keep = versions.size();
  for (std::size_t i = 0; i < versions.size(); ++i) {
    if (visible_to_horizon(versions[i].ref)) {
      keep = i + 1;
      break;
    }
  }
  dropped_ += versions.size() - keep;
  // A chain whose horizon-visible head is a delete marker carries no value
  // for any live snapshot; without older partitions below, it can vanish.
  if (keep == 1 && covers_oldest_ && ends_chain(versions[0].ref.rtype) &&
      visible_to_horizon(versions[0].ref)) {
    dropped_ += 1;
    keep = 0;
  }
  for (std::size_t i = 0; i < keep; ++i) {
    builder_->add_raw(versions[i].ref.user_key, versions[i].ref.ts,
                      versions[i].span);
    ++emitted_;
    output_has_records_ = true;
  }
}

JobState MaintenanceJob::step(std::size_t max_records) {
  if (state_ == JobState::Done) return state_;
  if (state_ == JobState::Finalizing) return state_;
  state_ = JobState::Running;
  std::uint64_t start = merged_;
  while (state_ == JobState::Running && merged_ - start < max_records) {
    process_group();
  }
  if (state_ == JobState::Running) state_ = JobState::Paused;
  return state_;
}

std::vector<PartitionNumber> MaintenanceJob::finalize() {
  if (state_ != JobState::Finalizing) {
    throw StateError("finalize before the merge completed");
  }
  std::vector<PartitionNumber> to_truncate;
  if (!output_has_records_) {
    // Nothing survived (e.g. GC of fully dead chains): no output partition.
    builder_->abandon();
    if (kind_ == JobKind::GarbageCollection) {
      tree_.publish_gc_empty(source_pnrs_, to_truncate);
    }
    pins_.clear();
    state_ = JobState::Done;
    return to_truncate;
  }
  auto out = builder_->finish();
  if (kind_ == JobKind::CachedPartition) {
    PartitionNumber lo = kMaxPartitionNumber, hi = 0;
    for (const auto& s : sources_) {
      lo = std::min(lo, s->position);
      hi = std::max(hi, s->position);
      if (s->type == 'C') {
        lo = std::min(lo, s->cover_lo);
        hi = std::max(hi, s->cover_hi);
      }
    }
    out->cover_lo = lo;
    out->cover_hi = hi;
    tree_.publish_cached(output_pnr_, source_pnrs_);
  } else {
    tree_.publish_gc(output_pnr_, source_pnrs_, to_truncate);
  }
  pins_.clear();
  state_ = JobState::Done;
  return to_truncate;
}

void MaintenanceJob::abandon() {
  if (state_ == JobState::Done) return;
  builder_->abandon();
  pins_.clear();
  state_ = JobState::Done;
}

std::optional<MaintenanceScheduler::Decision> MaintenanceScheduler::schedule(
    Tree& tree) {
  if (cfg_.enable_gc) {
    PartitionNumber created = tree.max_pnr();
    if (created >= gc_watermark_ &&
        static_cast<std::uint32_t>(created - gc_watermark_) >= cfg_.gc_every) {
      std::vector<PartitionPtr> sources;
      for (const auto& p : tree.all_partitions()) {
        if (p->synced && p->visible && !p->is_mem() && p->type != 'C') {
          sources.push_back(p);
        }
      }
      if (sources.size() >= 2) {
        return Decision{JobKind::GarbageCollection, std::move(sources)};
      }
    }
  }
  if (!cfg_.enable_cached) return std::nullopt;

  // Candidate list: the persisted part of the logical search succession
  // (cached partitions plus data partitions no cached partition substitutes),
  // newest first. A job may only take a window of CONSECUTIVE entries whose
  // members are all of one kind; that keeps every produced cover span free of
  // partitions outside the job's sources, which the newest-wins pointer
  // semantics of a cached partition depends on.
  std::vector<PartitionPtr> succession;
  for (const auto& p : tree.all_partitions()) {
    if (!p->synced || !p->visible || p->is_mem()) continue;
    if (p->type != 'C' && p->covered) continue;
    succession.push_back(p);
  }
  std::sort(succession.begin(), succession.end(),
            [](const PartitionPtr& a, const PartitionPtr& b) {
              return a->position > b->position;
            });
  if (succession.size() < cfg_.cached_every) return std::nullopt;

  auto window_of = [&](auto pred) -> std::optional<std::vector<PartitionPtr>> {
    for (std::size_t start = 0;
         start + cfg_.cached_every <= succession.size(); ++start) {
      bool ok = true;
      for (std::size_t i = 0; i < cfg_.cached_every; ++i) {
        if (!pred(succession[start + i])) {
          ok = false;
          break;
        }
      }
      if (ok) {
        return std::vector<PartitionPtr>(
            succession.begin() + static_cast<std::ptrdiff_t>(start),
            succession.begin() + static_cast<std::ptrdiff_t>(start) +
                cfg_.cached_every);
      }
    }
    return std::nullopt;
  };

  // Two-level policy: accumulated cached partitions are re-merged first.
  if (auto run = window_of([](const PartitionPtr& p) { return p->type == 'C'; })) {
    return Decision{JobKind::CachedPartition, std::move(*run)};
  }
  if (auto run = window_of([](const PartitionPtr& p) { return p->type != 'C'; })) {
    return Decision{JobKind::CachedPartition, std::move(*run)};
  }
  return std::nullopt;
}

}  // namespace mvpbt
