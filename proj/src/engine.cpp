#include "mvpbt/engine.hpp"

#include <algorithm>
#include <cassert>
#include <filesystem>

#include "mvpbt/errors.hpp"

namespace mvpbt {

EngineConfig EngineConfig::from_map(
    const std::string& path, const std::map<std::string, std::string>& kv) {
  EngineConfig cfg;
  cfg.path = path;
  auto u64 = [&](const char* key, std::uint64_t& out) {
    auto it = kv.find(key);
    if (it != kv.end()) out = std::stoull(it->second);
  };
  auto dbl = [&](const char* key, double& out) {
    auto it = kv.find(key);
    if (it != kv.end()) out = std::stod(it->second);
  };
  u64("cache_bytes", cfg.cache_bytes);
  dbl("buffer_share_max", cfg.buffer_share_max);
  u64("partition_cap_bytes", cfg.partition_cap_bytes);
  std::uint64_t tmp;
  if (auto it = kv.find("bloom_bits_per_key"); it != kv.end()) {
    cfg.bloom_bits_per_key = std::stoi(it->second);
  }
  if (auto it = kv.find("bloom_hashes"); it != kv.end()) {
    cfg.bloom_hashes = std::stoi(it->second);
  }
  tmp = cfg.page_size;
  u64("page_size", tmp);
  cfg.page_size = static_cast<std::size_t>(tmp);
  dbl("dense_fill_target", cfg.dense_fill_target);
  tmp = cfg.gc_every;
  u64("gc_every", tmp);
  cfg.gc_every = static_cast<std::uint32_t>(tmp);
  tmp = cfg.cached_every;
  u64("cached_every", tmp);
  cfg.cached_every = static_cast<std::uint32_t>(tmp);
  tmp = cfg.mem_node_limit;
  u64("mem_node_limit", tmp);
  cfg.mem_node_limit = static_cast<std::size_t>(tmp);
  if (auto it = kv.find("mode"); it != kv.end()) {
    if (it->second == "mvpbt") cfg.mode = EngineMode::Mvpbt;
    else if (it->second == "mvpbt-nocache-nogc") cfg.mode = EngineMode::MvpbtNoCacheNoGc;
    else if (it->second == "btree-baseline") cfg.mode = EngineMode::BtreeBaseline;
    else throw std::invalid_argument("unknown mode " + it->second);
  }
  if (auto it = kv.find("background_maintenance"); it != kv.end()) {
    cfg.background_maintenance = it->second == "1" || it->second == "true";
  }
  return cfg;
}

std::optional<std::size_t> maybe_trigger_switch(
    GlobalMeta& global, const std::vector<Tree*>& trees) {
  std::uint64_t dirty = 0;
  for (Tree* t : trees) dirty += t->mutable_bytes();
  global.buffer_share =
      global.cache_bytes == 0
          ? 0.0
          : static_cast<double>(dirty) / static_cast<double>(global.cache_bytes);
  global.require_switch = global.buffer_share > global.buffer_share_max;
  if (!global.require_switch) return std::nullopt;
  std::optional<std::size_t> best;
  std::size_t best_bytes = 0;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    if (trees[i]->switch_in_progress()) continue;  // already has a victim
    std::size_t b = trees[i]->mutable_bytes();
    if (!best || b > best_bytes) {
      best = i;
      best_bytes = b;
    }
  }
  return best;
}

std::unique_ptr<Engine> Engine::open(EngineConfig cfg) {
  auto e = std::unique_ptr<Engine>(new Engine());
  e->cfg_ = cfg;
  bool existing = std::filesystem::exists(cfg.path) &&
                  std::filesystem::file_size(cfg.path) > 0;
  PageStore::Options sopts;
  sopts.max_bytes = cfg.store_max_bytes;
  sopts.sync_on_commit = cfg.sync_on_flush;
  sopts.read_latency_us = cfg.read_latency_us;
  sopts.write_latency_us = cfg.write_latency_us;
  e->store_ = std::make_unique<PageStore>(cfg.path, sopts, !existing);
  e->cache_ = std::make_unique<PageCache>(cfg.cache_bytes);

  if (cfg.mode == EngineMode::BtreeBaseline) {
    PagedTree::Config pcfg;
    pcfg.page_size = cfg.page_size;
    pcfg.cache_bytes = cfg.cache_bytes;
    pcfg.dense_fill_target = cfg.dense_fill_target;
    pcfg.directory_every = cfg.baseline_directory_every;
    e->baseline_ = std::make_unique<PagedTree>(*e->store_, pcfg);
    if (existing) e->baseline_->recover();
    return e;
  }

  TreeConfig tcfg;
  tcfg.relation_id = cfg.relation_id;
  tcfg.page_size = cfg.page_size;
  tcfg.dense_fill_target = cfg.dense_fill_target;
  tcfg.mem_node_limit = cfg.mem_node_limit;
  tcfg.bloom_bits_per_key = cfg.bloom_bits_per_key;
  tcfg.bloom_hashes = cfg.bloom_hashes;
  tcfg.sidecar_path = cfg.path + ".meta";
  e->tree_ = std::make_unique<Tree>(*e->store_, *e->cache_, tcfg);
  if (existing) {
    e->tree_->recover();
    e->clock_ = e->tree_->recovered_max_ts();
  }

  SchedulerConfig scfg;
  scfg.cached_every = cfg.cached_every;
  scfg.gc_every = cfg.gc_every;
  scfg.enable_cached = cfg.mode == EngineMode::Mvpbt;
  scfg.enable_gc = cfg.mode == EngineMode::Mvpbt;
  e->scheduler_ = std::make_unique<MaintenanceScheduler>(scfg);

  if (cfg.background_maintenance) {
    e->bg_ = std::thread([eng = e.get()] { eng->background_loop(); });
  }
  return e;
}

Engine::~Engine() {
  try {
    close();
  } catch (...) {
  }
}

void Engine::close() {
  if (closed_) return;
  closed_ = true;
  stop_.store(true);
  if (bg_.joinable()) bg_.join();
  if (crashed_.load()) return;
  if (cfg_.mode == EngineMode::BtreeBaseline) {
    baseline_->checkpoint();
    baseline_->commit_directory();
    store_->sync();
    return;
  }
  // Persist the mutable partition and wind down maintenance.
  {
    std::lock_guard lk(job_mu_);
    if (job_ && job_->state() != JobState::Done) {
      job_->abandon();  // invisible output is discarded, sources untouched
    }
    job_.reset();
  }
  if (!tree_->switch_in_progress() && tree_->mutable_records() > 0) {
    tree_->switch_partition();
  }
  if (tree_->has_victim()) tree_->sync_victim();
  tree_->commit_directory();
  tree_->write_sidecar();
  store_->sync();
}

void Engine::simulate_crash() {
  // Everything volatile is dropped; nothing is flushed or committed. The
  // store file stays exactly as the last durable point left it.
  crashed_.store(true);
  stop_.store(true);
  if (bg_.joinable()) bg_.join();
  closed_ = true;
}

Transaction Engine::begin() {
  Transaction tx;
  std::lock_guard lk(txn_mu_);
  tx.id_ = ++clock_;
  std::vector<Timestamp> active;
  active.reserve(active_.size() + applying_.size());
  for (const auto& [id, snap] : active_) active.push_back(id);
  for (Timestamp t : applying_) active.push_back(t);
  std::sort(active.begin(), active.end());
  tx.snapshot_ = Snapshot{tx.id_, std::move(active)};
  active_.emplace(tx.id_, tx.snapshot_);
  begins_.fetch_add(1, std::memory_order_relaxed);
  return tx;
}

Timestamp Engine::commit(Transaction& tx) {
  if (tx.state_ != Transaction::State::Active) {
    throw StateError("commit on a non-active transaction");
  }
  Timestamp commit_ts;
  {
    std::lock_guard lk(txn_mu_);
    commit_ts = ++clock_;
    applying_.insert(commit_ts);
    active_.erase(tx.id_);
  }
  // Fold the write set: the last operation per key wins; its record type was
  // fixed by the preceding equality search at put/delete time.
  std::map<std::string_view, const Transaction::PendingWrite*> final_ops;
  for (const auto& w : tx.writes_) final_ops[w.key] = &w;
  for (auto& w : tx.writes_) {
    if (final_ops[w.key] != &w) continue;
    VersionRecord rec;
    rec.rtype = w.rtype;
    rec.ts = commit_ts;
    rec.key = PartitionedKey{0, w.key};
    rec.value = w.value;
    if (cfg_.mode == EngineMode::BtreeBaseline) {
      if (w.rtype == RecordType::Tombstone) {
        baseline_->erase(w.key);
      } else {
        baseline_->upsert(w.key, w.value, commit_ts);
      }
    } else {
      tree_->insert_record(std::move(rec));
    }
  }
  {
    std::lock_guard lk(txn_mu_);
    applying_.erase(commit_ts);
  }
  tx.state_ = Transaction::State::Committed;
  commits_.fetch_add(1, std::memory_order_relaxed);
  if (cfg_.mode == EngineMode::BtreeBaseline) {
    if (!tx.writes_.empty()) {
      baseline_->checkpoint();
      baseline_commits_.fetch_add(1, std::memory_order_relaxed);
    }
  } else {
    post_commit_maintenance();
  }
  return commit_ts;
}

void Engine::abort(Transaction& tx) {
  if (tx.state_ != Transaction::State::Active) {
    throw StateError("abort on a non-active transaction");
  }
  {
    std::lock_guard lk(txn_mu_);
    active_.erase(tx.id_);
  }
  tx.writes_.clear();
  tx.state_ = Transaction::State::Aborted;
}

void Engine::put(Transaction& tx, std::string_view key,
                 std::string_view value) {
  if (tx.state_ != Transaction::State::Active) {
    throw StateError("write on a non-active transaction");
  }
  if (key.empty()) throw std::invalid_argument("empty key");
  std::size_t max_value = LeafPacker::leaf_capacity(cfg_.page_size) / 4;
  if (value.size() > max_value) {
    throw std::invalid_argument("value exceeds page budget");
  }
  // Record type via preceding equality search: first the own write set,
  // then the committed state under the transaction snapshot.
  bool predecessor = false;
  bool decided = false;
  for (auto it = tx.writes_.rbegin(); it != tx.writes_.rend(); ++it) {
    if (it->key == key) {
      predecessor = it->rtype != RecordType::Tombstone;
      decided = true;
      break;
    }
  }
  if (!decided && cfg_.mode != EngineMode::BtreeBaseline) {
    predecessor = committed_get(tx.snapshot_, key, nullptr).has_value();
  }
  Transaction::PendingWrite w;
  w.key.assign(key);
  w.value.assign(value);
  w.rtype = predecessor ? RecordType::Replacement : RecordType::Regular;
  tx.writes_.push_back(std::move(w));
}

void Engine::del(Transaction& tx, std::string_view key) {
  if (tx.state_ != Transaction::State::Active) {
    throw StateError("write on a non-active transaction");
  }
  bool visible = false;
  bool decided = false;
  for (auto it = tx.writes_.rbegin(); it != tx.writes_.rend(); ++it) {
    if (it->key == key) {
      visible = it->rtype != RecordType::Tombstone;
      decided = true;
      break;
    }
  }
  if (!decided) {
    if (cfg_.mode == EngineMode::BtreeBaseline) {
      visible = baseline_->get(key).has_value();
    } else {
      visible = committed_get(tx.snapshot_, key, nullptr).has_value();
    }
  }
  if (!visible) return;  // blind delete of nothing: a no-op success
  Transaction::PendingWrite w;
  w.key.assign(key);
  w.rtype = RecordType::Tombstone;
  tx.writes_.push_back(std::move(w));
}

std::optional<std::string> Engine::get(Transaction& tx, std::string_view key) {
  if (tx.state_ != Transaction::State::Active) {
    throw StateError("read on a non-active transaction");
  }
  gets_.fetch_add(1, std::memory_order_relaxed);
  // Read own writes first.
  for (auto it = tx.writes_.rbegin(); it != tx.writes_.rend(); ++it) {
    if (it->key == key) {
      if (it->rtype == RecordType::Tombstone) return std::nullopt;
      return it->value;
    }
  }
  if (cfg_.mode == EngineMode::BtreeBaseline) return baseline_->get(key);
  return committed_get(tx.snapshot_, key, nullptr);
}

GetTrace Engine::get_traced(Transaction& tx, std::string_view key) {
  GetTrace trace;
  for (auto it = tx.writes_.rbegin(); it != tx.writes_.rend(); ++it) {
    if (it->key == key) {
      if (it->rtype != RecordType::Tombstone) trace.value = it->value;
      return trace;
    }
  }
  trace.value = committed_get(tx.snapshot_, key, &trace);
  return trace;
}

// Search one data partition for the newest visible version of key.
// `decided` is set when the partition determined the outcome (a visible
// record was found, tombstone or not).
std::optional<std::string> Engine::chase_partition(const Partition& p,
                                                   const Snapshot& snap,
                                                   std::string_view key,
                                                   GetTrace* trace,
                                                   bool& decided) {
  std::uint64_t reads = 0;
  auto rec = tree_->visible_version(p, key, snap, decided, &reads);
  if (trace) {
    trace->page_reads += reads;
    trace->max_height = std::max(trace->max_height, p.disk.height);
  }
  if (!decided) return std::nullopt;
  if (trace) trace->chosen_pnr = rec->key.pnr;
  if (ends_chain(rec->rtype)) return std::nullopt;
  return std::move(rec->value);
}

std::optional<std::string> Engine::committed_get(const Snapshot& snap,
                                                 std::string_view key,
                                                 GetTrace* trace) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto succession = tree_->equality_snapshot();
    bool retry = false;
    // A concurrent truncation can free pages under this snapshot; the store
    // reports the stale read and the search restarts on fresh metadata.
    try {
      for (const PartitionPtr& p : *succession) {
        if (trace) ++trace->partitions_considered;
        if (p->type == 'C') {
          if (trace) ++trace->cached_consults;
          auto index_entries = tree_->point_versions(*p, key, nullptr);
          if (index_entries.empty()) continue;  // absent from all sources
          PartitionNumber target = index_entries.front().cached_target();
          auto pinned = tree_->partition_pinned(target);
          if (!pinned || !pinned->part->visible) {
            retry = true;  // sources moved under us (concurrent gc)
            break;
          }
          bool decided = false;
          auto val = chase_partition(*pinned->part, snap, key, trace, decided);
          if (decided) return val;
          // The indexed newest version is invisible to this snapshot: fall
          // through to the older covered sources, newest first.
          std::vector<Tree::PinnedPartition> older;
          for (auto& q : tree_->scan_succession_pinned()) {
            if (!q.part->synced) continue;
            if (q.part->position >= p->cover_lo &&
                q.part->position <= p->cover_hi &&
                q.part->position < pinned->part->position) {
              older.push_back(std::move(q));
            }
          }
          for (const auto& q : older) {
            bool d2 = false;
            auto v2 = chase_partition(*q.part, snap, key, trace, d2);
            if (d2) return v2;
          }
          continue;
        }
        // Regular / gc-output / in-memory partition.
        if (!p->is_mem() && p->filter) {
          filter_probes_.fetch_add(1, std::memory_order_relaxed);
          if (trace) ++trace->filters_probed;
          if (!p->filter->probe(key)) continue;
          filter_positives_.fetch_add(1, std::memory_order_relaxed);
        }
        if (trace) ++trace->positive_probes;
        bool decided = false;
        auto val = chase_partition(*p, snap, key, trace, decided);
        if (decided) return val;
      }
    } catch (const StateError&) {
      retry = true;
    }
    if (!retry) return std::nullopt;
  }
  throw StateError("equality search kept racing maintenance");
}

ScanCursor Engine::scan(Transaction& tx, std::string_view low,
                        std::string_view high) {
  if (tx.state_ != Transaction::State::Active) {
    throw StateError("scan on a non-active transaction");
  }
  if (!(low < high)) throw std::invalid_argument("scan range out of order");
  scans_.fetch_add(1, std::memory_order_relaxed);
  ScanCursor cur;
  cur.engine_ = this;
  cur.snap_ = tx.snapshot_;
  cur.high_.assign(high);
  cur.last_emitted_.assign(low);
  if (cfg_.mode == EngineMode::BtreeBaseline) {
    cur.baseline_ = true;
    cur.baseline_rows_ =
        baseline_->scan(low, high, std::numeric_limits<std::size_t>::max());
    return cur;
  }

  // Pending writes of the transaction participate as one more child at the
  // newest position.
  {
    ScanCursor::Child own;
    own.mem = true;
    std::map<std::string, const Transaction::PendingWrite*> final_ops;
    for (const auto& w : tx.writes_) {
      if (w.key >= low && w.key < high) final_ops[w.key] = &w;
    }
    for (const auto& [k, w] : final_ops) {
      VersionRecord r;
      r.rtype = w->rtype;
      r.ts = tx.snapshot_.read_ts;  // own id: visible to this snapshot only
      r.key = PartitionedKey{kMaxPartitionNumber, k};
      r.value = w->value;
      own.buffer.push_back(std::move(r));
    }
    if (!own.buffer.empty()) cur.children_.push_back(std::move(own));
  }

  for (auto& pinned : tree_->scan_succession_pinned()) {
    PartitionPtr p = pinned.part;
    if (!p->is_mem() && p->synced && p->n_records > 0 &&
        (p->fence_high < low || p->fence_low >= high)) {
      continue;  // fence interval misses the range
    }
    ScanCursor::Child c;
    if (p->is_mem()) {
      c.mem = true;
      c.buffer = tree_->range_versions(*p, low, high, false);
      if (c.buffer.empty()) continue;
    } else {
      c.mem = false;
      // Last leaf whose first key is strictly below low: a version run of
      // `low` itself may begin at the tail of the preceding leaf.
      const auto& firsts = p->disk.leaf_first_keys;
      auto it = std::lower_bound(firsts.begin(), firsts.end(), std::string(low));
      c.leaf_idx = it == firsts.begin()
                       ? 0
                       : static_cast<std::size_t>(it - firsts.begin()) - 1;
    }
    c.part = std::move(pinned);
    cur.children_.push_back(std::move(c));
  }
  for (auto& c : cur.children_) {
    if (!c.mem) cur.refill_from(c, low);
  }
  return cur;
}

void ScanCursor::refill(Child& c) { refill_from(c, last_emitted_); }

void ScanCursor::refill_from(Child& c, std::string_view low) {
  // Loads the next leaf slice of a persisted partition into the buffer.
  c.buffer.clear();
  c.idx = 0;
  const auto& leaf_ids = c.part.part->disk.leaf_page_ids;
  while (c.buffer.empty()) {
    if (c.leaf_idx >= leaf_ids.size()) {
      c.exhausted = true;
      return;
    }
    auto page = engine_->tree_->load_page(leaf_ids[c.leaf_idx]);
    ++c.leaf_idx;
    std::size_t n = page->size();
    for (std::size_t i = page->lower_bound(low); i < n; ++i) {
      RecordRef ref = page->record(i);
      if (ref.user_key >= high_) {
        c.exhausted = c.buffer.empty();
        return;
      }
      c.buffer.push_back(page->materialize(i));
    }
  }
}

const VersionRecord* ScanCursor::head(Child& c) {
  while (true) {
    if (c.idx < c.buffer.size()) return &c.buffer[c.idx];
    if (c.mem || c.exhausted) return nullptr;
    refill(c);
    if (c.exhausted && c.idx >= c.buffer.size()) return nullptr;
  }
}

void ScanCursor::advance(Child& c) { ++c.idx; }

std::optional<std::pair<std::string, std::string>> ScanCursor::next() {
  if (baseline_) {
    if (baseline_idx_ >= baseline_rows_.size()) return std::nullopt;
    return baseline_rows_[baseline_idx_++];
  }
  while (true) {
    const std::string* min_key = nullptr;
    for (auto& c : children_) {
      const VersionRecord* h = head(c);
      if (!h) continue;
      if (!min_key || h->key.user_key < *min_key) min_key = &h->key.user_key;
    }
    if (!min_key) return std::nullopt;
    std::string key = *min_key;
    // Children are ordered newest position first; concatenated candidate
    // runs give the chain new-to-old for resolution.
    std::vector<VersionRecord> candidates;
    for (auto& c : children_) {
      while (const VersionRecord* h = head(c)) {
        if (h->key.user_key != key) break;
        candidates.push_back(*h);
        advance(c);
      }
    }
    last_emitted_ = key;
    const VersionRecord* winner = resolve_chain(candidates, snap_);
    if (winner) return std::make_pair(key, winner->value);
    // Invalidating or invisible everywhere: key suppressed, continue.
  }
}

void Engine::post_commit_maintenance() {
  if (cfg_.background_maintenance) return;  // the background thread drives
  while (maintenance_tick()) {
  }
}

bool Engine::switch_needed() const {
  std::uint64_t mutable_bytes = tree_->mutable_bytes();
  if (mutable_bytes >= cfg_.partition_cap_bytes) return true;
  double share = static_cast<double>(mutable_bytes) /
                 static_cast<double>(std::max<std::uint64_t>(cfg_.cache_bytes, 1));
  return share > cfg_.buffer_share_max;
}

bool Engine::maintenance_tick() {
  std::lock_guard lk(maint_mu_);
  return maintenance_tick_locked();
}

bool Engine::maintenance_tick_locked() {
  if (cfg_.mode == EngineMode::BtreeBaseline) return false;
  if (tree_->has_victim()) {
    try {
      tree_->sync_victim();
    } catch (const StorageFullError&) {
      return false;  // victim state kept; retried on the next tick
    }
    return true;
  }
  if (switch_needed() && !tree_->switch_in_progress() &&
      tree_->mutable_records() > 0) {
    tree_->switch_partition();
    return true;
  }
  std::lock_guard lk(job_mu_);
  // Crop invalidated partitions whose reader pins have drained.
  if (!pending_truncations_.empty()) {
    std::vector<PartitionNumber> still;
    bool any = false;
    for (PartitionNumber pnr : pending_truncations_) {
      if (tree_->truncate_partition(pnr)) {
        any = true;
      } else {
        still.push_back(pnr);
      }
    }
    pending_truncations_ = std::move(still);
    if (any) return true;
  }
  if (job_) {
    if (job_->state() == JobState::Done) {
      job_.reset();
      return true;
    }
    JobState s = job_->step(4096);
    if (s == JobState::Finalizing) {
      auto leftovers = job_->finalize();
      for (PartitionNumber pnr : leftovers) pending_truncations_.push_back(pnr);
      maint_stats_.jobs_run += 1;
      maint_stats_.records_merged += job_->records_merged();
      maint_stats_.records_dropped += job_->records_dropped();
      if (job_->kind() == JobKind::GarbageCollection) {
        maint_stats_.gc_jobs += 1;
        scheduler_->note_gc_done(tree_->max_pnr());
      } else {
        maint_stats_.cached_jobs += 1;
      }
      job_.reset();
    }
    return true;
  }
  if (cfg_.mode != EngineMode::Mvpbt) return false;
  auto decision = scheduler_->schedule(*tree_);
  if (!decision) return false;
  Snapshot horizon = oldest_active_snapshot();
  job_ = std::make_unique<MaintenanceJob>(*tree_, decision->kind,
                                          std::move(decision->sources),
                                          std::move(horizon));
  return true;
}

void Engine::drain_maintenance() {
  // A bounded loop: every tick makes progress or the system is quiescent.
  for (int i = 0; i < 1 << 22; ++i) {
    if (!maintenance_tick()) return;
  }
  throw StateError("maintenance failed to reach quiescence");
}

void Engine::force_switch() {
  std::lock_guard lk(maint_mu_);
  if (tree_->switch_in_progress()) return;
  tree_->switch_partition();
}

void Engine::flush_all() {
  if (cfg_.mode == EngineMode::BtreeBaseline) {
    baseline_->checkpoint();
    baseline_->commit_directory();
    return;
  }
  {
    std::lock_guard lk(maint_mu_);
    if (!tree_->switch_in_progress() && tree_->mutable_records() > 0) {
      tree_->switch_partition();
    }
  }
  drain_maintenance();
}

MaintenanceStats Engine::maintenance_stats() const {
  std::lock_guard lk(job_mu_);
  MaintenanceStats s = maint_stats_;
  s.partitions_truncated = tree_->stats().partitions_truncated;
  return s;
}

MaintenanceJob* Engine::running_job() {
  std::lock_guard lk(job_mu_);
  return job_.get();
}

MaintenanceJob& Engine::start_job(JobKind kind,
                                  std::vector<PartitionPtr> sources) {
  std::lock_guard lk(job_mu_);
  if (job_ && job_->state() != JobState::Done) {
    throw StateError("a maintenance job is already running");
  }
  job_ = std::make_unique<MaintenanceJob>(*tree_, kind, std::move(sources),
                                          oldest_active_snapshot());
  return *job_;
}

Snapshot Engine::oldest_active_snapshot() const {
  std::lock_guard lk(txn_mu_);
  if (active_.empty()) return Snapshot{clock_, {}};
  return active_.begin()->second;
}

GlobalMeta Engine::global_meta() const {
  GlobalMeta g;
  g.cache_bytes = cfg_.cache_bytes;
  g.buffer_share_max = cfg_.buffer_share_max;
  std::uint64_t dirty =
      cfg_.mode == EngineMode::BtreeBaseline ? 0 : tree_->mutable_bytes();
  g.buffer_share = g.cache_bytes == 0
                       ? 0.0
                       : static_cast<double>(dirty) /
                             static_cast<double>(g.cache_bytes);
  g.require_switch = g.buffer_share > g.buffer_share_max;
  return g;
}

void Engine::background_loop() {
  while (!stop_.load(std::memory_order_acquire)) {
    bool worked = false;
    try {
      worked = maintenance_tick();
    } catch (const std::exception&) {
      worked = false;
    }
    if (!worked) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
}

std::map<std::string, std::uint64_t> Engine::stats() const {
  std::map<std::string, std::uint64_t> out;
  StoreReport rep = store_->report();
  out["bytes_written"] = rep.bytes_written;
  out["bytes_read"] = rep.bytes_read;
  out["writes"] = rep.writes;
  out["reads"] = rep.reads;
  out["live_bytes"] = rep.live_bytes;
  out["reclaimed_bytes"] = rep.reclaimed_bytes;
  out["superblock_writes"] = rep.superblock_writes;
  out["cache_hits"] = cache_->hits();
  out["cache_misses"] = cache_->misses();
  out["cache_evictions"] = cache_->evictions();
  out["cache_resident"] = cache_->resident_bytes();
  out["cache_external"] = cache_->external_bytes();
  out["begins"] = begins_.load();
  out["commits"] = commits_.load();
  out["gets"] = gets_.load();
  out["scans"] = scans_.load();
  out["filter_probes"] = filter_probes_.load();
  out["filter_positives"] = filter_positives_.load();
  if (cfg_.mode == EngineMode::BtreeBaseline) {
    out["partitions"] = 1;
    out["cached_partitions"] = 0;
    out["max_pnr"] = 0;
    out["baseline_checkpoints"] = baseline_->checkpoints();
    out["baseline_nodes"] = baseline_->node_count();
    return out;
  }
  TreeStatsSnapshot ts = tree_->stats();
  out["switches"] = ts.switches;
  out["flushes"] = ts.flushes;
  out["stale_pnr_retries"] = ts.stale_pnr_retries;
  out["partitions_truncated"] = ts.partitions_truncated;
  out["records_truncated"] = ts.records_truncated;
  std::uint64_t parts = 0, cached = 0;
  for (const auto& p : tree_->all_partitions()) {
    if (!p->visible) continue;
    if (p->type == 'C') {
      ++cached;
    } else {
      ++parts;
    }
  }
  out["partitions"] = parts;
  out["cached_partitions"] = cached;
  out["max_pnr"] = tree_->max_pnr();
  out["mutable_pnr"] = tree_->mutable_pnr();
  out["mutable_bytes"] = tree_->mutable_bytes();
  {
    std::lock_guard lk(job_mu_);
    out["jobs_run"] = maint_stats_.jobs_run;
    out["gc_jobs"] = maint_stats_.gc_jobs;
    out["cached_jobs"] = maint_stats_.cached_jobs;
    out["records_merged"] = maint_stats_.records_merged;
    out["records_dropped"] = maint_stats_.records_dropped;
  }
  return out;
}

}  // namespace mvpbt
