#include "mvpbt/tree.hpp"

#include <algorithm>
#include <cassert>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mvpbt/errors.hpp"
#include "mvpbt/varint.hpp"

namespace mvpbt {

namespace {

// Separator s with prev_last < s <= every key of the right sibling. When a
// version run of one key spans the boundary the successor byte string keeps
// the whole run reachable from the left leaf.
std::string make_separator(const std::string& prev_last,
                           const std::string& next_first) {
  if (prev_last < next_first) return shortest_separator(prev_last, next_first);
  if (prev_last == next_first) return prev_last + '\0';
  throw StateError("leaf boundaries out of order");
}

std::size_t group_bytes(const std::vector<VersionRecord>& g) {
  std::size_t n = 0;
  for (const auto& r : g) n += record_wire_size(r) + 2;  // incl. slot
  return n;
}

// Evens out the final two page groups so that no page of a flushed run falls
// below the fill target except a sole survivor.
void rebalance_tail_groups(std::vector<std::vector<VersionRecord>>& groups,
                           std::size_t capacity, double fill_target) {
  if (groups.size() < 2) return;
  auto& last = groups.back();
  std::size_t last_bytes = group_bytes(last);
  if (static_cast<double>(last_bytes) >=
      fill_target * static_cast<double>(capacity)) {
    return;
  }
  auto& prev = groups[groups.size() - 2];
  std::vector<VersionRecord> merged;
  merged.reserve(prev.size() + last.size());
  std::move(prev.begin(), prev.end(), std::back_inserter(merged));
  std::move(last.begin(), last.end(), std::back_inserter(merged));
  std::size_t total = group_bytes(merged);
  if (total <= capacity) {
    prev = std::move(merged);
    groups.pop_back();
    return;
  }
  std::size_t cut = 0, acc = 0;
  while (cut < merged.size() && acc < total / 2) {
    acc += record_wire_size(merged[cut]) + 2;
    ++cut;
  }
  if (cut == 0) cut = 1;
  if (cut >= merged.size()) cut = merged.size() - 1;
  prev.assign(std::make_move_iterator(merged.begin()),
              std::make_move_iterator(merged.begin() + cut));
  last.assign(std::make_move_iterator(merged.begin() + cut),
              std::make_move_iterator(merged.end()));
}

struct BuiltLevels {
  std::vector<PageImage> images;  // level 1 ascending, then level 2, ...
  std::uint64_t root_page_id = 0;
  std::uint8_t height = 1;
  std::vector<std::uint64_t> inner_ids;
};

BuiltLevels build_inner_levels_from_metas(
    PageStore& store, const TreeConfig& cfg, char ptype, PartitionNumber pnr,
    PartitionNumber position, const std::vector<std::uint64_t>& leaf_ids,
    const std::vector<std::string>& leaf_firsts,
    const std::vector<std::string>& leaf_lasts) {
  BuiltLevels out;
  if (leaf_ids.empty()) throw StateError("cannot build levels over no leaves");
  if (leaf_ids.size() == 1) {
    out.root_page_id = leaf_ids[0];
    out.height = 1;
    return out;
  }
  std::vector<InnerEntry> entries(leaf_ids.size());
  for (std::size_t i = 0; i < leaf_ids.size(); ++i) {
    entries[i].child = leaf_ids[i];
    entries[i].separator =
        i == 0 ? std::string() : make_separator(leaf_lasts[i - 1], leaf_firsts[i]);
  }
  std::size_t budget = static_cast<std::size_t>(
      static_cast<double>(cfg.page_size - kPageHeaderSize) *
      cfg.dense_fill_target);
  std::uint8_t level = 1;
  while (true) {
    std::vector<std::vector<InnerEntry>> pages;
    std::vector<InnerEntry> cur;
    std::size_t cur_bytes = 0;
    for (auto& e : entries) {
      std::size_t sz = inner_entry_wire_size(e);
      if (cur.size() >= 2 && cur_bytes + sz > budget) {
        pages.push_back(std::move(cur));
        cur.clear();
        cur_bytes = 0;
      }
      cur_bytes += sz;
      cur.push_back(std::move(e));
    }
    if (!cur.empty()) pages.push_back(std::move(cur));

    std::vector<InnerEntry> next_entries;
    next_entries.reserve(pages.size());
    for (auto& page_entries : pages) {
      std::uint64_t pid = store.allocate_page_id();
      PageImage img;
      img.page_id = pid;
      img.level = level;
      img.pnr = pnr;
      img.bytes = encode_inner_page(pid, level, ptype, pnr, position,
                                    page_entries);
      pad_page(img.bytes, cfg.page_size);
      out.images.push_back(std::move(img));
      out.inner_ids.push_back(pid);
      next_entries.push_back(InnerEntry{page_entries.front().separator, pid});
    }
    if (pages.size() == 1) {
      out.root_page_id = out.inner_ids.back();
      out.height = static_cast<std::uint8_t>(level + 1);
      return out;
    }
    entries = std::move(next_entries);
    ++level;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// LeafPacker

LeafPacker::LeafPacker(std::size_t page_size, double fill_target)
    : capacity_(leaf_capacity(page_size)), fill_target_(fill_target) {}

std::size_t LeafPacker::leaf_capacity(std::size_t page_size) {
  return page_size - kPageHeaderSize - 8;  // 8: sibling pointer
}

void LeafPacker::add(VersionRecord rec) {
  std::size_t sz = record_wire_size(rec) + 2;  // record plus its slot
  if (!current_.empty() && current_bytes_ + sz > capacity_) {
    groups_.push_back(std::move(current_));
    current_.clear();
    current_bytes_ = 0;
  }
  current_bytes_ += sz;
  current_.push_back(std::move(rec));
}

std::vector<std::vector<VersionRecord>> LeafPacker::finish() {
  if (!current_.empty()) {
    groups_.push_back(std::move(current_));
    current_.clear();
    current_bytes_ = 0;
  }
  rebalance_tail_groups(groups_, capacity_, fill_target_);
  return std::move(groups_);
}

std::shared_ptr<PartitionFilter> build_filter(
    std::span<const VersionRecord> records, int bits_per_key, int hashes) {
  auto f = std::make_shared<PartitionFilter>();
  f->bloom = BloomFilter(std::max<std::size_t>(records.size(), 1),
                         bits_per_key, hashes);
  const std::string* prev = nullptr;
  bool first = true;
  for (const auto& r : records) {
    if (!prev || *prev != r.key.user_key) f->bloom.add(r.key.user_key);
    prev = &r.key.user_key;
    if (first) {
      f->fence_low = r.key.user_key;
      first = false;
    }
    f->fence_high = r.key.user_key;
  }
  f->built = true;
  return f;
}

// ---------------------------------------------------------------------------
// Tree

Tree::Tree(PageStore& store, PageCache& cache, TreeConfig cfg)
    : store_(store), cache_(cache), cfg_(std::move(cfg)) {
  auto p = std::make_shared<Partition>();
  p->pnr = 0;
  p->position = 0;
  p->type = 'R';
  p->state = PartitionState::Mutable;
  p->mem = std::make_unique<MemSubtree>();
  partitions_[0] = p;
  refresh_successions_locked();
}

// Rebuilds the shared equality-search snapshot. Called under the exclusive
// table lock after any structural change.
void Tree::refresh_successions_locked() {
  auto fresh = std::make_shared<std::vector<PartitionPtr>>();
  fresh->reserve(partitions_.size());
  for (const auto& [pnr, p] : partitions_) {
    if (!p->visible) continue;
    if (!p->is_mem() && p->type != 'C' && p->covered) continue;
    fresh->push_back(p);
  }
  std::sort(fresh->begin(), fresh->end(),
            [](const PartitionPtr& a, const PartitionPtr& b) {
              if (a->position != b->position) return a->position > b->position;
              return a->pnr > b->pnr;
            });
  equality_cache_ = std::move(fresh);
}

std::shared_ptr<const std::vector<PartitionPtr>> Tree::equality_snapshot()
    const {
  std::shared_lock lk(table_mu_);
  return equality_cache_;
}

PartitionNumber Tree::mutable_pnr() const {
  std::shared_lock lk(table_mu_);
  return mutable_pnr_;
}

PartitionNumber Tree::max_pnr() const {
  std::shared_lock lk(table_mu_);
  return max_pnr_;
}

std::size_t Tree::mutable_bytes() const {
  std::shared_lock lk(table_mu_);
  std::size_t n = 0;
  for (const auto& [pnr, p] : partitions_) {
    if (p->is_mem() && p->mem) n += p->mem->total_bytes();
  }
  return n;
}

std::uint64_t Tree::mutable_records() const {
  std::shared_lock lk(table_mu_);
  auto it = partitions_.find(mutable_pnr_);
  if (it == partitions_.end() || !it->second->mem) return 0;
  return it->second->mem->total_records();
}

void Tree::charge_mem_delta(std::int64_t delta) {
  cache_.reserve_external(delta);
}

PartitionNumber Tree::insert_record(VersionRecord rec) {
  while (true) {
    PartitionNumber target = mutable_pnr();
    if (insert_pause_hook) insert_pause_hook(target);
    std::shared_lock lk(table_mu_);
    auto it = partitions_.find(target);
    if (it == partitions_.end() ||
        it->second->state != PartitionState::Mutable) {
      // A concurrent switch retired the hinted partition number: rewrite it
      // and re-traverse from the root.
      stale_retries_.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    Partition& p = *it->second;
    rec.key.pnr = target;
    std::int64_t delta = 0;
    {
      std::lock_guard mlk(p.mem_mu);
      std::size_t before = p.mem->total_bytes();
      if (!p.mem->insert(std::move(rec), cfg_.mem_node_limit)) {
        throw StateError("duplicate (key, timestamp) insert");
      }
      p.n_records = p.mem->total_records();
      delta = static_cast<std::int64_t>(p.mem->total_bytes() - before);
    }
    lk.unlock();
    charge_mem_delta(delta);
    return target;
  }
}

PartitionNumber Tree::switch_partition() {
  bool expected = false;
  if (!is_switching_.compare_exchange_strong(expected, true)) {
    throw StateError("partition switch already in progress");
  }
  std::unique_lock lk(table_mu_);
  if (max_pnr_ == kMaxPartitionNumber) {
    is_switching_.store(false);
    throw StateError("partition number space exhausted");
  }
  PartitionPtr victim = partitions_.at(mutable_pnr_);
  victim->state = PartitionState::Victim;
  victim_pnr_ = victim->pnr;
  ++max_pnr_;
  mutable_pnr_ = max_pnr_;
  auto fresh = std::make_shared<Partition>();
  fresh->pnr = mutable_pnr_;
  fresh->position = mutable_pnr_;
  fresh->type = 'R';
  fresh->state = PartitionState::Mutable;
  fresh->mem = std::make_unique<MemSubtree>();
  partitions_[fresh->pnr] = fresh;
  refresh_successions_locked();
  switches_.fetch_add(1, std::memory_order_relaxed);
  return victim->pnr;
}

bool Tree::has_victim() const {
  std::shared_lock lk(table_mu_);
  return victim_pnr_.has_value();
}

ReconcileResult Tree::reconcile(Partition& victim) {
  ReconcileResult res;
  if (!victim.mem || victim.mem->total_records() == 0) return res;
  LeafPacker packer(cfg_.page_size, cfg_.dense_fill_target);
  auto filter = std::make_shared<PartitionFilter>();
  filter->bloom = BloomFilter(victim.mem->total_records(),
                              cfg_.bloom_bits_per_key, cfg_.bloom_hashes);
  std::uint64_t n = 0;
  const std::string* prev_key = nullptr;
  for (std::size_t i = 0; i < victim.mem->node_count(); ++i) {
    const MemNode& node = victim.mem->node(i);
    if (!node.dirty) continue;  // clean base image already persisted
    for (const auto& rec : node.entries) {
      if (!prev_key || *prev_key != rec.key.user_key) {
        filter->bloom.add(rec.key.user_key);
      }
      prev_key = &rec.key.user_key;
      packer.add(rec);
      ++n;
    }
  }
  if (n == 0) return res;
  auto groups = packer.finish();

  std::vector<std::uint64_t> leaf_ids(groups.size());
  for (auto& id : leaf_ids) id = store_.allocate_page_id();
  std::vector<std::string> firsts(groups.size()), lasts(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    firsts[i] = groups[i].front().key.user_key;
    lasts[i] = groups[i].back().key.user_key;
    PageImage img;
    img.page_id = leaf_ids[i];
    img.level = 0;
    img.pnr = victim.pnr;
    std::uint64_t next = i + 1 < groups.size() ? leaf_ids[i + 1] : 0;
    img.bytes = encode_leaf_page(leaf_ids[i], victim.type, victim.pnr,
                                 victim.position, next, groups[i]);
    pad_page(img.bytes, cfg_.page_size);
    res.pages.push_back(std::move(img));
  }
  BuiltLevels levels =
      build_inner_levels_from_metas(store_, cfg_, victim.type, victim.pnr,
                                    victim.position, leaf_ids, firsts, lasts);
  for (auto& img : levels.images) res.pages.push_back(std::move(img));

  res.view.root_page_id = levels.root_page_id;
  res.view.height = levels.height;
  res.view.leaf_page_ids = leaf_ids;
  res.view.leaf_first_keys = std::move(firsts);
  res.view.all_page_ids = leaf_ids;
  res.view.all_page_ids.insert(res.view.all_page_ids.end(),
                               levels.inner_ids.begin(),
                               levels.inner_ids.end());
  res.fence_low = res.view.leaf_first_keys.front();
  res.fence_high = lasts.back();
  res.n_records = n;
  filter->fence_low = res.fence_low;
  filter->fence_high = res.fence_high;
  filter->built = true;
  res.filter = std::move(filter);
  return res;
}

FlushReport Tree::flush_sequential(std::vector<PageImage>& pages) {
  FlushReport rep;
  if (pages.empty()) return rep;
  auto extents = store_.allocate_and_write(pages);
  rep.pages_written = extents.size();
  for (const auto& e : extents) rep.bytes_written += e.length;
  rep.extents = std::move(extents);
  return rep;
}

FlushReport Tree::sync_victim() {
  PartitionPtr victim;
  {
    std::shared_lock lk(table_mu_);
    if (!victim_pnr_) throw StateError("no victim partition to sync");
    victim = partitions_.at(*victim_pnr_);
  }
  ReconcileResult rec = reconcile(*victim);
  FlushReport rep;
  rep.pnr = victim->pnr;
  if (rec.pages.empty()) {
    // Empty victim: the partition vanishes; flushing is a no-op.
    std::size_t bytes = 0;
    {
      std::unique_lock lk(table_mu_);
      bytes = victim->mem ? victim->mem->total_bytes() : 0;
      partitions_.erase(victim->pnr);
      victim_pnr_.reset();
      refresh_successions_locked();
    }
    charge_mem_delta(-static_cast<std::int64_t>(bytes));
    is_switching_.store(false);
    return rep;
  }
  // May throw StorageFullError; the partition then remains in victim state
  // and the whole flush is retryable.
  rep = flush_sequential(rec.pages);
  rep.pnr = victim->pnr;

  std::vector<PageViewPtr> decoded;
  decoded.reserve(rec.pages.size());
  for (auto& img : rec.pages) {
    decoded.push_back(std::make_shared<PageView>(std::move(img.bytes)));
  }

  std::size_t mem_bytes = 0;
  {
    std::unique_lock lk(table_mu_);
    mem_bytes = victim->mem->total_bytes();
    victim->state = PartitionState::Persisted;
    victim->synced = true;
    victim->disk = std::move(rec.view);
    victim->fence_low = std::move(rec.fence_low);
    victim->fence_high = std::move(rec.fence_high);
    victim->n_records = rec.n_records;
    victim->mem.reset();
    publish_filter(*victim, std::move(rec.filter));
    victim_pnr_.reset();
    refresh_successions_locked();
  }
  // Cache-preserving handover: the just-written pages enter the regular
  // replacement policy as clean residents while the write buffer shrinks.
  for (auto& d : decoded) cache_.insert(d->header().page_id, d);
  charge_mem_delta(-static_cast<std::int64_t>(mem_bytes));
  commit_directory();
  write_sidecar();
  is_switching_.store(false);
  flushes_.fetch_add(1, std::memory_order_relaxed);
  {
    std::lock_guard lk(flush_history_mu_);
    flush_history_.push_back(rep);
  }
  return rep;
}

// Loads every page of a partition into a pinned resident map (cached
// partitions serve lookups at memory speed, like the filters they replace).
void Tree::make_resident(Partition& p) {
  auto resident =
      std::make_shared<std::unordered_map<std::uint64_t, PageViewPtr>>();
  std::size_t bytes = 0;
  for (std::uint64_t pid : p.disk.all_page_ids) {
    auto view = std::make_shared<const PageView>(store_.read_page(pid));
    bytes += view->charge();
    (*resident)[pid] = std::move(view);
  }
  p.resident = std::move(resident);
  cache_.reserve_external(static_cast<std::int64_t>(bytes));
}

void Tree::release_resident(Partition& p) {
  if (!p.resident) return;
  std::size_t bytes = 0;
  for (const auto& [pid, view] : *p.resident) bytes += view->charge();
  p.resident.reset();
  cache_.reserve_external(-static_cast<std::int64_t>(bytes));
}

void Tree::publish_filter(Partition& p, std::shared_ptr<PartitionFilter> f) {
  std::size_t bytes = f ? f->byte_size() : 0;
  p.filter = std::move(f);
  if (bytes) cache_.reserve_external(static_cast<std::int64_t>(bytes));
}

void Tree::retire_bloom(Partition& p) {
  if (!p.filter || p.filter->bloom_retired) return;
  auto slim = std::make_shared<PartitionFilter>();
  slim->fence_low = p.filter->fence_low;
  slim->fence_high = p.filter->fence_high;
  slim->built = true;
  slim->bloom_retired = true;
  cache_.reserve_external(-static_cast<std::int64_t>(p.filter->byte_size()));
  p.filter = std::move(slim);
}

std::vector<PartitionPtr> Tree::equality_succession() const {
  std::vector<PartitionPtr> out;
  {
    std::shared_lock lk(table_mu_);
    out.reserve(partitions_.size());
    for (const auto& [pnr, p] : partitions_) {
      if (!p->visible) continue;
      if (!p->is_mem() && p->type != 'C' && p->covered) continue;
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end(), [](const PartitionPtr& a, const PartitionPtr& b) {
    if (a->position != b->position) return a->position > b->position;
    return a->pnr > b->pnr;
  });
  return out;
}

std::vector<PartitionPtr> Tree::scan_succession() const {
  std::vector<PartitionPtr> out;
  {
    std::shared_lock lk(table_mu_);
    out.reserve(partitions_.size());
    for (const auto& [pnr, p] : partitions_) {
      if (!p->visible || p->type == 'C') continue;
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end(), [](const PartitionPtr& a, const PartitionPtr& b) {
    if (a->position != b->position) return a->position > b->position;
    return a->pnr > b->pnr;
  });
  return out;
}

PartitionPtr Tree::partition(PartitionNumber pnr) const {
  std::shared_lock lk(table_mu_);
  auto it = partitions_.find(pnr);
  return it == partitions_.end() ? nullptr : it->second;
}

std::vector<PartitionPtr> Tree::all_partitions() const {
  std::shared_lock lk(table_mu_);
  std::vector<PartitionPtr> out;
  out.reserve(partitions_.size());
  for (const auto& [pnr, p] : partitions_) out.push_back(p);
  return out;
}

PageViewPtr Tree::load_page(std::uint64_t page_id, std::uint64_t* reads) {
  if (auto hit = cache_.get(page_id)) return hit;
  auto page = std::make_shared<PageView>(store_.read_page(page_id));
  cache_.insert(page_id, page);
  if (reads) ++*reads;
  return page;
}

PageViewPtr Tree::load_page_of(const Partition& p, std::uint64_t page_id,
                               std::uint64_t* reads) {
  if (p.resident) {
    auto it = p.resident->find(page_id);
    if (it != p.resident->end()) return it->second;
  }
  return load_page(page_id, reads);
}

std::vector<VersionRecord> Tree::point_versions(const Partition& p,
                                                std::string_view user_key,
                                                std::uint64_t* page_reads) {
  {
    std::shared_lock lk(table_mu_);
    if (p.is_mem()) {
      std::lock_guard mlk(p.mem_mu);
      if (p.mem) return p.mem->collect_versions(user_key);
      return {};
    }
  }
  // Persisted path: descend from the root through the cache.
  const PersistedView& view = p.disk;
  if (view.leaf_page_ids.empty()) return {};
  std::uint64_t pid = view.root_page_id;
  while (true) {
    auto page = load_page_of(p, pid, page_reads);
    if (page->is_leaf()) break;
    pid = page->child(page->route(user_key));
  }
  // A version run may span leaf boundaries, in which case the successor
  // leaves start with the same user key. Begin at the last leaf whose first
  // key is strictly below the target and walk forward while the run
  // continues.
  auto it = std::lower_bound(view.leaf_first_keys.begin(),
                             view.leaf_first_keys.end(), user_key,
                             [](const std::string& f, std::string_view k) {
                               return f < k;
                             });
  std::size_t leaf_idx =
      it == view.leaf_first_keys.begin()
          ? 0
          : static_cast<std::size_t>(it - view.leaf_first_keys.begin()) - 1;
  std::vector<VersionRecord> out;
  for (std::size_t i = leaf_idx; i < view.leaf_page_ids.size(); ++i) {
    if (i > leaf_idx && view.leaf_first_keys[i] > user_key) break;
    auto leaf = load_page_of(p, view.leaf_page_ids[i], page_reads);
    std::size_t first = leaf->lower_bound(user_key);
    std::size_t n = leaf->size();
    bool any = false;
    for (std::size_t r = first; r < n && leaf->record(r).user_key == user_key;
         ++r) {
      out.push_back(leaf->materialize(r));
      any = true;
    }
    if (any && first < n && n > 0 &&
        leaf->record(n - 1).user_key != user_key) {
      break;  // the run ended inside this leaf
    }
    if (!any && !out.empty()) break;
    if (!any && first < n) break;  // key would have sorted here
  }
  return out;
}

std::vector<VersionRecord> Tree::range_versions(const Partition& p,
                                                std::string_view low,
                                                std::string_view high,
                                                bool high_unbounded) {
  std::shared_lock lk(table_mu_);
  if (!p.is_mem() || !p.mem) return {};
  std::lock_guard mlk(p.mem_mu);
  return p.mem->collect_range(low, high, high_unbounded);
}

std::optional<VersionRecord> Tree::visible_version(const Partition& p,
                                                   std::string_view user_key,
                                                   const Snapshot& snap,
                                                   bool& decided,
                                                   std::uint64_t* page_reads) {
  decided = false;
  {
    std::shared_lock lk(table_mu_);
    if (p.is_mem()) {
      if (!p.mem) return std::nullopt;
      std::lock_guard mlk(p.mem_mu);
      const MemNode& node = p.mem->node(p.mem->locate(user_key));
      auto first = std::lower_bound(
          node.entries.begin(), node.entries.end(), user_key,
          [](const VersionRecord& r, std::string_view k) {
            return r.key.user_key < k;
          });
      for (auto it = first;
           it != node.entries.end() && it->key.user_key == user_key; ++it) {
        if (!is_visible(*it, snap)) continue;
        decided = true;
        return *it;
      }
      return std::nullopt;
    }
  }
  const PersistedView& view = p.disk;
  if (view.leaf_page_ids.empty()) return std::nullopt;
  auto it = std::lower_bound(view.leaf_first_keys.begin(),
                             view.leaf_first_keys.end(), user_key,
                             [](const std::string& f, std::string_view k) {
                               return f < k;
                             });
  std::size_t leaf_idx =
      it == view.leaf_first_keys.begin()
          ? 0
          : static_cast<std::size_t>(it - view.leaf_first_keys.begin()) - 1;
  bool in_run = false;
  for (std::size_t i = leaf_idx; i < view.leaf_page_ids.size(); ++i) {
    if (i > leaf_idx && view.leaf_first_keys[i] > user_key) break;
    auto leaf = load_page_of(p, view.leaf_page_ids[i], page_reads);
    std::size_t first = leaf->lower_bound(user_key);
    std::size_t n = leaf->size();
    bool any = false;
    for (std::size_t r = first; r < n; ++r) {
      RecordRef ref = leaf->record(r);
      if (ref.user_key != user_key) break;
      any = true;
      if (ref.ts > snap.read_ts || snap.is_active(ref.ts)) continue;
      decided = true;
      return leaf->materialize(r);
    }
    if (any) {
      in_run = true;
      if (first < n && n > 0 && leaf->record(n - 1).user_key != user_key) {
        break;
      }
    } else {
      if (in_run) break;
      if (first < n) break;  // the key would have sorted here
    }
  }
  return std::nullopt;
}

Tree::LeafRef Tree::traverse(const PartitionedKey& key) {
  LeafRef ref;
  {
    std::shared_lock lk(table_mu_);
    auto it = partitions_.lower_bound(key.pnr);
    if (it == partitions_.end()) {
      if (partitions_.empty()) throw StateError("traverse of empty tree");
      it = std::prev(partitions_.end());
    }
    ref.part = it->second;
    if (ref.part->is_mem()) {
      std::lock_guard mlk(ref.part->mem_mu);
      ref.mem_index = ref.part->mem ? ref.part->mem->locate(key.user_key) : 0;
      return ref;
    }
  }
  const PersistedView& view = ref.part->disk;
  std::uint64_t pid = view.root_page_id;
  while (true) {
    auto page = load_page(pid);
    if (page->is_leaf()) break;
    pid = page->child(page->route(key.user_key));
  }
  ref.page_id = pid;
  return ref;
}

PartitionNumber Tree::allocate_output_pnr() {
  std::unique_lock lk(table_mu_);
  if (max_pnr_ == kMaxPartitionNumber) {
    throw StateError("partition number space exhausted");
  }
  return ++max_pnr_;
}

void Tree::adopt_bulk_partition(PartitionPtr p) {
  std::size_t filter_bytes = p->filter ? p->filter->byte_size() : 0;
  {
    std::unique_lock lk(table_mu_);
    partitions_[p->pnr] = p;
    refresh_successions_locked();
  }
  if (filter_bytes) cache_.reserve_external(static_cast<std::int64_t>(filter_bytes));
}

void Tree::publish_cached(PartitionNumber output,
                          const std::vector<PartitionNumber>& sources) {
  {
    PartitionPtr out_part;
    {
      std::shared_lock lk(table_mu_);
      out_part = partitions_.at(output);
    }
    make_resident(*out_part);
    std::unique_lock lk(table_mu_);
    auto out = partitions_.at(output);
    out->visible = true;
    for (PartitionNumber s : sources) {
      auto it = partitions_.find(s);
      if (it == partitions_.end()) continue;
      it->second->covered = true;
      retire_bloom(*it->second);
    }
    refresh_successions_locked();
  }
  commit_directory();
  write_sidecar();
}

void Tree::publish_gc(PartitionNumber output,
                      const std::vector<PartitionNumber>& sources,
                      std::vector<PartitionNumber>& invalidated_out) {
  {
    std::unique_lock lk(table_mu_);
    auto out = partitions_.at(output);
    out->visible = true;
    std::vector<PartitionNumber> dead = sources;
    // Cached partitions whose covered range now points at purified sources
    // die with them.
    for (const auto& [pnr, p] : partitions_) {
      if (p->type != 'C' || !p->visible) continue;
      for (PartitionNumber s : sources) {
        auto sp = partitions_.find(s);
        if (sp == partitions_.end()) continue;
        if (sp->second->position >= p->cover_lo &&
            sp->second->position <= p->cover_hi) {
          dead.push_back(pnr);
          break;
        }
      }
    }
    std::sort(dead.begin(), dead.end());
    dead.erase(std::unique(dead.begin(), dead.end()), dead.end());
    for (PartitionNumber d : dead) {
      auto it = partitions_.find(d);
      if (it == partitions_.end()) continue;
      it->second->visible = false;
    }
    invalidated_out = std::move(dead);
    refresh_successions_locked();
  }
  commit_directory();
  write_sidecar();
}

void Tree::publish_gc_empty(const std::vector<PartitionNumber>& sources,
                            std::vector<PartitionNumber>& invalidated_out) {
  {
    std::unique_lock lk(table_mu_);
    std::vector<PartitionNumber> dead = sources;
    for (const auto& [pnr, p] : partitions_) {
      if (p->type != 'C' || !p->visible) continue;
      for (PartitionNumber s : sources) {
        auto sp = partitions_.find(s);
        if (sp == partitions_.end()) continue;
        if (sp->second->position >= p->cover_lo &&
            sp->second->position <= p->cover_hi) {
          dead.push_back(pnr);
          break;
        }
      }
    }
    std::sort(dead.begin(), dead.end());
    dead.erase(std::unique(dead.begin(), dead.end()), dead.end());
    for (PartitionNumber d : dead) {
      auto it = partitions_.find(d);
      if (it != partitions_.end()) it->second->visible = false;
    }
    invalidated_out = std::move(dead);
    refresh_successions_locked();
  }
  commit_directory();
  write_sidecar();
}

bool Tree::truncate_partition(PartitionNumber pnr) {
  PartitionPtr p;
  {
    std::unique_lock lk(table_mu_);
    auto it = partitions_.find(pnr);
    if (it == partitions_.end()) return true;
    p = it->second;
    if (p->pins.load(std::memory_order_acquire) > 0) return false;
    std::uint64_t n = p->n_records;
    if (p->state == PartitionState::Mutable) {
      // The mutable partition never vanishes; it only empties.
      std::lock_guard mlk(p->mem_mu);
      std::size_t bytes = p->mem->total_bytes();
      p->mem = std::make_unique<MemSubtree>();
      p->n_records = 0;
      cache_.reserve_external(-static_cast<std::int64_t>(bytes));
      records_truncated_.fetch_add(n, std::memory_order_relaxed);
      refresh_successions_locked();
      return true;
    }
    if (p->is_mem()) {
      std::size_t bytes = p->mem ? p->mem->total_bytes() : 0;
      cache_.reserve_external(-static_cast<std::int64_t>(bytes));
      if (p->state == PartitionState::Victim) {
        victim_pnr_.reset();
        is_switching_.store(false);
      }
    } else {
      if (p->filter && !p->filter->bloom_retired) {
        cache_.reserve_external(
            -static_cast<std::int64_t>(p->filter->byte_size()));
      }
      release_resident(*p);
      store_.free_extents(p->disk.all_page_ids);
      for (auto id : p->disk.all_page_ids) cache_.erase(id);
    }
    partitions_.erase(it);
    partitions_truncated_.fetch_add(1, std::memory_order_relaxed);
    records_truncated_.fetch_add(n, std::memory_order_relaxed);
    refresh_successions_locked();
  }
  commit_directory();
  write_sidecar();
  return true;
}

std::optional<Tree::PinnedPartition> Tree::partition_pinned(
    PartitionNumber pnr) const {
  std::shared_lock lk(table_mu_);
  auto it = partitions_.find(pnr);
  if (it == partitions_.end()) return std::nullopt;
  PinnedPartition out;
  out.part = it->second;
  out.pin = PartitionPin(it->second);
  return out;
}

std::vector<Tree::PinnedPartition> Tree::scan_succession_pinned() const {
  std::vector<PinnedPartition> out;
  {
    std::shared_lock lk(table_mu_);
    for (const auto& [pnr, p] : partitions_) {
      if (!p->visible || p->type == 'C') continue;
      out.push_back(PinnedPartition{p, PartitionPin(p)});
    }
  }
  std::sort(out.begin(), out.end(),
            [](const PinnedPartition& a, const PinnedPartition& b) {
              if (a.part->position != b.part->position) {
                return a.part->position > b.part->position;
              }
              return a.part->pnr > b.part->pnr;
            });
  return out;
}

void Tree::drop_partition_object(PartitionNumber pnr) {
  PartitionPtr p;
  {
    std::unique_lock lk(table_mu_);
    auto it = partitions_.find(pnr);
    if (it == partitions_.end()) return;
    p = it->second;
    partitions_.erase(it);
    refresh_successions_locked();
  }
  if (p->filter && !p->filter->bloom_retired) {
    cache_.reserve_external(-static_cast<std::int64_t>(p->filter->byte_size()));
  }
  if (!p->disk.all_page_ids.empty()) {
    store_.free_extents(p->disk.all_page_ids);
    for (auto id : p->disk.all_page_ids) cache_.erase(id);
  }
}

std::optional<std::uint64_t> Tree::range_truncate(const PartitionedKey& low,
                                                  const PartitionedKey& high) {
  if (!(low < high)) return 0;
  std::unique_lock lk(table_mu_);
  struct Hit {
    PartitionPtr p;
    bool full;
  };
  std::vector<Hit> hits;
  for (const auto& [pnr, p] : partitions_) {
    if (pnr < low.pnr || pnr > high.pnr) continue;
    std::string lo_key, hi_key;
    bool empty = false;
    if (p->is_mem()) {
      std::lock_guard mlk(p->mem_mu);
      if (!p->mem || p->mem->total_records() == 0) {
        empty = true;
      } else {
        lo_key = p->mem->node(0).entries.empty()
                     ? std::string()
                     : p->mem->node(0).entries.front().key.user_key;
        const MemNode& lastn = p->mem->node(p->mem->node_count() - 1);
        hi_key = lastn.entries.empty() ? std::string()
                                       : lastn.entries.back().key.user_key;
      }
    } else {
      lo_key = p->fence_low;
      hi_key = p->fence_high;
      empty = p->n_records == 0;
    }
    PartitionedKey pk_lo{p->pnr, lo_key}, pk_hi{p->pnr, hi_key};
    if (!empty && (pk_hi < low || !(pk_lo < high))) continue;  // no overlap
    bool full = empty || (!(pk_lo < low) && pk_hi < high);
    hits.push_back(Hit{p, full});
  }
  for (const auto& h : hits) {
    if (h.p->pins.load(std::memory_order_acquire) > 0) {
      return std::nullopt;  // busy: an active cursor holds the range
    }
  }
  std::uint64_t removed = 0;
  bool persisted_change = false;
  for (auto& h : hits) {
    Partition& p = *h.p;
    bool is_mutable = p.state == PartitionState::Mutable;
    if (h.full && !is_mutable) {
      removed += p.n_records;
      if (p.is_mem()) {
        std::size_t bytes = p.mem ? p.mem->total_bytes() : 0;
        cache_.reserve_external(-static_cast<std::int64_t>(bytes));
        if (p.state == PartitionState::Victim) {
          victim_pnr_.reset();
          is_switching_.store(false);
        }
      } else {
        if (p.filter && !p.filter->bloom_retired) {
          cache_.reserve_external(
              -static_cast<std::int64_t>(p.filter->byte_size()));
        }
        store_.free_extents(p.disk.all_page_ids);
        for (auto id : p.disk.all_page_ids) cache_.erase(id);
        persisted_change = true;
      }
      partitions_.erase(p.pnr);
      partitions_truncated_.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    // Partial removal (or any removal from the mutable partition).
    std::string_view lo = p.pnr == low.pnr ? std::string_view(low.user_key)
                                           : std::string_view();
    bool hi_unbounded = p.pnr < high.pnr;
    std::string_view hi = hi_unbounded ? std::string_view()
                                       : std::string_view(high.user_key);
    if (p.is_mem()) {
      std::lock_guard mlk(p.mem_mu);
      std::size_t before = p.mem->total_bytes();
      std::uint64_t n = p.mem->erase_range(lo, hi, hi_unbounded);
      removed += n;
      p.n_records = p.mem->total_records();
      cache_.reserve_external(
          -static_cast<std::int64_t>(before - p.mem->total_bytes()));
    } else {
      removed += truncate_persisted_partial(p, lo, hi, hi_unbounded);
      persisted_change = true;
    }
  }
  records_truncated_.fetch_add(removed, std::memory_order_relaxed);
  refresh_successions_locked();
  lk.unlock();
  if (persisted_change) {
    commit_directory();
    write_sidecar();
  }
  return removed;
}

// Rewrites the boundary leaves of a persisted partition in place (same page
// ids, fresh extents), frees interior leaves wholesale, and rebuilds the
// inner levels. Called with table_mu_ held exclusively.
std::uint64_t Tree::truncate_persisted_partial(Partition& p,
                                               std::string_view lo,
                                               std::string_view hi,
                                               bool hi_unbounded) {
  PersistedView& view = p.disk;
  std::size_t n_leaves = view.leaf_page_ids.size();
  auto leaf_at = [&](std::size_t i) {
    return decode_page(store_.read_page(view.leaf_page_ids[i]));
  };

  std::vector<std::uint64_t> new_leaf_ids;
  std::vector<std::string> new_firsts, new_lasts;
  std::vector<PageImage> rewrites;
  std::vector<std::uint64_t> freed;
  std::uint64_t kept_records = 0;
  std::uint64_t old_records = p.n_records;

  struct KeptLeaf {
    std::uint64_t id;
    std::vector<VersionRecord> recs;  // only for rewritten leaves
    bool rewritten;
    std::string first, last;
  };
  std::vector<KeptLeaf> kept;
  for (std::size_t i = 0; i < n_leaves; ++i) {
    DecodedPage page = leaf_at(i);
    std::vector<VersionRecord> survivors;
    bool touched = false;
    for (auto& r : page.records) {
      bool in_range = r.key.user_key >= lo &&
                      (hi_unbounded || r.key.user_key < hi);
      if (in_range) {
        touched = true;
      } else {
        survivors.push_back(std::move(r));
      }
    }
    if (survivors.empty()) {
      freed.push_back(view.leaf_page_ids[i]);
      continue;
    }
    kept_records += survivors.size();
    KeptLeaf kl;
    kl.id = view.leaf_page_ids[i];
    kl.rewritten = touched;
    kl.first = survivors.front().key.user_key;
    kl.last = survivors.back().key.user_key;
    if (touched) kl.recs = std::move(survivors);
    kept.push_back(std::move(kl));
  }

  if (kept.empty()) {
    // Everything went: drop the partition wholesale after all.
    store_.free_extents(view.all_page_ids);
    for (auto id : view.all_page_ids) cache_.erase(id);
    if (p.filter && !p.filter->bloom_retired) {
      cache_.reserve_external(-static_cast<std::int64_t>(p.filter->byte_size()));
    }
    partitions_.erase(p.pnr);
    partitions_truncated_.fetch_add(1, std::memory_order_relaxed);
    return old_records;
  }

  // Sibling chain: a kept-but-unrewritten leaf whose successor changed must
  // be rewritten too (same id) to repair its next pointer.
  for (std::size_t i = 0; i < kept.size(); ++i) {
    std::uint64_t want_next = i + 1 < kept.size() ? kept[i + 1].id : 0;
    if (!kept[i].rewritten) {
      DecodedPage page = decode_page(store_.read_page(kept[i].id));
      if (page.next_leaf != want_next) {
        kept[i].rewritten = true;
        kept[i].recs = std::move(page.records);
      }
    }
  }

  // Free replaced and removed extents, then write replacements.
  std::vector<std::uint64_t> to_free = freed;
  for (const auto& kl : kept) {
    if (kl.rewritten) to_free.push_back(kl.id);
  }
  // Old inner pages always go: the leaf set changed.
  for (std::size_t i = view.leaf_page_ids.size(); i < view.all_page_ids.size();
       ++i) {
    to_free.push_back(view.all_page_ids[i]);
  }
  store_.free_extents(to_free);
  for (auto id : to_free) cache_.erase(id);

  for (std::size_t i = 0; i < kept.size(); ++i) {
    new_leaf_ids.push_back(kept[i].id);
    new_firsts.push_back(kept[i].first);
    new_lasts.push_back(kept[i].last);
    if (!kept[i].rewritten) continue;
    std::uint64_t next = i + 1 < kept.size() ? kept[i + 1].id : 0;
    PageImage img;
    img.page_id = kept[i].id;
    img.level = 0;
    img.pnr = p.pnr;
    img.bytes = encode_leaf_page(kept[i].id, p.type, p.pnr, p.position, next,
                                 kept[i].recs);
    pad_page(img.bytes, cfg_.page_size);
    rewrites.push_back(std::move(img));
  }
  BuiltLevels levels = build_inner_levels_from_metas(
      store_, cfg_, p.type, p.pnr, p.position, new_leaf_ids, new_firsts,
      new_lasts);
  for (auto& img : levels.images) rewrites.push_back(std::move(img));
  store_.allocate_and_write(rewrites);

  view.root_page_id = levels.root_page_id;
  view.height = levels.height;
  view.leaf_page_ids = new_leaf_ids;
  view.leaf_first_keys = new_firsts;
  view.all_page_ids = new_leaf_ids;
  view.all_page_ids.insert(view.all_page_ids.end(), levels.inner_ids.begin(),
                           levels.inner_ids.end());
  p.n_records = kept_records;
  p.fence_low = new_firsts.front();
  p.fence_high = new_lasts.back();
  return old_records - kept_records;
}

DirectorySnapshot Tree::build_directory_locked() const {
  DirectorySnapshot dir;
  dir.next_page_id = store_.peek_next_page_id();
  for (const auto& [pnr, p] : partitions_) {
    if (!p->synced || p->is_mem()) continue;
    DirectoryPartition dp;
    dp.pnr = p->pnr;
    dp.position = p->position;
    dp.type = p->type;
    dp.visible = p->visible;
    dp.root_page_id = p->disk.root_page_id;
    dp.first_leaf_page_id =
        p->disk.leaf_page_ids.empty() ? 0 : p->disk.leaf_page_ids.front();
    dp.height = p->disk.height;
    dp.cover_lo = p->cover_lo;
    dp.cover_hi = p->cover_hi;
    dir.partitions.push_back(dp);
  }
  return dir;
}

void Tree::commit_directory() {
  std::lock_guard commit_lk(dir_mu_);
  DirectorySnapshot dir;
  {
    std::shared_lock lk(table_mu_);
    dir = build_directory_locked();
  }
  store_.commit_directory(dir);
}

void Tree::write_sidecar() {
  if (cfg_.sidecar_path.empty()) return;
  std::ostringstream o;
  {
    std::shared_lock lk(table_mu_);
    for (const auto& [pnr, p] : partitions_) {
      o << p->pnr << ',' << p->type << ',' << (p->synced ? 1 : 0) << ','
        << p->n_records << '\n';
    }
  }
  std::ofstream f(cfg_.sidecar_path, std::ios::trunc);
  f << o.str();
}

void Tree::recover() {
  DirectorySnapshot dir = store_.read_directory();
  std::unique_lock lk(table_mu_);
  partitions_.clear();
  max_pnr_ = 0;
  for (const auto& dp : dir.partitions) max_pnr_ = std::max(max_pnr_, dp.pnr);

  std::unordered_map<PartitionNumber, std::vector<std::uint64_t>> by_pnr;
  for (const auto& e : dir.extents) by_pnr[e.pnr].push_back(e.page_id);

  std::unordered_set<std::uint64_t> referenced;
  for (const auto& dp : dir.partitions) {
    if (!dp.visible) continue;  // discarded: maintenance died mid-build
    auto p = std::make_shared<Partition>();
    p->pnr = dp.pnr;
    p->position = dp.position;
    p->type = dp.type;
    p->state = PartitionState::Persisted;
    p->visible = true;
    p->synced = true;
    p->cover_lo = dp.cover_lo;
    p->cover_hi = dp.cover_hi;
    p->disk.root_page_id = dp.root_page_id;
    p->disk.height = dp.height;

    // Authoritative rebuild: walk the leaf chain, counting records and
    // regenerating fences and the bloom filter.
    std::vector<std::string> distinct_keys;
    auto filter = std::make_shared<PartitionFilter>();
    std::uint64_t pid = dp.first_leaf_page_id;
    std::uint64_t n_records = 0;
    while (pid != 0) {
      DecodedPage page = decode_page(store_.read_page(pid));
      if (page.hdr.pnr != dp.pnr || !page.is_leaf()) {
        throw CorruptionError("leaf chain crossed partitions", pid);
      }
      p->disk.leaf_page_ids.push_back(pid);
      p->disk.leaf_first_keys.push_back(
          page.records.empty() ? std::string() : page.records.front().key.user_key);
      for (const auto& r : page.records) {
        if (distinct_keys.empty() || distinct_keys.back() != r.key.user_key) {
          distinct_keys.push_back(r.key.user_key);
        }
        if (filter->fence_low.empty() && n_records == 0) {
          filter->fence_low = r.key.user_key;
        }
        filter->fence_high = r.key.user_key;
        recovered_max_ts_ = std::max(recovered_max_ts_, r.ts);
        ++n_records;
      }
      referenced.insert(pid);
      pid = page.next_leaf;
    }
    filter->bloom = BloomFilter(std::max<std::size_t>(distinct_keys.size(), 1),
                                cfg_.bloom_bits_per_key, cfg_.bloom_hashes);
    for (const auto& k : distinct_keys) filter->bloom.add(k);
    p->n_records = n_records;
    p->fence_low = filter->fence_low;
    p->fence_high = filter->fence_high;
    filter->built = true;
    p->disk.all_page_ids = p->disk.leaf_page_ids;
    for (auto id : by_pnr[dp.pnr]) {
      if (!referenced.count(id)) {
        p->disk.all_page_ids.push_back(id);  // inner pages
        referenced.insert(id);
      }
    }
    publish_filter(*p, std::move(filter));
    partitions_[p->pnr] = p;
  }

  // Wire cached-partition coverage and retire substituted blooms.
  for (const auto& [pnr, p] : partitions_) {
    if (p->type != 'C' || !p->visible) continue;
    make_resident(*p);
    for (const auto& [pnr2, q] : partitions_) {
      if (q->type == 'C' || !q->synced) continue;
      if (q->position >= p->cover_lo && q->position <= p->cover_hi) {
        q->covered = true;
        retire_bloom(*q);
      }
    }
  }

  // Extents no partition references are leftovers of unfinished work.
  std::vector<std::uint64_t> orphans;
  for (const auto& e : dir.extents) {
    if (!referenced.count(e.page_id)) orphans.push_back(e.page_id);
  }
  if (!orphans.empty()) store_.free_extents(orphans);

  mutable_pnr_ = partitions_.empty() && max_pnr_ == 0
                     ? 0
                     : static_cast<PartitionNumber>(++max_pnr_);
  auto fresh = std::make_shared<Partition>();
  fresh->pnr = mutable_pnr_;
  fresh->position = mutable_pnr_;
  fresh->type = 'R';
  fresh->state = PartitionState::Mutable;
  fresh->mem = std::make_unique<MemSubtree>();
  partitions_[fresh->pnr] = fresh;
  refresh_successions_locked();
}

std::string Tree::metadata_dump(bool synced_only) const {
  std::ostringstream o;
  std::shared_lock lk(table_mu_);
  PartitionNumber mx = 0;
  for (const auto& [pnr, p] : partitions_) {
    if (p->synced && p->visible) mx = std::max(mx, p->pnr);
  }
  o << "max_synced_pnr=" << mx << '\n';
  for (const auto& [pnr, p] : partitions_) {
    if (synced_only && !(p->synced && p->visible)) continue;
    o << "pnr=" << p->pnr << " pos=" << p->position << " type=" << p->type
      << " synced=" << (p->synced ? 1 : 0) << " records=" << p->n_records
      << " low=" << p->fence_low << " high=" << p->fence_high << " cover="
      << p->cover_lo << '-' << p->cover_hi
      << " covered=" << (p->covered ? 1 : 0) << '\n';
  }
  return o.str();
}

TreeStatsSnapshot Tree::stats() const {
  TreeStatsSnapshot s;
  s.switches = switches_.load();
  s.stale_pnr_retries = stale_retries_.load();
  s.flushes = flushes_.load();
  s.partitions_truncated = partitions_truncated_.load();
  s.records_truncated = records_truncated_.load();
  return s;
}

// ---------------------------------------------------------------------------
// BulkPartitionBuilder

BulkPartitionBuilder::BulkPartitionBuilder(Tree& tree, PartitionNumber pnr,
                                           PartitionNumber position, char type,
                                           std::uint64_t expected_records)
    : tree_(tree), pnr_(pnr), position_(position), type_(type) {
  capacity_ = LeafPacker::leaf_capacity(tree_.config().page_size);
  filter_ = std::make_shared<PartitionFilter>();
  filter_->bloom = BloomFilter(std::max<std::uint64_t>(expected_records, 1),
                               tree_.config().bloom_bits_per_key,
                               tree_.config().bloom_hashes);
}

void BulkPartitionBuilder::add(const VersionRecord& rec) {
  scratch_.clear();
  encode_record(rec, scratch_);
  add_raw(rec.key.user_key, rec.ts, scratch_);
}

void BulkPartitionBuilder::add_raw(std::string_view user_key, Timestamp ts,
                                   std::string_view record_bytes) {
  if (finished_) throw StateError("builder already finished");
  if (n_records_ > 0) {
    int c = user_key.compare(last_key_seen_);
    if (c < 0 || (c == 0 && ts >= last_ts_seen_)) {
      throw StateError("bulk records out of order");
    }
  }
  if (n_records_ == 0 || user_key != last_key_seen_) {
    filter_->bloom.add(user_key);
  }
  last_key_seen_.assign(user_key);
  last_ts_seen_ = ts;
  if (n_records_ == 0) fence_low_.assign(user_key);
  fence_high_.assign(user_key);

  std::size_t sz = record_bytes.size() + 2;  // record plus its slot
  if (!current_.slots.empty() && current_.cost() + sz > capacity_) {
    close_current_page();
  }
  if (current_.slots.empty()) current_.first_key.assign(user_key);
  current_.slots.push_back(static_cast<std::uint32_t>(current_.buffer.size()));
  current_.buffer.append(record_bytes);
  current_.last_key.assign(user_key);
  ++n_records_;
}

void BulkPartitionBuilder::close_current_page() {
  current_.page_id = tree_.store().allocate_page_id();
  pending_.push_back(std::move(current_));
  current_ = Group{};
  flush_full_chunks(true);
}

void BulkPartitionBuilder::flush_full_chunks(bool keep_tail) {
  // The final two groups stay buffered until finish() so the tail can be
  // rebalanced; every group already owns its page id, so sibling pointers
  // can link forward across flush batches.
  std::size_t keep = keep_tail ? 2 : 0;
  std::size_t chunk = tree_.config().bulk_chunk_pages;
  while (pending_.size() > keep &&
         (!keep_tail || pending_.size() - keep >= chunk)) {
    std::size_t n = std::min(pending_.size() - keep, chunk);
    std::vector<PageImage> images;
    images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& g = pending_[i];
      std::uint64_t next = i + 1 < pending_.size() ? pending_[i + 1].page_id : 0;
      LeafMeta meta;
      meta.page_id = g.page_id;
      meta.first_key = g.first_key;
      meta.last_key = g.last_key;
      leaf_metas_.push_back(std::move(meta));
      PageImage img;
      img.page_id = g.page_id;
      img.level = 0;
      img.pnr = pnr_;
      img.bytes = encode_leaf_page_raw(g.page_id, type_, pnr_, position_, next,
                                       g.buffer, g.slots);
      pad_page(img.bytes, tree_.config().page_size);
      images.push_back(std::move(img));
    }
    auto extents = tree_.store().allocate_and_write(images);
    for (auto& e : extents) extents_.push_back(e);
    for (auto& img : images) flushed_ids_.push_back(img.page_id);
    pending_.erase(pending_.begin(),
                   pending_.begin() + static_cast<std::ptrdiff_t>(n));
  }
}

void BulkPartitionBuilder::rebalance_tail() {
  if (pending_.size() < 2) return;
  Group& prev = pending_[pending_.size() - 2];
  Group& last = pending_.back();
  double target = tree_.config().dense_fill_target;
  if (static_cast<double>(last.cost()) >=
      target * static_cast<double>(capacity_)) {
    return;
  }
  // Merge, then either keep one page or split evenly on a slot boundary.
  std::uint32_t shift = static_cast<std::uint32_t>(prev.buffer.size());
  prev.buffer.append(last.buffer);
  for (std::uint32_t s : last.slots) prev.slots.push_back(s + shift);
  prev.last_key = last.last_key;
  pending_.pop_back();
  if (prev.cost() <= capacity_) return;
  Group right;
  std::size_t half = prev.buffer.size() / 2;
  std::size_t cut = 0;
  while (cut < prev.slots.size() && prev.slots[cut] < half) ++cut;
  cut = std::clamp<std::size_t>(cut, 1, prev.slots.size() - 1);
  std::uint32_t split_off = prev.slots[cut];
  right.page_id = tree_.store().allocate_page_id();
  right.buffer = prev.buffer.substr(split_off);
  for (std::size_t i = cut; i < prev.slots.size(); ++i) {
    right.slots.push_back(prev.slots[i] - split_off);
  }
  right.last_key = prev.last_key;
  {
    // First key of the right half from its first record.
    std::string_view payload(right.buffer);
    std::size_t pos = 0;
    ++pos;  // rtype
    (void)get_varint(payload, pos);
    std::uint64_t klen = get_varint(payload, pos);
    right.first_key.assign(payload.substr(pos, klen));
  }
  prev.buffer.resize(split_off);
  prev.slots.resize(cut);
  {
    std::string_view payload(prev.buffer);
    std::size_t pos = prev.slots.back();
    ++pos;
    (void)get_varint(payload, pos);
    std::uint64_t klen = get_varint(payload, pos);
    prev.last_key.assign(payload.substr(pos, klen));
  }
  pending_.push_back(std::move(right));
}

PartitionPtr BulkPartitionBuilder::finish() {
  if (finished_) throw StateError("builder already finished");
  finished_ = true;
  if (!current_.slots.empty()) {
    current_.page_id = tree_.store().allocate_page_id();
    pending_.push_back(std::move(current_));
    current_ = Group{};
  }
  if (n_records_ == 0) {
    throw StateError("bulk partition with no records");
  }
  rebalance_tail();
  flush_full_chunks(false);

  std::vector<std::uint64_t> leaf_ids;
  std::vector<std::string> firsts, lasts;
  leaf_ids.reserve(leaf_metas_.size());
  for (const auto& m : leaf_metas_) {
    leaf_ids.push_back(m.page_id);
    firsts.push_back(m.first_key);
    lasts.push_back(m.last_key);
  }
  BuiltLevels levels = build_inner_levels_from_metas(
      tree_.store(), tree_.config(), type_, pnr_, position_, leaf_ids, firsts,
      lasts);
  if (!levels.images.empty()) {
    auto extents = tree_.store().allocate_and_write(levels.images);
    for (auto& e : extents) extents_.push_back(e);
  }

  auto p = std::make_shared<Partition>();
  p->pnr = pnr_;
  p->position = position_;
  p->type = type_;
  p->state = PartitionState::Persisted;
  p->visible = false;
  p->synced = true;
  p->n_records = n_records_;
  p->fence_low = fence_low_;
  p->fence_high = fence_high_;
  p->disk.root_page_id = levels.root_page_id;
  p->disk.height = levels.height;
  p->disk.leaf_page_ids = leaf_ids;
  p->disk.leaf_first_keys = std::move(firsts);
  p->disk.all_page_ids = leaf_ids;
  p->disk.all_page_ids.insert(p->disk.all_page_ids.end(),
                              levels.inner_ids.begin(), levels.inner_ids.end());
  filter_->fence_low = fence_low_;
  filter_->fence_high = fence_high_;
  filter_->built = true;
  p->filter = filter_;
  tree_.adopt_bulk_partition(p);
  return p;
}

void BulkPartitionBuilder::abandon() {
  finished_ = true;
  if (!flushed_ids_.empty()) tree_.store().free_extents(flushed_ids_);
  pending_.clear();
  current_ = Group{};
}

}  // namespace mvpbt
