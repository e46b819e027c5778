#include "mvpbt/paged_tree.hpp"

#include <algorithm>
#include <cassert>

#include "mvpbt/errors.hpp"
#include "mvpbt/varint.hpp"

namespace mvpbt {

namespace {

std::size_t leaf_cap(std::size_t page_size) {
  return page_size - kPageHeaderSize - 8;
}
std::size_t inner_cap(std::size_t page_size) {
  return page_size - kPageHeaderSize;
}

VersionRecord row_record(std::string_view key, std::string_view value,
                         Timestamp ts) {
  VersionRecord r;
  r.rtype = RecordType::Regular;
  r.ts = ts;
  r.key = PartitionedKey{0, std::string(key)};
  r.value = std::string(value);
  return r;
}

}  // namespace

PagedTree::PagedTree(PageStore& store, Config cfg)
    : store_(store), cfg_(cfg) {
  nodes_.reserve(1 << 14);
  Node root;
  root.id = store_.allocate_page_id();
  root.level = 0;
  root.dirty = true;
  root_ = root.id;
  resident_bytes_ += node_charge(root);
  nodes_.emplace(root.id, std::move(root));
}

std::size_t PagedTree::node_charge(const Node& n) const {
  return n.bytes + 256 + sizeof(Node);
}

std::string PagedTree::serialize(const Node& n) const {
  std::string bytes =
      n.level == 0 ? encode_leaf_page(n.id, 'R', 0, 0, 0, n.records)
                   : encode_inner_page(n.id, n.level, 'R', 0, 0, n.entries);
  pad_page(bytes, cfg_.page_size);
  return bytes;
}

PagedTree::Node& PagedTree::load(std::uint64_t id) {
  auto it = nodes_.find(id);
  if (it != nodes_.end()) {
    auto pos = lru_pos_.find(id);
    if (pos != lru_pos_.end()) {
      lru_.splice(lru_.end(), lru_, pos->second);
    }
    return it->second;
  }
  DecodedPage page = decode_page(store_.read_page(id));
  Node n;
  n.id = id;
  n.persisted_id = id;
  n.level = page.hdr.level;
  n.records = std::move(page.records);
  n.entries = std::move(page.entries);
  for (const auto& r : n.records) n.bytes += record_wire_size(r) + 2;
  for (const auto& e : n.entries) n.bytes += inner_entry_wire_size(e);
  resident_bytes_ += node_charge(n);
  auto [nit, ok] = nodes_.emplace(id, std::move(n));
  (void)ok;
  if (nit->second.level == 0) {
    lru_pos_[id] = lru_.insert(lru_.end(), id);
  }
  return nit->second;
}

PagedTree::Node& PagedTree::descend_to_leaf(
    std::string_view key, std::vector<std::uint64_t>* path,
    std::optional<std::string>* high_bound) {
  if (high_bound) high_bound->reset();
  std::uint64_t id = root_;
  while (true) {
    Node& n = load(id);
    if (path) path->push_back(id);
    if (n.level == 0) return nodes_.at(id);
    const auto& es = n.entries;
    std::size_t idx = 0;
    for (std::size_t i = es.size(); i-- > 0;) {
      if (es[i].separator <= key) {
        idx = i;
        break;
      }
    }
    if (high_bound && idx + 1 < es.size()) *high_bound = es[idx + 1].separator;
    id = es[idx].child;
  }
}

void PagedTree::mark_path_dirty(const std::vector<std::uint64_t>& path) {
  for (auto id : path) {
    Node& n = nodes_.at(id);
    if (!n.dirty) {
      n.dirty = true;
      auto pos = lru_pos_.find(id);
      if (pos != lru_pos_.end()) {
        lru_.erase(pos->second);
        lru_pos_.erase(pos);
      }
    }
  }
}

void PagedTree::upsert(std::string_view key, std::string_view value,
                       Timestamp ts) {
  std::vector<std::uint64_t> path;
  Node& leaf = descend_to_leaf(key, &path);
  auto it = std::lower_bound(
      leaf.records.begin(), leaf.records.end(), key,
      [](const VersionRecord& r, std::string_view k) { return r.key.user_key < k; });
  if (it != leaf.records.end() && it->key.user_key == key) {
    std::size_t old = record_wire_size(*it);
    it->value.assign(value);
    it->ts = ts;
    leaf.bytes += record_wire_size(*it) - old;
  } else {
    VersionRecord r = row_record(key, value, ts);
    leaf.bytes += record_wire_size(r) + 2;
    leaf.records.insert(it, std::move(r));
    ++record_count_;
  }
  mark_path_dirty(path);
  split_if_needed(path);
  evict_to_budget();
}

bool PagedTree::erase(std::string_view key) {
  std::vector<std::uint64_t> path;
  Node& leaf = descend_to_leaf(key, &path);
  auto it = std::lower_bound(
      leaf.records.begin(), leaf.records.end(), key,
      [](const VersionRecord& r, std::string_view k) { return r.key.user_key < k; });
  if (it == leaf.records.end() || it->key.user_key != key) return false;
  leaf.bytes -= record_wire_size(*it) + 2;
  leaf.records.erase(it);
  --record_count_;
  mark_path_dirty(path);
  return true;
}

std::optional<std::string> PagedTree::get(std::string_view key) {
  Node& leaf = descend_to_leaf(key, nullptr);
  auto it = std::lower_bound(
      leaf.records.begin(), leaf.records.end(), key,
      [](const VersionRecord& r, std::string_view k) { return r.key.user_key < k; });
  std::optional<std::string> out;
  if (it != leaf.records.end() && it->key.user_key == key) out = it->value;
  evict_to_budget();
  return out;
}

std::vector<std::pair<std::string, std::string>> PagedTree::scan(
    std::string_view low, std::string_view high, std::size_t limit) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string cursor(low);
  while (out.size() < limit && cursor < high) {
    std::optional<std::string> next_leaf_low;
    Node& leaf = descend_to_leaf(cursor, nullptr, &next_leaf_low);
    auto it = std::lower_bound(
        leaf.records.begin(), leaf.records.end(), cursor,
        [](const VersionRecord& r, std::string_view k) {
          return r.key.user_key < k;
        });
    for (; it != leaf.records.end() && out.size() < limit; ++it) {
      if (it->key.user_key >= high) {
        evict_to_budget();
        return out;
      }
      out.emplace_back(it->key.user_key, it->value);
    }
    if (out.size() >= limit) break;
    if (!next_leaf_low) break;  // right edge of the tree
    cursor = *next_leaf_low;
  }
  evict_to_budget();
  return out;
}

void PagedTree::split_if_needed(std::vector<std::uint64_t>& path) {
  for (std::size_t depth = path.size(); depth-- > 0;) {
    std::uint64_t id = path[depth];
    Node& n = nodes_.at(id);
    std::size_t cap =
        n.level == 0 ? leaf_cap(cfg_.page_size) : inner_cap(cfg_.page_size);
    if (n.bytes <= cap) continue;

    // 50/50 byte split.
    Node right;
    right.id = store_.allocate_page_id();
    right.level = n.level;
    right.dirty = true;
    std::string sep;
    if (n.level == 0) {
      std::size_t cut = 0, acc = 0;
      while (cut < n.records.size() && acc < n.bytes / 2) {
        acc += record_wire_size(n.records[cut]) + 2;
        ++cut;
      }
      cut = std::clamp<std::size_t>(cut, 1, n.records.size() - 1);
      right.records.assign(std::make_move_iterator(n.records.begin() + cut),
                           std::make_move_iterator(n.records.end()));
      n.records.resize(cut);
      for (const auto& r : right.records) right.bytes += record_wire_size(r) + 2;
      n.bytes -= right.bytes;
      sep = right.records.front().key.user_key;
    } else {
      std::size_t cut = 0, acc = 0;
      while (cut < n.entries.size() && acc < n.bytes / 2) {
        acc += inner_entry_wire_size(n.entries[cut]);
        ++cut;
      }
      cut = std::clamp<std::size_t>(cut, 1, n.entries.size() - 1);
      right.entries.assign(std::make_move_iterator(n.entries.begin() + cut),
                           std::make_move_iterator(n.entries.end()));
      n.entries.resize(cut);
      for (const auto& e : right.entries) right.bytes += inner_entry_wire_size(e);
      n.bytes -= right.bytes;
      sep = right.entries.front().separator;
    }
    std::uint64_t right_id = right.id;
    resident_bytes_ += node_charge(right);
    nodes_.emplace(right_id, std::move(right));

    if (depth == 0) {
      // Root split: a fresh root references both halves.
      Node new_root;
      new_root.id = store_.allocate_page_id();
      new_root.level = static_cast<std::uint8_t>(nodes_.at(id).level + 1);
      new_root.dirty = true;
      new_root.entries.push_back(InnerEntry{"", id});
      new_root.entries.push_back(InnerEntry{sep, right_id});
      for (const auto& e : new_root.entries) {
        new_root.bytes += inner_entry_wire_size(e);
      }
      root_ = new_root.id;
      resident_bytes_ += node_charge(new_root);
      nodes_.emplace(new_root.id, std::move(new_root));
      return;
    }
    Node& parent = nodes_.at(path[depth - 1]);
    auto pit = std::upper_bound(
        parent.entries.begin(), parent.entries.end(), sep,
        [](std::string_view k, const InnerEntry& e) { return k < e.separator; });
    InnerEntry e{sep, right_id};
    parent.bytes += inner_entry_wire_size(e);
    parent.entries.insert(pit, std::move(e));
    // Parent may now overflow; the loop continues upward.
  }
}

void PagedTree::checkpoint() {
  // Relocate dirty nodes bottom-up: children first so parents can reference
  // the fresh page ids, then free the superseded extents.
  std::vector<std::uint64_t> dirty;
  for (auto& [id, n] : nodes_) {
    if (n.dirty) dirty.push_back(id);
  }
  if (dirty.empty()) return;
  std::sort(dirty.begin(), dirty.end(), [&](std::uint64_t a, std::uint64_t b) {
    const Node& na = nodes_.at(a);
    const Node& nb = nodes_.at(b);
    if (na.level != nb.level) return na.level < nb.level;
    return a < b;
  });
  std::unordered_map<std::uint64_t, std::uint64_t> remap;
  std::vector<PageImage> images;
  std::vector<std::uint64_t> to_free;
  images.reserve(dirty.size());
  for (std::uint64_t id : dirty) {
    Node n = std::move(nodes_.at(id));
    nodes_.erase(id);
    resident_bytes_ -= node_charge(n);
    std::uint64_t fresh = store_.allocate_page_id();
    remap[id] = fresh;
    if (n.persisted_id != 0) to_free.push_back(n.persisted_id);
    n.id = fresh;
    n.persisted_id = fresh;
    n.dirty = false;
    for (auto& e : n.entries) {
      auto rit = remap.find(e.child);
      if (rit != remap.end()) e.child = rit->second;
    }
    PageImage img;
    img.page_id = fresh;
    img.level = n.level;
    img.pnr = 0;
    img.bytes = serialize(n);
    images.push_back(std::move(img));
    resident_bytes_ += node_charge(n);
    bool is_leaf = n.level == 0;
    nodes_.emplace(fresh, std::move(n));
    if (is_leaf) lru_pos_[fresh] = lru_.insert(lru_.end(), fresh);
  }
  auto rit = remap.find(root_);
  if (rit != remap.end()) root_ = rit->second;
  store_.allocate_and_write(images);
  if (!to_free.empty()) store_.free_extents(to_free);
  ++checkpoints_;
  if (checkpoints_ % cfg_.directory_every == 0) commit_directory();
  evict_to_budget();
}

void PagedTree::commit_directory() {
  DirectorySnapshot dir;
  dir.next_page_id = store_.peek_next_page_id();
  DirectoryPartition dp;
  dp.pnr = 0;
  dp.position = 0;
  dp.type = 'R';
  dp.visible = true;
  dp.root_page_id = root_;
  dp.first_leaf_page_id = 0;
  dp.height = height();
  dir.partitions.push_back(dp);
  store_.commit_directory(dir);
}

void PagedTree::recover() {
  DirectorySnapshot dir = store_.read_directory();
  if (dir.partitions.empty()) return;
  nodes_.clear();
  lru_.clear();
  lru_pos_.clear();
  resident_bytes_ = 0;
  root_ = dir.partitions[0].root_page_id;
  record_count_ = 0;  // recomputed lazily by full scans when needed
}

std::uint8_t PagedTree::height() const {
  auto it = nodes_.find(root_);
  if (it == nodes_.end()) return 1;
  return static_cast<std::uint8_t>(it->second.level + 1);
}

void PagedTree::evict_to_budget() {
  while (resident_bytes_ > cfg_.cache_bytes && !lru_.empty()) {
    std::uint64_t victim = lru_.front();
    lru_.pop_front();
    lru_pos_.erase(victim);
    auto it = nodes_.find(victim);
    if (it == nodes_.end()) continue;
    Node& n = it->second;
    if (n.dirty || n.persisted_id != n.id || victim == root_) continue;
    resident_bytes_ -= node_charge(n);
    nodes_.erase(it);
  }
}

void PagedTree::bulk_load(
    const std::vector<std::pair<std::string, std::string>>& rows,
    Timestamp ts) {
  if (rows.empty()) return;
  nodes_.clear();
  lru_.clear();
  lru_pos_.clear();
  resident_bytes_ = 0;
  record_count_ = 0;

  // Dense read-optimized layout: leaves packed to capacity.
  std::size_t cap = leaf_cap(cfg_.page_size);
  std::vector<std::uint64_t> level_ids;
  std::vector<std::string> level_firsts;
  std::vector<PageImage> images;
  Node leaf;
  leaf.id = store_.allocate_page_id();
  auto flush_leaf = [&]() {
    if (leaf.records.empty()) return;
    level_ids.push_back(leaf.id);
    level_firsts.push_back(leaf.records.front().key.user_key);
    PageImage img;
    img.page_id = leaf.id;
    img.level = 0;
    img.bytes = serialize(leaf);
    images.push_back(std::move(img));
    Node fresh;
    fresh.id = store_.allocate_page_id();
    leaf = std::move(fresh);
  };
  for (const auto& [k, v] : rows) {
    VersionRecord r = row_record(k, v, ts);
    std::size_t sz = record_wire_size(r) + 2;
    if (!leaf.records.empty() && leaf.bytes + sz > cap) flush_leaf();
    leaf.bytes += sz;
    leaf.records.push_back(std::move(r));
    ++record_count_;
  }
  flush_leaf();

  // Inner levels, packed to capacity as well.
  std::uint8_t level = 1;
  while (level_ids.size() > 1) {
    std::vector<std::uint64_t> next_ids;
    std::vector<std::string> next_firsts;
    Node inner;
    inner.id = store_.allocate_page_id();
    inner.level = level;
    auto flush_inner = [&]() {
      if (inner.entries.empty()) return;
      next_ids.push_back(inner.id);
      next_firsts.push_back(inner.entries.front().separator);
      PageImage img;
      img.page_id = inner.id;
      img.level = inner.level;
      img.bytes = serialize(inner);
      images.push_back(std::move(img));
      Node fresh;
      fresh.id = store_.allocate_page_id();
      fresh.level = level;
      inner = std::move(fresh);
    };
    for (std::size_t i = 0; i < level_ids.size(); ++i) {
      InnerEntry e{i == 0 ? std::string() : level_firsts[i], level_ids[i]};
      std::size_t sz = inner_entry_wire_size(e);
      if (!inner.entries.empty() && inner.bytes + sz > inner_cap(cfg_.page_size)) {
        flush_inner();
        e.separator = level_firsts[i];
      }
      inner.bytes += sz;
      inner.entries.push_back(std::move(e));
    }
    flush_inner();
    level_ids = std::move(next_ids);
    level_firsts = std::move(next_firsts);
    ++level;
  }
  root_ = level_ids.front();
  store_.allocate_and_write(images);
  commit_directory();
  evict_to_budget();
}

}  // namespace mvpbt
