#include "mvpbt/memnode.hpp"

#include <algorithm>
#include <cassert>

namespace mvpbt {

bool MemNode::insert(VersionRecord rec) {
  auto it = std::lower_bound(entries.begin(), entries.end(), rec,
                             record_order_less);
  if (it != entries.end() && it->key.user_key == rec.key.user_key &&
      it->ts == rec.ts) {
    return false;  // duplicate (key, ts)
  }
  byte_footprint += record_wire_size(rec);
  entries.insert(it, std::move(rec));
  dirty = true;
  return true;
}

std::uint64_t MemNode::erase_range(std::string_view low, std::string_view high,
                                   bool high_unbounded) {
  auto first = std::lower_bound(
      entries.begin(), entries.end(), low,
      [](const VersionRecord& r, std::string_view k) { return r.key.user_key < k; });
  auto last = high_unbounded
                  ? entries.end()
                  : std::lower_bound(first, entries.end(), high,
                                     [](const VersionRecord& r, std::string_view k) {
                                       return r.key.user_key < k;
                                     });
  std::uint64_t n = static_cast<std::uint64_t>(last - first);
  for (auto it = first; it != last; ++it) byte_footprint -= record_wire_size(*it);
  entries.erase(first, last);
  if (n > 0) dirty = true;
  return n;
}

MemSubtree::MemSubtree() {
  lows_.emplace_back();
  nodes_.push_back(std::make_unique<MemNode>());
}

std::size_t MemSubtree::locate(std::string_view user_key) const {
  // Last node whose low bound is <= user_key. lows_[0] is empty, so keys
  // below every recorded bound land in the leftmost node.
  auto it = std::upper_bound(lows_.begin(), lows_.end(), user_key,
                             [](std::string_view k, const std::string& low) {
                               return k < low;
                             });
  return static_cast<std::size_t>(it - lows_.begin()) - 1;
}

bool MemSubtree::insert(VersionRecord rec, std::size_t split_limit) {
  std::size_t idx = locate(rec.key.user_key);
  MemNode& n = *nodes_[idx];
  std::size_t before = n.byte_footprint;
  if (!n.insert(std::move(rec))) return false;
  total_bytes_ += n.byte_footprint - before;
  ++total_records_;
  if (n.byte_footprint > split_limit && n.entries.size() > 1) {
    split_node(idx, split_limit);
  }
  return true;
}

void MemSubtree::split_node(std::size_t idx, std::size_t split_limit) {
  (void)split_limit;
  MemNode& n = *nodes_[idx];
  bool rightmost = idx + 1 == nodes_.size();
  double left_share = rightmost ? 0.95 : 0.50;
  std::size_t budget =
      static_cast<std::size_t>(static_cast<double>(n.byte_footprint) * left_share);

  std::size_t cut = 0;
  std::size_t acc = 0;
  while (cut < n.entries.size() && acc < budget) {
    acc += record_wire_size(n.entries[cut]);
    ++cut;
  }
  if (cut == 0) cut = 1;
  if (cut >= n.entries.size()) cut = n.entries.size() - 1;
  // Never divide the versions of one user key across nodes.
  while (cut < n.entries.size() &&
         n.entries[cut].key.user_key == n.entries[cut - 1].key.user_key) {
    ++cut;
  }
  if (cut >= n.entries.size()) return;  // one giant key run, cannot split

  auto right = std::make_unique<MemNode>();
  right->dirty = true;
  right->entries.assign(std::make_move_iterator(n.entries.begin() + cut),
                        std::make_move_iterator(n.entries.end()));
  n.entries.resize(cut);
  std::size_t right_bytes = 0;
  for (const auto& r : right->entries) right_bytes += record_wire_size(r);
  right->byte_footprint = right_bytes;
  n.byte_footprint -= right_bytes;

  lows_.insert(lows_.begin() + static_cast<std::ptrdiff_t>(idx) + 1,
               right->entries.front().key.user_key);
  nodes_.insert(nodes_.begin() + static_cast<std::ptrdiff_t>(idx) + 1,
                std::move(right));
}

std::vector<VersionRecord> MemSubtree::collect_versions(
    std::string_view user_key) const {
  const MemNode& n = *nodes_[locate(user_key)];
  auto first = std::lower_bound(
      n.entries.begin(), n.entries.end(), user_key,
      [](const VersionRecord& r, std::string_view k) { return r.key.user_key < k; });
  std::vector<VersionRecord> out;
  for (auto it = first; it != n.entries.end() && it->key.user_key == user_key;
       ++it) {
    out.push_back(*it);
  }
  return out;  // already newest-first: ts descends within a key
}

std::vector<VersionRecord> MemSubtree::collect_range(
    std::string_view low, std::string_view high, bool high_unbounded) const {
  std::vector<VersionRecord> out;
  for (std::size_t i = locate(low); i < nodes_.size(); ++i) {
    const MemNode& n = *nodes_[i];
    auto first = std::lower_bound(
        n.entries.begin(), n.entries.end(), low,
        [](const VersionRecord& r, std::string_view k) { return r.key.user_key < k; });
    for (auto it = first; it != n.entries.end(); ++it) {
      if (!high_unbounded && it->key.user_key >= high) return out;
      out.push_back(*it);
    }
  }
  return out;
}

std::uint64_t MemSubtree::erase_range(std::string_view low,
                                      std::string_view high,
                                      bool high_unbounded) {
  std::uint64_t removed = 0;
  for (auto& node : nodes_) {
    std::size_t before = node->byte_footprint;
    removed += node->erase_range(low, high, high_unbounded);
    total_bytes_ -= before - node->byte_footprint;
  }
  total_records_ -= removed;
  // Drop emptied nodes but keep at least one.
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i]->entries.empty() && nodes_.size() > 1) {
      nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(i));
      lows_.erase(lows_.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }
  if (!lows_.empty()) lows_[0].clear();
  return removed;
}

}  // namespace mvpbt
