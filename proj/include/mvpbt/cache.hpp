#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "mvpbt/page.hpp"

namespace mvpbt {

// Byte-bounded LRU over immutable page images. The buffer of the mutable
// partition and the resident filter structures are charged against the same
// capacity through reserve_external(): when the hot write buffer grows the
// replacement side shrinks, and a clean victim handover returns the bytes as
// ordinary LRU residents.
class PageCache {
 public:
  explicit PageCache(std::size_t capacity_bytes)
      : capacity_(capacity_bytes) {}

  std::shared_ptr<const PageView> get(std::uint64_t page_id);
  void insert(std::uint64_t page_id, std::shared_ptr<const PageView> page);
  void erase(std::uint64_t page_id);

  // Adjusts the non-page byte charge (mutable-partition buffer, filters).
  void reserve_external(std::int64_t delta);

  std::size_t resident_bytes() const;
  std::size_t external_bytes() const;
  std::size_t capacity() const { return capacity_; }
  std::uint64_t hits() const;
  std::uint64_t misses() const;
  std::uint64_t evictions() const;
  bool contains(std::uint64_t page_id) const;

  // Cold-to-hot page ids, for eviction-order assertions.
  std::vector<std::uint64_t> lru_order() const;

 private:
  void evict_locked();

  struct Slot {
    std::shared_ptr<const PageView> page;
    std::size_t charge = 0;
    std::list<std::uint64_t>::iterator lru_it;
  };

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::list<std::uint64_t> lru_;  // front = coldest
  std::unordered_map<std::uint64_t, Slot> slots_;
  std::size_t resident_ = 0;
  std::int64_t external_ = 0;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  std::uint64_t evictions_ = 0;
};

}  // namespace mvpbt
