#include "mvpbt/cache.hpp"

namespace mvpbt {

std::shared_ptr<const PageView> PageCache::get(std::uint64_t page_id) {
  std::lock_guard lk(mu_);
  auto it = slots_.find(page_id);
  if (it == slots_.end()) {
    ++misses_;
    return nullptr;
  }
  ++hits_;
  lru_.splice(lru_.end(), lru_, it->second.lru_it);
  return it->second.page;
}

void PageCache::insert(std::uint64_t page_id,
                       std::shared_ptr<const PageView> page) {
  std::lock_guard lk(mu_);
  std::size_t charge = page->charge();
  auto it = slots_.find(page_id);
  if (it != slots_.end()) {
    resident_ -= it->second.charge;
    resident_ += charge;
    it->second.page = std::move(page);
    it->second.charge = charge;
    lru_.splice(lru_.end(), lru_, it->second.lru_it);
  } else {
    auto lit = lru_.insert(lru_.end(), page_id);
    slots_[page_id] = Slot{std::move(page), charge, lit};
    resident_ += charge;
  }
  evict_locked();
}

void PageCache::erase(std::uint64_t page_id) {
  std::lock_guard lk(mu_);
  auto it = slots_.find(page_id);
  if (it == slots_.end()) return;
  resident_ -= it->second.charge;
  lru_.erase(it->second.lru_it);
  slots_.erase(it);
}

void PageCache::reserve_external(std::int64_t delta) {
  std::lock_guard lk(mu_);
  external_ += delta;
  if (external_ < 0) external_ = 0;
  evict_locked();
}

void PageCache::evict_locked() {
  while (!lru_.empty() &&
         resident_ + static_cast<std::size_t>(external_) > capacity_) {
    std::uint64_t victim = lru_.front();
    auto it = slots_.find(victim);
    resident_ -= it->second.charge;
    lru_.pop_front();
    slots_.erase(it);
    ++evictions_;
  }
}

std::size_t PageCache::resident_bytes() const {
  std::lock_guard lk(mu_);
  return resident_;
}

std::size_t PageCache::external_bytes() const {
  std::lock_guard lk(mu_);
  return static_cast<std::size_t>(external_);
}

std::uint64_t PageCache::hits() const {
  std::lock_guard lk(mu_);
  return hits_;
}

std::uint64_t PageCache::misses() const {
  std::lock_guard lk(mu_);
  return misses_;
}

std::uint64_t PageCache::evictions() const {
  std::lock_guard lk(mu_);
  return evictions_;
}

bool PageCache::contains(std::uint64_t page_id) const {
  std::lock_guard lk(mu_);
  return slots_.count(page_id) != 0;
}

std::vector<std::uint64_t> PageCache::lru_order() const {
  std::lock_guard lk(mu_);
  return {lru_.begin(), lru_.end()};
}

}  // namespace mvpbt
