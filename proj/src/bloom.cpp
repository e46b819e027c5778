#include "mvpbt/bloom.hpp"

#include <cmath>

#include "mvpbt/errors.hpp"

namespace mvpbt {

namespace {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

BloomFilter::BloomFilter(std::size_t expected_keys, int bits_per_key,
                         int num_hashes)
    : num_hashes_(num_hashes) {
  std::size_t bits = expected_keys * static_cast<std::size_t>(bits_per_key);
  if (bits < 64) bits = 64;
  bit_count_ = bits;
  bits_.assign((bits + 7) / 8, 0);
}

void BloomFilter::add(std::string_view key) {
  std::uint64_t base = fnv1a64(key);
  std::uint64_t h1 = splitmix64(base);
  std::uint64_t h2 = splitmix64(base ^ 0xA5A5A5A55A5A5A5Aull) | 1;
  for (int i = 0; i < num_hashes_; ++i) {
    std::uint64_t bit = (h1 + static_cast<std::uint64_t>(i) * h2) % bit_count_;
    bits_[bit >> 3] |= static_cast<std::uint8_t>(1u << (bit & 7));
  }
  ++keys_added_;
}

bool BloomFilter::may_contain(std::string_view key) const {
  if (bit_count_ == 0) return false;
  std::uint64_t base = fnv1a64(key);
  std::uint64_t h1 = splitmix64(base);
  std::uint64_t h2 = splitmix64(base ^ 0xA5A5A5A55A5A5A5Aull) | 1;
  for (int i = 0; i < num_hashes_; ++i) {
    std::uint64_t bit = (h1 + static_cast<std::uint64_t>(i) * h2) % bit_count_;
    if (!(bits_[bit >> 3] & (1u << (bit & 7)))) return false;
  }
  return true;
}

double BloomFilter::expected_fp_rate(std::size_t n_keys, std::size_t m_bits,
                                     int k_hashes) {
  double k = static_cast<double>(k_hashes);
  double ratio = static_cast<double>(n_keys) / static_cast<double>(m_bits);
  return std::pow(1.0 - std::exp(-k * ratio), k);
}

bool PartitionFilter::probe(std::string_view user_key) const {
  if (!built) throw StateError("probe of an unbuilt partition filter");
  if (user_key < fence_low || user_key > fence_high) return false;
  if (bloom_retired) return true;  // fence pass, no bloom to consult
  bloom_probes.fetch_add(1, std::memory_order_relaxed);
  return bloom.may_contain(user_key);
}

}  // namespace mvpbt
