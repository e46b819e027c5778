#pragma once

#include <atomic>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mvpbt {

// Double-hashed bloom filter sized by bits-per-key. No false negatives.
class BloomFilter {
 public:
  BloomFilter() = default;
  BloomFilter(std::size_t expected_keys, int bits_per_key, int num_hashes);

  void add(std::string_view key);
  bool may_contain(std::string_view key) const;

  std::size_t bit_count() const { return bit_count_; }
  std::size_t byte_size() const { return bits_.size(); }
  int num_hashes() const { return num_hashes_; }
  std::size_t keys_added() const { return keys_added_; }

  // Theoretical false-positive rate (1 - e^{-kn/m})^k.
  static double expected_fp_rate(std::size_t n_keys, std::size_t m_bits,
                                 int k_hashes);

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t bit_count_ = 0;
  int num_hashes_ = 0;
  std::size_t keys_added_ = 0;
};

// Per-partition skipping structure: user-key fences plus a bloom filter.
// probe() answering false proves the key is absent from the partition.
struct PartitionFilter {
  std::string fence_low;
  std::string fence_high;
  BloomFilter bloom;
  bool built = false;
  bool bloom_retired = false;  // fences kept, bloom handed off
  mutable std::atomic<std::uint64_t> bloom_probes{0};

  bool probe(std::string_view user_key) const;
  std::size_t byte_size() const { return bloom.byte_size(); }
};

}  // namespace mvpbt
