#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mvpbt/bloom.hpp"
#include "mvpbt/errors.hpp"
#include "mvpbt/page.hpp"
#include "test_util.hpp"

using namespace mvpbt;

namespace {

VersionRecord rec(std::string key, std::string value, Timestamp ts = 1,
                  RecordType t = RecordType::Regular) {
  VersionRecord r;
  r.rtype = t;
  r.ts = ts;
  r.key = PartitionedKey{4, std::move(key)};
  r.value = std::move(value);
  return r;
}

}  // namespace

TEST_CASE("leaf page round trip") {
  std::vector<VersionRecord> records = {rec("alpha", "1"), rec("beta", "2"),
                                        rec("gamma", "3")};
  std::string bytes = encode_leaf_page(42, 'R', 4, 4, 43, records);
  DecodedPage page = decode_page(bytes);
  CHECK(page.hdr.page_id == 42);
  CHECK(page.hdr.pnr == 4);
  CHECK(page.hdr.position == 4);
  CHECK(page.hdr.ptype == 'R');
  CHECK(page.is_leaf());
  CHECK(page.next_leaf == 43);
  REQUIRE(page.records.size() == 3);
  CHECK(page.records[1].key.user_key == "beta");
  CHECK(page.records[1].key.pnr == 4);  // restored from the header prefix
}

TEST_CASE("inner page round trip") {
  std::vector<InnerEntry> entries = {{"", 10}, {"m", 11}, {"t", 12}};
  std::string bytes = encode_inner_page(7, 2, 'G', 9, 3, entries);
  DecodedPage page = decode_page(bytes);
  CHECK(page.hdr.level == 2);
  CHECK_FALSE(page.is_leaf());
  REQUIRE(page.entries.size() == 3);
  CHECK(page.entries[0].separator.empty());
  CHECK(page.entries[2].child == 12);
}

TEST_CASE("corruption is detected") {
  std::vector<VersionRecord> records = {rec("k", "v")};
  std::string bytes = encode_leaf_page(1, 'R', 0, 0, 0, records);
  SUBCASE("flipped payload byte") {
    bytes[kPageHeaderSize + 3] ^= 0x40;
    CHECK_THROWS_AS(decode_page(bytes), CorruptionError);
  }
  SUBCASE("bad magic") {
    bytes[0] ^= 0xFF;
    CHECK_THROWS_AS(decode_page(bytes), CorruptionError);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 1);
    CHECK_THROWS_AS(decode_page(bytes), CorruptionError);
  }
}

TEST_CASE("shortest separator") {
  CHECK(shortest_separator("abc", "abd") == "abd");
  CHECK(shortest_separator("abc", "b") == "b");
  CHECK(shortest_separator("car", "cat") == "cat");
  CHECK(shortest_separator("a", "abx") == "ab");
  CHECK(shortest_separator("hello", "hellp") == "hellp");
  CHECK_THROWS_AS(shortest_separator("b", "a"), std::invalid_argument);
}

TEST_CASE("shortest separator sits between its bounds") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100'000; ++i) {
    std::string a = mvpbt::testing::random_key(rng, 1, 8);
    std::string b = mvpbt::testing::random_key(rng, 1, 8);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    std::string s = shortest_separator(a, b);
    REQUIRE(a < s);
    REQUIRE(s <= b);
  }
}

TEST_CASE("bloom filter has no false negatives and sane fp rate") {
  const std::size_t n = 100'000;
  BloomFilter bloom(n, 10, 7);
  std::vector<std::string> present;
  present.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    present.push_back(mvpbt::testing::fixed_width_key(i));
    bloom.add(present.back());
  }
  for (const auto& k : present) REQUIRE(bloom.may_contain(k));

  std::size_t fp = 0;
  const std::size_t absent = 100'000;
  for (std::size_t i = 0; i < absent; ++i) {
    if (bloom.may_contain(mvpbt::testing::fixed_width_key(1'000'000 + i))) ++fp;
  }
  double rate = static_cast<double>(fp) / static_cast<double>(absent);
  double theory = BloomFilter::expected_fp_rate(n, bloom.bit_count(), 7);
  CHECK(theory == doctest::Approx(0.00819).epsilon(0.05));
  CHECK(rate <= 1.5 * theory);
  CHECK(rate <= 0.012);
}

TEST_CASE("partition filter fences short-circuit the bloom") {
  PartitionFilter f;
  f.bloom = BloomFilter(4, 10, 7);
  f.bloom.add("betta");
  f.bloom.add("delta");
  f.fence_low = "betta";
  f.fence_high = "delta";
  f.built = true;
  CHECK(f.probe("betta"));
  CHECK(f.probe("delta"));
  auto probes_before = f.bloom_probes.load();
  CHECK_FALSE(f.probe("aardvark"));  // below low fence
  CHECK_FALSE(f.probe("zebra"));     // above high fence
  CHECK(f.bloom_probes.load() == probes_before);  // bloom untouched
}

TEST_CASE("probing an unbuilt filter is a contract violation") {
  PartitionFilter f;
  CHECK_THROWS_AS(f.probe("k"), StateError);
}
