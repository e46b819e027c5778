#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <optional>
#include <random>

#include "mvpbt/errors.hpp"
#include "mvpbt/records.hpp"

using namespace mvpbt;

namespace {

VersionRecord rec(RecordType t, Timestamp ts, std::string key,
                  std::string value = "") {
  VersionRecord r;
  r.rtype = t;
  r.ts = ts;
  r.key = PartitionedKey{0, std::move(key)};
  r.value = std::move(value);
  return r;
}

// A single key's mutation history, oldest first.
struct Mutation {
  RecordType type;
  Timestamp ts;
  std::string value;
};

// Oracle: replay the history up to the snapshot and report the live value.
std::optional<std::string> replay(const std::vector<Mutation>& history,
                                  const Snapshot& s) {
  std::optional<std::string> live;
  for (const auto& m : history) {
    VersionRecord probe = rec(m.type, m.ts, "k", m.value);
    if (!is_visible(probe, s)) continue;
    if (ends_chain(m.type)) {
      live.reset();
    } else {
      live = m.value;
    }
  }
  return live;
}

std::vector<VersionRecord> chain_of(const std::vector<Mutation>& history) {
  std::vector<VersionRecord> chain;  // newest first
  for (const auto& m : history) {
    chain.insert(chain.begin(), rec(m.type, m.ts, "k", m.value));
  }
  return chain;
}

}  // namespace

TEST_CASE("visibility basics") {
  Snapshot s = make_snapshot(15, {});
  CHECK(is_visible(rec(RecordType::Regular, 10, "k"), s));
  CHECK_FALSE(is_visible(rec(RecordType::Regular, 16, "k"), s));

  Snapshot with_active = make_snapshot(15, {10});
  CHECK_FALSE(is_visible(rec(RecordType::Regular, 10, "k"), with_active));

  // Bulk-loaded records are visible to every snapshot.
  Snapshot early = make_snapshot(0, {});
  CHECK(is_visible(rec(RecordType::Regular, kBulkTimestamp, "k"), early));
  CHECK(is_visible(rec(RecordType::Regular, kBulkTimestamp, "k"), s));
}

TEST_CASE("snapshot rejects active ids above read_ts") {
  CHECK_THROWS_AS(make_snapshot(5, {6}), std::invalid_argument);
}

TEST_CASE("resolve_chain single regular record") {
  std::vector<VersionRecord> chain = {rec(RecordType::Regular, 5, "k", "v")};
  Snapshot s = make_snapshot(9, {});
  const VersionRecord* r = resolve_chain(chain, s);
  REQUIRE(r != nullptr);
  CHECK(r->value == "v");
}

TEST_CASE("resolve_chain tombstone then regular") {
  std::vector<VersionRecord> chain = {rec(RecordType::Tombstone, 8, "k"),
                                      rec(RecordType::Regular, 5, "k", "v")};
  CHECK(resolve_chain(chain, make_snapshot(9, {})) == nullptr);
  const VersionRecord* r = resolve_chain(chain, make_snapshot(7, {}));
  REQUIRE(r != nullptr);
  CHECK(r->ts == 5);
  CHECK(r->value == "v");
}

TEST_CASE("resolve_chain stops at first visible record") {
  std::vector<VersionRecord> chain = {
      rec(RecordType::Replacement, 20, "k", "v20"),
      rec(RecordType::Replacement, 9, "k", "v9"),
      rec(RecordType::Replacement, 7, "k", "v7"),
      rec(RecordType::Regular, 5, "k", "v5"),
  };
  std::size_t probes = 0;
  const VersionRecord* r = resolve_chain(chain, make_snapshot(10, {}), &probes);
  REQUIRE(r != nullptr);
  CHECK(r->ts == 9);
  CHECK(probes == 2);  // ts=20 skipped as invisible, ts=9 decides
}

TEST_CASE("resolve_chain matches replay oracle on random histories") {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 20'000; ++round) {
    std::vector<Mutation> history;
    Timestamp ts = 0;
    bool alive = false;
    std::uniform_int_distribution<int> len(1, 6);
    std::uniform_int_distribution<int> coin(0, 99);
    int n = len(rng);
    for (int i = 0; i < n; ++i) {
      ts += 1 + static_cast<Timestamp>(coin(rng) % 3);
      if (!alive) {
        history.push_back({RecordType::Regular, ts, "v" + std::to_string(ts)});
        alive = true;
      } else {
        int c = coin(rng);
        if (c < 50) {
          history.push_back(
              {RecordType::Replacement, ts, "v" + std::to_string(ts)});
        } else if (c < 80) {
          history.push_back({RecordType::Tombstone, ts, ""});
          alive = false;
        } else {
          history.push_back({RecordType::Anti, ts, ""});
          alive = false;
        }
      }
    }
    auto chain = chain_of(history);
    for (Timestamp read_ts = 0; read_ts <= ts + 1; ++read_ts) {
      Snapshot s = make_snapshot(read_ts, {});
      auto expect = replay(history, s);
      const VersionRecord* got = resolve_chain(chain, s);
      if (expect.has_value()) {
        REQUIRE(got != nullptr);
        REQUIRE(got->value == *expect);
      } else {
        REQUIRE(got == nullptr);
      }
    }
  }
}

TEST_CASE("at most one visible version and monotone reads") {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 5'000; ++round) {
    std::vector<Mutation> history;
    Timestamp ts = 0;
    bool alive = false;
    for (int i = 0; i < 5; ++i) {
      ts += 2;
      if (!alive) {
        history.push_back({RecordType::Regular, ts, "v" + std::to_string(ts)});
        alive = true;
      } else if (rng() % 3 == 0) {
        history.push_back({RecordType::Tombstone, ts, ""});
        alive = false;
      } else {
        history.push_back(
            {RecordType::Replacement, ts, "v" + std::to_string(ts)});
      }
    }
    auto chain = chain_of(history);
    Timestamp prev_seen = 0;
    for (Timestamp read_ts = 0; read_ts <= ts; ++read_ts) {
      const VersionRecord* got = resolve_chain(chain, make_snapshot(read_ts, {}));
      if (got) {
        REQUIRE(got->ts >= prev_seen);  // monotone reads
        prev_seen = got->ts;
      }
    }
  }
}

TEST_CASE("record wire round trip") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 50'000; ++i) {
    VersionRecord r;
    r.rtype = static_cast<RecordType>(1 + rng() % 5);
    r.ts = rng() % 2 == 0 ? rng() % 1000 : rng();
    r.key = PartitionedKey{static_cast<PartitionNumber>(rng() % 100),
                           std::string(1 + rng() % 20, 'a' + rng() % 26)};
    r.value = std::string(rng() % 40, 'x');
    std::string buf;
    encode_record(r, buf);
    CHECK(buf.size() == record_wire_size(r));
    std::size_t pos = 0;
    VersionRecord back = decode_record(buf, pos, r.key.pnr);
    REQUIRE(pos == buf.size());
    REQUIRE(back.rtype == r.rtype);
    REQUIRE(back.ts == r.ts);
    REQUIRE(back.key == r.key);
    REQUIRE(back.value == r.value);
  }
}

TEST_CASE("cached index value carries a partition number") {
  VersionRecord r = rec(RecordType::CachedIndex, 3, "k");
  r.value = encode_cached_target(713);
  CHECK(r.cached_target() == 713);
  VersionRecord plain = rec(RecordType::Regular, 3, "k");
  CHECK_THROWS_AS(plain.cached_target(), mvpbt::StateError);
}
