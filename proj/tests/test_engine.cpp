#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "mvpbt/engine.hpp"
#include "mvpbt/errors.hpp"
#include "oracle_kv.hpp"
#include "test_util.hpp"

using namespace mvpbt;
using mvpbt::testing::OracleKV;
using mvpbt::testing::TempDir;
using mvpbt::testing::fixed_width_key;

namespace {

std::unique_ptr<Engine> small_engine(const TempDir& dir,
                                     EngineMode mode = EngineMode::Mvpbt,
                                     std::uint64_t cap = 48 << 10) {
  EngineConfig cfg;
  cfg.path = dir.file("db");
  cfg.mode = mode;
  cfg.background_maintenance = false;
  cfg.page_size = 4096;
  cfg.cache_bytes = 1 << 20;
  cfg.partition_cap_bytes = cap;
  cfg.buffer_share_max = 0.5;
  cfg.cached_every = 3;
  cfg.gc_every = 10;
  cfg.mem_node_limit = 8 << 10;
  return Engine::open(cfg);
}

void autocommit_put(Engine& e, const std::string& k, const std::string& v,
                    OracleKV* oracle = nullptr) {
  auto tx = e.begin();
  e.put(tx, k, v);
  Timestamp ts = e.commit(tx);
  if (oracle) oracle->apply_put(k, v, ts);
}

}  // namespace

TEST_CASE("begin commit basics") {
  TempDir dir;
  auto eng = small_engine(dir);
  auto tx = eng->begin();
  Timestamp read_ts = tx.snapshot().read_ts;
  Timestamp commit_ts = eng->commit(tx);
  CHECK(commit_ts > read_ts);  // even with an empty write set
  CHECK_THROWS_AS(eng->commit(tx), StateError);

  auto tx2 = eng->begin();
  eng->abort(tx2);
  CHECK_THROWS_AS(eng->commit(tx2), StateError);
}

TEST_CASE("concurrent transactions never see uncommitted writes") {
  TempDir dir;
  auto eng = small_engine(dir);
  auto writer = eng->begin();
  eng->put(writer, "shared", "draft");

  auto reader = eng->begin();
  // The writer's id sits in the reader's active set.
  CHECK(reader.snapshot().is_active(writer.id()));
  CHECK_FALSE(eng->get(reader, "shared").has_value());
  eng->commit(writer);
  // Still invisible: the snapshot predates the commit.
  CHECK_FALSE(eng->get(reader, "shared").has_value());
  eng->abort(reader);

  auto late = eng->begin();
  auto got = eng->get(late, "shared");
  REQUIRE(got.has_value());
  CHECK(*got == "draft");
  eng->abort(late);
}

TEST_CASE("read own writes, delete semantics, record typing") {
  TempDir dir;
  auto eng = small_engine(dir);
  auto tx = eng->begin();
  eng->put(tx, "k", "v1");
  auto own = eng->get(tx, "k");
  REQUIRE(own.has_value());
  CHECK(*own == "v1");
  eng->commit(tx);

  // A second put of an existing key becomes a replacement record.
  auto tx2 = eng->begin();
  eng->put(tx2, "k", "v2");
  eng->commit(tx2);
  auto mutable_part = eng->tree().partition(eng->tree().mutable_pnr());
  auto versions = eng->tree().point_versions(*mutable_part, "k");
  REQUIRE(versions.size() == 2);
  CHECK(versions[0].rtype == RecordType::Replacement);
  CHECK(versions[1].rtype == RecordType::Regular);

  // Delete then read: gone; delete of a missing key is a quiet no-op.
  auto tx3 = eng->begin();
  eng->del(tx3, "k");
  CHECK_FALSE(eng->get(tx3, "k").has_value());
  eng->del(tx3, "never-existed");
  eng->commit(tx3);
  auto tx4 = eng->begin();
  CHECK_FALSE(eng->get(tx4, "k").has_value());
  eng->abort(tx4);

  // Re-insert after delete starts a fresh chain.
  autocommit_put(*eng, "k", "v3");
  auto tx5 = eng->begin();
  auto back = eng->get(tx5, "k");
  REQUIRE(back.has_value());
  CHECK(*back == "v3");
  eng->abort(tx5);
}

TEST_CASE("interleaved blind writers equal serial replay in commit order") {
  TempDir dir;
  auto eng = small_engine(dir);
  std::mt19937_64 rng(31);
  struct Committed {
    Timestamp ts;
    std::vector<std::pair<std::string, std::string>> writes;
  };
  std::vector<Committed> log;
  std::vector<Transaction> open;
  for (int i = 0; i < 1000; ++i) {
    if (open.size() < 4 && rng() % 2 == 0) {
      open.push_back(eng->begin());
      continue;
    }
    if (!open.empty()) {
      std::size_t pick = rng() % open.size();
      Transaction tx = std::move(open[pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
      std::vector<std::pair<std::string, std::string>> writes;
      int nw = 1 + static_cast<int>(rng() % 3);
      for (int w = 0; w < nw; ++w) {
        std::string k = fixed_width_key(rng() % 50);
        std::string v = "txv" + std::to_string(rng() % 100000);
        eng->put(tx, k, v);
        writes.emplace_back(k, v);
      }
      if (rng() % 8 == 0) {
        eng->abort(tx);
      } else {
        Timestamp ts = eng->commit(tx);
        log.push_back(Committed{ts, std::move(writes)});
      }
    }
  }
  while (!open.empty()) {
    eng->abort(open.back());
    open.pop_back();
  }
  // Serial replay in commit-timestamp order.
  std::sort(log.begin(), log.end(),
            [](const Committed& a, const Committed& b) { return a.ts < b.ts; });
  std::map<std::string, std::string> expect;
  for (const auto& c : log) {
    for (const auto& [k, v] : c.writes) expect[k] = v;
  }
  auto tx = eng->begin();
  for (const auto& [k, v] : expect) {
    auto got = eng->get(tx, k);
    REQUIRE(got.has_value());
    REQUIRE(*got == v);
  }
  eng->abort(tx);
}

TEST_CASE("newest partition wins before visibility filtering") {
  TempDir dir;
  auto eng = small_engine(dir);
  autocommit_put(*eng, "dup", "old");
  eng->tree().switch_partition();
  eng->tree().sync_victim();
  autocommit_put(*eng, "dup", "newer");
  eng->tree().switch_partition();
  eng->tree().sync_victim();

  auto tx = eng->begin();
  auto trace = eng->get_traced(tx, "dup");
  REQUIRE(trace.value.has_value());
  CHECK(*trace.value == "newer");
  REQUIRE(trace.chosen_pnr.has_value());
  CHECK(*trace.chosen_pnr == 1);  // the higher partition number
  eng->abort(tx);
}

TEST_CASE("absent key with rejecting filters costs no storage reads") {
  TempDir dir;
  auto eng = small_engine(dir);
  for (int part = 0; part < 10; ++part) {
    auto tx = eng->begin();
    for (int i = 0; i < 50; ++i) {
      eng->put(tx, fixed_width_key(part * 1000 + i), "v");
    }
    eng->commit(tx);
    eng->tree().switch_partition();
    eng->tree().sync_victim();
  }
  auto before = eng->store().report();
  auto tx = eng->begin();
  // Inside the global key range but never inserted; bloom filters reject it
  // (modulo false positives, absent at this scale for this fixed key).
  auto trace = eng->get_traced(tx, "u000000500999");
  CHECK_FALSE(trace.value.has_value());
  eng->abort(tx);
  auto after = eng->store().report();
  CHECK(after.reads == before.reads);
}

TEST_CASE("read amplification stays within positives times height") {
  TempDir dir;
  auto eng = small_engine(dir);
  std::mt19937_64 rng(9);
  for (int part = 0; part < 6; ++part) {
    auto tx = eng->begin();
    for (int i = 0; i < 400; ++i) {
      eng->put(tx, fixed_width_key(rng() % 3000), "value-" + std::to_string(i));
    }
    eng->commit(tx);
    eng->tree().switch_partition();
    eng->tree().sync_victim();
  }
  // Cold cache: reopen-free approximation by evicting via external pressure.
  eng->cache().reserve_external(static_cast<std::int64_t>(eng->cache().capacity()));
  eng->cache().reserve_external(-static_cast<std::int64_t>(eng->cache().capacity()));
  auto tx = eng->begin();
  for (int i = 0; i < 200; ++i) {
    auto trace = eng->get_traced(tx, fixed_width_key(rng() % 3000));
    std::uint64_t positives = trace.positive_probes + trace.cached_consults;
    REQUIRE(trace.page_reads <=
            (positives + 1) * static_cast<std::uint64_t>(trace.max_height));
  }
  eng->abort(tx);
}

TEST_CASE("scan yields ascending keys and honors deletes across partitions") {
  TempDir dir;
  auto eng = small_engine(dir);
  // a, b, c spread over three partitions; b deleted in the newest.
  autocommit_put(*eng, "a", "1");
  eng->tree().switch_partition();
  eng->tree().sync_victim();
  autocommit_put(*eng, "b", "2");
  eng->tree().switch_partition();
  eng->tree().sync_victim();
  autocommit_put(*eng, "c", "3");
  {
    auto tx = eng->begin();
    eng->del(tx, "b");
    eng->commit(tx);
  }
  auto tx = eng->begin();
  auto cur = eng->scan(tx, "a", "zzzz");
  auto r1 = cur.next();
  REQUIRE(r1.has_value());
  CHECK(r1->first == "a");
  auto r2 = cur.next();
  REQUIRE(r2.has_value());
  CHECK(r2->first == "c");
  CHECK_FALSE(cur.next().has_value());
  eng->abort(tx);

  // Empty range: immediately exhausted.
  auto tx2 = eng->begin();
  auto empty = eng->scan(tx2, "x", "y");
  CHECK_FALSE(empty.next().has_value());
  eng->abort(tx2);
}

TEST_CASE("scan opens children only for intersecting partitions") {
  TempDir dir;
  auto eng = small_engine(dir);
  for (int part = 0; part < 4; ++part) {
    auto tx = eng->begin();
    for (int i = 0; i < 100; ++i) {
      eng->put(tx, std::string(1, static_cast<char>('a' + part)) +
                       fixed_width_key(i),
               "v");
    }
    eng->commit(tx);
    eng->tree().switch_partition();
    eng->tree().sync_victim();
  }
  auto tx = eng->begin();
  auto cur = eng->scan(tx, "b", "c");
  // Partitions 'a', 'c', 'd' have fences outside [b, c): only the 'b'
  // partition and the (empty) mutable partition qualify.
  CHECK(cur.children() <= 2);
  std::size_t n = 0;
  while (cur.next()) ++n;
  CHECK(n == 100);
  eng->abort(tx);
}

TEST_CASE("long-lived snapshot ignores later commits") {
  TempDir dir;
  auto eng = small_engine(dir);
  autocommit_put(*eng, "k", "v1");
  auto old_reader = eng->begin();
  autocommit_put(*eng, "k", "v2");
  eng->tree().switch_partition();
  eng->tree().sync_victim();
  autocommit_put(*eng, "k", "v3");

  auto got = eng->get(old_reader, "k");
  REQUIRE(got.has_value());
  CHECK(*got == "v1");
  eng->abort(old_reader);

  auto fresh = eng->begin();
  auto now = eng->get(fresh, "k");
  REQUIRE(now.has_value());
  CHECK(*now == "v3");
  eng->abort(fresh);
}

TEST_CASE("master oracle fuzz with switches, cached partitions and gc") {
  TempDir dir;
  auto eng = small_engine(dir, EngineMode::Mvpbt, 8 << 10);
  OracleKV oracle;
  std::mt19937_64 rng(20240);
  const int ops = 20'000;
  const int key_space = 900;
  std::vector<std::pair<Transaction, Snapshot>> readers;

  for (int op = 0; op < ops; ++op) {
    int dice = static_cast<int>(rng() % 100);
    std::string key = fixed_width_key(rng() % key_space);
    if (dice < 40) {
      std::string value = "v" + std::to_string(rng() % 1'000'000);
      auto tx = eng->begin();
      eng->put(tx, key, value);
      Timestamp ts = eng->commit(tx);
      oracle.apply_put(key, value, ts);
    } else if (dice < 50) {
      auto tx = eng->begin();
      eng->del(tx, key);
      Timestamp ts = eng->commit(tx);
      if (oracle.get(key, Snapshot{ts, {}}).has_value()) {
        oracle.apply_del(key, ts);
      }
    } else if (dice < 80) {
      auto tx = eng->begin();
      auto got = eng->get(tx, key);
      auto expect = oracle.get(key, tx.snapshot());
      REQUIRE(got == expect);
      eng->abort(tx);
    } else if (dice < 90) {
      std::uint64_t lo_idx = rng() % key_space;
      std::string low = fixed_width_key(lo_idx);
      std::string high = fixed_width_key(
          std::min<std::uint64_t>(key_space, lo_idx + 1 + rng() % 40));
      if (low == high) high += "~";
      auto tx = eng->begin();
      auto cur = eng->scan(tx, low, high);
      auto expect = oracle.scan(low, high, tx.snapshot());
      std::vector<std::pair<std::string, std::string>> got;
      std::string prev;
      while (auto row = cur.next()) {
        if (!got.empty()) REQUIRE(row->first > prev);  // strict ascent
        prev = row->first;
        got.push_back(*row);
      }
      REQUIRE(got == expect);
      eng->abort(tx);
    } else if (dice < 95 && readers.size() < 3) {
      auto tx = eng->begin();
      Snapshot snap = tx.snapshot();
      readers.emplace_back(std::move(tx), snap);
    } else if (!readers.empty()) {
      // Validate an old snapshot against the oracle, then release it.
      auto& [tx, snap] = readers.back();
      std::string probe = fixed_width_key(rng() % key_space);
      auto got = eng->get(tx, probe);
      auto expect = oracle.get(probe, snap);
      REQUIRE(got == expect);
      eng->abort(tx);
      readers.pop_back();
    }
  }
  for (auto& [tx, snap] : readers) eng->abort(tx);
  // The run must actually have exercised the machinery.
  auto stats = eng->stats();
  CHECK(stats["switches"] > 10);
  CHECK(stats["cached_jobs"] + stats["gc_jobs"] > 0);
  INFO("switches=", stats["switches"], " cached=", stats["cached_jobs"],
       " gc=", stats["gc_jobs"]);

  // Final full sweep at a fresh snapshot.
  auto tx = eng->begin();
  for (int i = 0; i < key_space; ++i) {
    std::string key = fixed_width_key(i);
    auto got = eng->get(tx, key);
    auto expect = oracle.get(key, tx.snapshot());
    REQUIRE(got == expect);
  }
  eng->abort(tx);
}

TEST_CASE("overlapping maintenance jobs are rejected") {
  TempDir dir;
  auto eng = small_engine(dir, EngineMode::MvpbtNoCacheNoGc);
  for (int part = 0; part < 4; ++part) {
    auto tx = eng->begin();
    for (int i = 0; i < 200; ++i) {
      eng->put(tx, fixed_width_key(part * 1000 + i), "v");
    }
    eng->commit(tx);
    eng->tree().switch_partition();
    eng->tree().sync_victim();
  }
  std::vector<PartitionPtr> sources;
  for (const auto& p : eng->tree().all_partitions()) {
    if (p->synced && p->visible) sources.push_back(p);
  }
  REQUIRE(sources.size() >= 2);
  auto& job = eng->start_job(JobKind::CachedPartition, sources);
  CHECK_THROWS_AS(eng->start_job(JobKind::CachedPartition, sources),
                  StateError);
  while (job.step(512) != JobState::Finalizing) {
  }
  job.finalize();
}

TEST_CASE("stats export carries the documented counters") {
  TempDir dir;
  auto eng = small_engine(dir);
  autocommit_put(*eng, "k", "v");
  auto s = eng->stats();
  for (const char* key :
       {"bytes_written", "bytes_read", "writes", "reads", "live_bytes",
        "partitions", "cached_partitions", "jobs_run", "records_merged",
        "records_dropped", "partitions_truncated", "commits", "max_pnr"}) {
    REQUIRE(s.count(key) == 1);
  }
  CHECK(s["commits"] == 1);
}

TEST_CASE("config map honors the documented keys") {
  std::map<std::string, std::string> kv = {
      {"cache_bytes", "1048576"},
      {"buffer_share_max", "0.5"},
      {"partition_cap_bytes", "65536"},
      {"bloom_bits_per_key", "12"},
      {"mode", "mvpbt-nocache-nogc"},
  };
  EngineConfig cfg = EngineConfig::from_map("/tmp/x", kv);
  CHECK(cfg.cache_bytes == 1048576);
  CHECK(cfg.buffer_share_max == doctest::Approx(0.5));
  CHECK(cfg.partition_cap_bytes == 65536);
  CHECK(cfg.bloom_bits_per_key == 12);
  CHECK(cfg.mode == EngineMode::MvpbtNoCacheNoGc);
}
