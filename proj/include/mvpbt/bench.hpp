#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvpbt/engine.hpp"

namespace mvpbt::bench {

enum class WorkloadName { Load, A, B, C, D, E };
enum class Distribution { Zipfian, Latest, Uniform };

WorkloadName parse_workload(const std::string& s);
EngineMode parse_mode(const std::string& s);

struct WorkloadSpec {
  WorkloadName name = WorkloadName::Load;
  std::uint64_t record_count = 1'000'000;
  std::uint64_t op_count = 1'000'000;
  std::size_t key_size = 13;
  std::size_t value_size = 16;
  Distribution distribution = Distribution::Zipfian;
  // Hash indices into the key space so loads and inserts scatter across the
  // whole tree instead of appending at the right edge.
  bool hashed_keys = true;
  double read_fraction = 0;
  double update_fraction = 0;
  double insert_fraction = 0;
  double scan_fraction = 0;
  std::uint32_t scan_len_max = 100;

  // The standard mixes: A 50/50 update-read, B 95/5, C read-only,
  // D 95 read-latest/5 insert, E 95 scan/5 insert.
  static WorkloadSpec standard(WorkloadName name, std::uint64_t records,
                               std::uint64_t ops, std::size_t value_size);
  void validate() const;
};

std::string key_for(std::uint64_t index, std::size_t key_size);
std::string key_for_hashed(std::uint64_t index, std::size_t key_size);
std::string spec_key(const WorkloadSpec& spec, std::uint64_t index);
std::string value_for(std::uint64_t index, std::uint64_t seed,
                      std::size_t value_size);

// YCSB-style zipfian over [0, items), constant 0.99, ranks scrambled by a
// hash so the hot set is spread across the key space.
class ZipfianGenerator {
 public:
  ZipfianGenerator(std::uint64_t items, double constant = 0.99);
  std::uint64_t next_rank(std::mt19937_64& rng);       // rank, 0 = hottest
  std::uint64_t next_scrambled(std::mt19937_64& rng);  // scrambled item
  std::uint64_t items() const { return items_; }
  double zetan() const { return zetan_; }

 private:
  std::uint64_t items_;
  double theta_;
  double zetan_;
  double zeta2_;
  double alpha_;
  double eta_;
};

struct Op {
  enum class Kind { Read, Update, Insert, Scan } kind = Kind::Read;
  std::uint64_t key_index = 0;
  std::uint32_t scan_len = 0;
};

// Deterministic operation stream; the insert frontier advances as inserts
// are generated, and latest-distribution reads skew toward it.
class OpGenerator {
 public:
  OpGenerator(const WorkloadSpec& spec, std::uint64_t seed);
  Op next();
  std::uint64_t frontier() const { return frontier_; }

 private:
  WorkloadSpec spec_;
  std::mt19937_64 rng_;
  ZipfianGenerator zipf_;
  std::uint64_t frontier_;
};

struct MetricsRow {
  double elapsed_s = 0;
  std::uint64_t ops_done = 0;
  std::uint64_t bytes_user = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t bytes_read = 0;
  std::uint64_t live_bytes = 0;
  std::uint64_t partitions = 0;
  std::uint64_t cached_partitions = 0;
  double write_amp = 0;
  double space_amp = 0;

  static const char* csv_header();
  std::string csv_line() const;
};

struct RunOptions {
  WorkloadSpec spec;
  std::uint64_t seed = 42;
  std::uint32_t intervals = 20;
  std::ostream* csv = nullptr;
  std::string trace_path;
  std::uint64_t time_limit_ms = 0;  // 0 = no limit
  std::uint64_t ops_per_txn = 1;
};

struct RunResult {
  std::vector<MetricsRow> rows;
  double elapsed_s = 0;
  std::uint64_t ops_done = 0;
  double throughput = 0;  // ops per second
  std::uint64_t bytes_user = 0;
  std::uint64_t bytes_written_delta = 0;
  std::uint64_t writes_delta = 0;
  std::uint64_t live_bytes_growth = 0;
  std::uint64_t inserts_done = 0;
};

// Drives one engine through a load or transactional phase and samples the
// metrics counters at fixed op intervals.
class Runner {
 public:
  explicit Runner(Engine& engine) : engine_(engine) {}

  // Loads record_count rows in key order and settles all flush work.
  RunResult load(const WorkloadSpec& spec, std::uint64_t seed,
                 std::ostream* csv = nullptr);
  RunResult run(const RunOptions& opts);

  // Flushes the mutable partition and finishes outstanding maintenance.
  void settle();
  std::uint64_t loaded_records() const { return loaded_records_; }

 private:
  MetricsRow sample(double elapsed_s, std::uint64_t ops_done,
                    std::uint64_t bytes_user,
                    std::uint64_t live_logical_bytes) const;

  Engine& engine_;
  std::uint64_t loaded_records_ = 0;
  std::uint64_t base_bytes_written_ = 0;
  std::uint64_t base_bytes_read_ = 0;
};

// Write events of a trace file as plottable (tick, offset) pairs.
std::vector<std::pair<std::uint64_t, std::uint64_t>> plot_trace(
    std::istream& in);
void plot_trace_csv(std::istream& in, std::ostream& out);

}  // namespace mvpbt::bench
