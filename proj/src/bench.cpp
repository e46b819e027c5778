#include "mvpbt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "mvpbt/errors.hpp"

namespace mvpbt::bench {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

WorkloadName parse_workload(const std::string& s) {
  if (s == "load") return WorkloadName::Load;
  if (s == "A" || s == "a") return WorkloadName::A;
  if (s == "B" || s == "b") return WorkloadName::B;
  if (s == "C" || s == "c") return WorkloadName::C;
  if (s == "D" || s == "d") return WorkloadName::D;
  if (s == "E" || s == "e") return WorkloadName::E;
  throw std::invalid_argument("unknown workload " + s);
}

EngineMode parse_mode(const std::string& s) {
  if (s == "mvpbt") return EngineMode::Mvpbt;
  if (s == "mvpbt-nocache-nogc") return EngineMode::MvpbtNoCacheNoGc;
  if (s == "btree-baseline") return EngineMode::BtreeBaseline;
  throw std::invalid_argument("unknown mode " + s);
}

WorkloadSpec WorkloadSpec::standard(WorkloadName name, std::uint64_t records,
                                    std::uint64_t ops,
                                    std::size_t value_size) {
  WorkloadSpec s;
  s.name = name;
  s.record_count = records;
  s.op_count = ops;
  s.value_size = value_size;
  switch (name) {
    case WorkloadName::Load:
      s.insert_fraction = 1.0;
      s.distribution = Distribution::Uniform;
      break;
    case WorkloadName::A:
      s.read_fraction = 0.5;
      s.update_fraction = 0.5;
      break;
    case WorkloadName::B:
      s.read_fraction = 0.95;
      s.update_fraction = 0.05;
      break;
    case WorkloadName::C:
      s.read_fraction = 1.0;
      break;
    case WorkloadName::D:
      s.read_fraction = 0.95;
      s.insert_fraction = 0.05;
      s.distribution = Distribution::Latest;
      break;
    case WorkloadName::E:
      s.scan_fraction = 0.95;
      s.insert_fraction = 0.05;
      break;
  }
  s.validate();
  return s;
}

void WorkloadSpec::validate() const {
  double sum =
      read_fraction + update_fraction + insert_fraction + scan_fraction;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("workload fractions must sum to 1");
  }
  if (key_size < 8 || key_size > 32) {
    throw std::invalid_argument("key size out of range");
  }
}

std::string key_for(std::uint64_t index, std::size_t key_size) {
  char buf[40];
  int width = static_cast<int>(key_size) - 1;
  std::snprintf(buf, sizeof buf, "u%0*llu", width,
                static_cast<unsigned long long>(index));
  return std::string(buf, key_size);
}

std::string key_for_hashed(std::uint64_t index, std::size_t key_size) {
  std::uint64_t span = 1;
  for (std::size_t i = 1; i < key_size && i < 19; ++i) span *= 10;
  return key_for(splitmix64(index) % span, key_size);
}

std::string spec_key(const WorkloadSpec& spec, std::uint64_t index) {
  return spec.hashed_keys ? key_for_hashed(index, spec.key_size)
                          : key_for(index, spec.key_size);
}

std::string value_for(std::uint64_t index, std::uint64_t seed,
                      std::size_t value_size) {
  std::string v(value_size, '\0');
  std::uint64_t state = splitmix64(seed ^ (index * 0x9E3779B97F4A7C15ull));
  for (std::size_t i = 0; i < value_size; ++i) {
    if (i % 8 == 0) state = splitmix64(state);
    v[i] = static_cast<char>('a' + ((state >> ((i % 8) * 8)) & 0x0F));
  }
  return v;
}

ZipfianGenerator::ZipfianGenerator(std::uint64_t items, double constant)
    : items_(items), theta_(constant) {
  if (items_ == 0) items_ = 1;
  zetan_ = 0;
  for (std::uint64_t i = 1; i <= items_; ++i) {
    zetan_ += 1.0 / std::pow(static_cast<double>(i), theta_);
  }
  zeta2_ = 1.0 + 1.0 / std::pow(2.0, theta_);
  alpha_ = 1.0 / (1.0 - theta_);
  eta_ = (1.0 - std::pow(2.0 / static_cast<double>(items_), 1.0 - theta_)) /
         (1.0 - zeta2_ / zetan_);
}

std::uint64_t ZipfianGenerator::next_rank(std::mt19937_64& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double uz = u * zetan_;
  if (uz < 1.0) return 0;
  if (uz < zeta2_) return 1;
  auto rank = static_cast<std::uint64_t>(
      static_cast<double>(items_) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
  return rank >= items_ ? items_ - 1 : rank;
}

std::uint64_t ZipfianGenerator::next_scrambled(std::mt19937_64& rng) {
  return splitmix64(next_rank(rng)) % items_;
}

OpGenerator::OpGenerator(const WorkloadSpec& spec, std::uint64_t seed)
    : spec_(spec), rng_(seed), zipf_(spec.record_count),
      frontier_(spec.record_count) {
  spec_.validate();
}

Op OpGenerator::next() {
  Op op;
  double dice = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  double acc = spec_.read_fraction;
  if (dice < acc) {
    op.kind = Op::Kind::Read;
  } else if (dice < (acc += spec_.update_fraction)) {
    op.kind = Op::Kind::Update;
  } else if (dice < (acc += spec_.insert_fraction)) {
    op.kind = Op::Kind::Insert;
  } else {
    op.kind = Op::Kind::Scan;
  }
  switch (op.kind) {
    case Op::Kind::Insert:
      op.key_index = frontier_++;
      return op;
    case Op::Kind::Read:
    case Op::Kind::Update:
    case Op::Kind::Scan:
      break;
  }
  switch (spec_.distribution) {
    case Distribution::Uniform:
      op.key_index = rng_() % frontier_;
      break;
    case Distribution::Zipfian:
      op.key_index = zipf_.next_scrambled(rng_) % frontier_;
      break;
    case Distribution::Latest: {
      std::uint64_t back = zipf_.next_rank(rng_) % frontier_;
      op.key_index = frontier_ - 1 - back;
      break;
    }
  }
  if (op.kind == Op::Kind::Scan) {
    op.scan_len = 1 + static_cast<std::uint32_t>(rng_() % spec_.scan_len_max);
  }
  return op;
}

const char* MetricsRow::csv_header() {
  return "elapsed_s,ops_done,bytes_user,bytes_written,bytes_read,live_bytes,"
         "partitions,cached_partitions,write_amp,space_amp";
}

std::string MetricsRow::csv_line() const {
  std::ostringstream o;
  o << elapsed_s << ',' << ops_done << ',' << bytes_user << ','
    << bytes_written << ',' << bytes_read << ',' << live_bytes << ','
    << partitions << ',' << cached_partitions << ',' << write_amp << ','
    << space_amp;
  return o.str();
}

MetricsRow Runner::sample(double elapsed_s, std::uint64_t ops_done,
                          std::uint64_t bytes_user,
                          std::uint64_t live_logical_bytes) const {
  auto stats = engine_.stats();
  MetricsRow row;
  row.elapsed_s = elapsed_s;
  row.ops_done = ops_done;
  row.bytes_user = bytes_user;
  // Byte counters are relative to the current phase.
  row.bytes_written = stats.at("bytes_written") - base_bytes_written_;
  row.bytes_read = stats.at("bytes_read") - base_bytes_read_;
  row.live_bytes = stats.at("live_bytes");
  row.partitions = stats.at("partitions");
  row.cached_partitions = stats.at("cached_partitions");
  row.write_amp = bytes_user == 0
                      ? 0.0
                      : static_cast<double>(row.bytes_written) /
                            static_cast<double>(bytes_user);
  row.space_amp = live_logical_bytes == 0
                      ? 0.0
                      : static_cast<double>(row.live_bytes) /
                            static_cast<double>(live_logical_bytes);
  return row;
}

void Runner::settle() { engine_.flush_all(); }

RunResult Runner::load(const WorkloadSpec& spec, std::uint64_t seed,
                       std::ostream* csv) {
  RunResult result;
  {
    auto base = engine_.stats();
    base_bytes_written_ = base.at("bytes_written");
    base_bytes_read_ = base.at("bytes_read");
  }
  double t0 = now_s();
  std::uint64_t bytes_user = 0;
  if (csv) *csv << MetricsRow::csv_header() << '\n';
  if (engine_.mode() == EngineMode::BtreeBaseline) {
    std::vector<std::pair<std::string, std::string>> rows;
    rows.reserve(spec.record_count);
    for (std::uint64_t i = 0; i < spec.record_count; ++i) {
      rows.emplace_back(spec_key(spec, i), value_for(i, seed, spec.value_size));
      bytes_user += spec.key_size + spec.value_size;
    }
    std::sort(rows.begin(), rows.end());
    engine_.baseline().bulk_load(rows, 1);
  } else {
    const std::uint64_t batch = 1000;
    std::uint64_t i = 0;
    while (i < spec.record_count) {
      auto tx = engine_.begin();
      for (std::uint64_t j = 0; j < batch && i < spec.record_count; ++j, ++i) {
        engine_.put(tx, spec_key(spec, i),
                    value_for(i, seed, spec.value_size));
        bytes_user += spec.key_size + spec.value_size;
      }
      engine_.commit(tx);
    }
  }
  settle();
  loaded_records_ = spec.record_count;
  result.elapsed_s = now_s() - t0;
  result.ops_done = spec.record_count;
  result.bytes_user = bytes_user;
  result.throughput = result.elapsed_s > 0
                          ? static_cast<double>(result.ops_done) / result.elapsed_s
                          : 0;
  std::uint64_t live_logical =
      spec.record_count * (spec.key_size + spec.value_size);
  MetricsRow row = sample(result.elapsed_s, result.ops_done, bytes_user,
                          live_logical);
  if (csv) *csv << row.csv_line() << '\n';
  result.rows.push_back(row);
  return result;
}

RunResult Runner::run(const RunOptions& opts) {
  const WorkloadSpec& spec = opts.spec;
  spec.validate();
  RunResult result;
  OpGenerator gen(spec, opts.seed);
  auto base = engine_.stats();
  std::uint64_t base_written = base.at("bytes_written");
  std::uint64_t base_writes = base.at("writes");
  std::uint64_t base_live = base.at("live_bytes");
  base_bytes_written_ = base_written;
  base_bytes_read_ = base.at("bytes_read");

  if (opts.csv) *opts.csv << MetricsRow::csv_header() << '\n';
  double t0 = now_s();
  std::uint64_t bytes_user = 0;
  std::uint64_t done = 0;
  std::uint64_t inserts = 0;
  std::uint64_t interval =
      std::max<std::uint64_t>(1, spec.op_count / std::max(1u, opts.intervals));
  std::string high_sentinel = "v";  // all generated keys start with 'u'

  while (done < spec.op_count) {
    if (opts.time_limit_ms != 0 &&
        (now_s() - t0) * 1000.0 >= static_cast<double>(opts.time_limit_ms)) {
      break;
    }
    auto tx = engine_.begin();
    for (std::uint64_t j = 0; j < opts.ops_per_txn && done < spec.op_count;
         ++j) {
      Op op = gen.next();
      switch (op.kind) {
        case Op::Kind::Read: {
          (void)engine_.get(tx, spec_key(spec, op.key_index));
          break;
        }
        case Op::Kind::Update: {
          engine_.put(tx, spec_key(spec, op.key_index),
                      value_for(op.key_index ^ done, opts.seed, spec.value_size));
          bytes_user += spec.key_size + spec.value_size;
          break;
        }
        case Op::Kind::Insert: {
          engine_.put(tx, spec_key(spec, op.key_index),
                      value_for(op.key_index, opts.seed, spec.value_size));
          bytes_user += spec.key_size + spec.value_size;
          ++inserts;
          break;
        }
        case Op::Kind::Scan: {
          auto cur = engine_.scan(tx, spec_key(spec, op.key_index),
                                  high_sentinel);
          for (std::uint32_t k = 0; k < op.scan_len; ++k) {
            if (!cur.next()) break;
          }
          break;
        }
      }
      ++done;
    }
    engine_.commit(tx);
    if (done % interval < opts.ops_per_txn) {
      std::uint64_t live_logical =
          (loaded_records_ + inserts) * (spec.key_size + spec.value_size);
      MetricsRow row =
          sample(now_s() - t0, done, bytes_user, live_logical);
      if (opts.csv) *opts.csv << row.csv_line() << '\n';
      result.rows.push_back(row);
    }
  }
  settle();
  result.elapsed_s = now_s() - t0;
  result.ops_done = done;
  result.bytes_user = bytes_user;
  result.inserts_done = inserts;
  result.throughput = result.elapsed_s > 0
                          ? static_cast<double>(done) / result.elapsed_s
                          : 0;
  std::uint64_t live_logical =
      (loaded_records_ + inserts) * (spec.key_size + spec.value_size);
  MetricsRow final_row =
      sample(result.elapsed_s, done, bytes_user, live_logical);
  if (opts.csv) *opts.csv << final_row.csv_line() << '\n';
  result.rows.push_back(final_row);
  auto stats = engine_.stats();
  result.bytes_written_delta = stats.at("bytes_written") - base_written;
  result.writes_delta = stats.at("writes") - base_writes;
  std::uint64_t live_now = stats.at("live_bytes");
  result.live_bytes_growth = live_now > base_live ? live_now - base_live : 0;
  if (!opts.trace_path.empty()) {
    engine_.store().dump_trace_csv(opts.trace_path);
  }
  return result;
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> plot_trace(
    std::istream& in) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("tick,", 0) == 0) continue;  // header
    std::uint64_t tick = 0, offset = 0, length = 0;
    char op = 0;
    int matched = std::sscanf(line.c_str(), "%llu,%c,%llu,%llu",
                              reinterpret_cast<unsigned long long*>(&tick), &op,
                              reinterpret_cast<unsigned long long*>(&offset),
                              reinterpret_cast<unsigned long long*>(&length));
    if (matched != 4 || (op != 'R' && op != 'W')) {
      throw EngineError("malformed trace line " + std::to_string(line_no) +
                        ": " + line);
    }
    if (op == 'W') out.emplace_back(tick, offset);
  }
  return out;
}

void plot_trace_csv(std::istream& in, std::ostream& out) {
  out << "tick,offset\n";
  for (const auto& [tick, offset] : plot_trace(in)) {
    out << tick << ',' << offset << '\n';
  }
}

}  // namespace mvpbt::bench
