#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mvpbt/bench.hpp"
#include "mvpbt/engine.hpp"

using namespace mvpbt;

int main(int argc, char** argv) {
  CLI::App app{"Workload harness for the multi-version partitioned tree engine"};
  app.name("bench");

  std::string mode_str = "mvpbt";
  std::string workload_str = "A";
  std::uint64_t records = 1'000'000;
  std::uint64_t ops = 1'000'000;
  std::size_t value_size = 16;
  std::size_t key_size = 13;
  std::uint64_t seed = 42;
  std::uint64_t cache_bytes = 10ull << 20;
  std::uint64_t partition_cap = 2ull << 20;
  std::uint32_t gc_every = 40;
  std::uint32_t cached_every = 8;
  std::string csv_path;
  std::string trace_path;
  std::string db_path;
  std::size_t page_size = 16 * 1024;
  std::uint64_t time_limit_s = 0;
  std::uint64_t ops_per_txn = 1;
  std::uint32_t intervals = 20;
  std::uint32_t read_latency_us = 0;
  std::uint32_t write_latency_us = 0;
  bool keep_db = false;

  app.add_option("--mode", mode_str,
                 "mvpbt | mvpbt-nocache-nogc | btree-baseline")
      ->default_val("mvpbt");
  app.add_option("--workload", workload_str, "load | A | B | C | D | E")
      ->default_val("A");
  app.add_option("--records", records, "rows in the load phase");
  app.add_option("--ops", ops, "operations in the transactional phase");
  app.add_option("--value-size", value_size, "value bytes per record");
  app.add_option("--key-size", key_size, "key bytes per record");
  app.add_option("--seed", seed, "rng seed for the operation stream");
  app.add_option("--cache-bytes", cache_bytes, "cache capacity in bytes");
  app.add_option("--partition-cap", partition_cap,
                 "mutable partition size cap in bytes");
  app.add_option("--gc-every", gc_every,
                 "garbage collection cadence in partitions");
  app.add_option("--cached-every", cached_every,
                 "cached partition cadence in partitions");
  app.add_option("--csv", csv_path, "metrics CSV output path (default stdout)");
  app.add_option("--trace", trace_path, "store I/O trace CSV output path");
  app.add_option("--db", db_path, "store file path (default: temp file)");
  app.add_option("--page-size", page_size, "disk page size in bytes");
  app.add_option("--time-limit-s", time_limit_s,
                 "stop the transactional phase after this many seconds");
  app.add_option("--batch", ops_per_txn, "operations per transaction");
  app.add_option("--intervals", intervals, "metric rows per run");
  app.add_option("--read-latency-us", read_latency_us,
                 "simulated device read latency per page");
  app.add_option("--write-latency-us", write_latency_us,
                 "simulated device write latency per page");
  app.add_flag("--keep", keep_db, "keep the store file on exit");

  auto* plot = app.add_subcommand("plot-trace",
                                  "extract write events of a trace as tick,offset CSV");
  std::string plot_in, plot_out;
  plot->add_option("trace", plot_in, "trace CSV file")->required();
  plot->add_option("--out", plot_out, "output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*plot) {
      std::ifstream in(plot_in);
      if (!in) {
        std::cerr << "cannot open trace file " << plot_in << "\n";
        return 1;
      }
      if (plot_out.empty()) {
        bench::plot_trace_csv(in, std::cout);
      } else {
        std::ofstream out(plot_out, std::ios::trunc);
        bench::plot_trace_csv(in, out);
      }
      return 0;
    }

    EngineConfig cfg;
    bool temp_db = db_path.empty();
    if (temp_db) {
      db_path = (std::filesystem::temp_directory_path() /
                 ("bench_" + std::to_string(::getpid()) + ".db"))
                    .string();
    }
    cfg.path = db_path;
    cfg.mode = bench::parse_mode(mode_str);
    cfg.cache_bytes = cache_bytes;
    cfg.partition_cap_bytes = partition_cap;
    cfg.page_size = page_size;
    cfg.gc_every = gc_every;
    cfg.cached_every = cached_every;
    cfg.background_maintenance = true;
    cfg.read_latency_us = read_latency_us;
    cfg.write_latency_us = write_latency_us;

    auto engine = Engine::open(cfg);
    bench::Runner runner(*engine);

    std::ofstream csv_file;
    std::ostream* csv = &std::cout;
    if (!csv_path.empty()) {
      csv_file.open(csv_path, std::ios::trunc);
      if (!csv_file) {
        std::cerr << "cannot open csv file " << csv_path << "\n";
        return 1;
      }
      csv = &csv_file;
    }

    bench::WorkloadName name = bench::parse_workload(workload_str);
    bench::WorkloadSpec load_spec = bench::WorkloadSpec::standard(
        bench::WorkloadName::Load, records, records, value_size);
    load_spec.key_size = key_size;

    if (name == bench::WorkloadName::Load) {
      auto res = runner.load(load_spec, seed, csv);
      std::cerr << "load: " << res.ops_done << " rows in " << res.elapsed_s
                << " s (" << res.throughput << " ops/s)\n";
    } else {
      auto lres = runner.load(load_spec, seed, nullptr);
      std::cerr << "load: " << lres.ops_done << " rows in " << lres.elapsed_s
                << " s\n";
      bench::RunOptions opts;
      opts.spec = bench::WorkloadSpec::standard(name, records, ops, value_size);
      opts.spec.key_size = key_size;
      opts.seed = seed;
      opts.intervals = intervals;
      opts.csv = csv;
      opts.trace_path = trace_path;
      opts.time_limit_ms = time_limit_s * 1000;
      opts.ops_per_txn = ops_per_txn;
      auto res = runner.run(opts);
      std::cerr << "run: " << res.ops_done << " ops in " << res.elapsed_s
                << " s (" << res.throughput << " ops/s), "
                << res.bytes_written_delta << " bytes written\n";
    }
    engine->close();
    if (temp_db && !keep_db) {
      std::error_code ec;
      std::filesystem::remove(db_path, ec);
      std::filesystem::remove(db_path + ".meta", ec);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
