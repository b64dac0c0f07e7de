#pragma once

// Wall-clock latency and memory harness for the three inference modes.

#include <filesystem>
#include <string>
#include <vector>

#include "mice/doccache.hpp"
#include "mice/flops.hpp"

namespace mice {

struct BenchConfig {
  BenchMode mode = BenchMode::CrossEncoder;
  std::size_t batch = 8;
  std::size_t n = 16;
  std::size_t m = 128;
  std::size_t trials = 10;
  std::size_t warmup = 3;
  std::uint64_t seed = 1;
};

struct BenchReport {
  std::string mode;
  std::string precision;
  std::size_t batch = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t trials = 0;
  std::size_t warmup = 0;
  int threads = 1;
  /// Latency of scoring one batch (one query against `batch` documents).
  double latency_mean_ms = 0;
  double latency_std_ms = 0;
  double docs_per_s = 0;
  /// High-water mark of tensor allocations during the timed trials,
  /// including resident weights and precomputed states.
  std::size_t peak_bytes = 0;
  /// Analytic FLOPs per (query, document) pair; equals count_flops().
  std::uint64_t flops = 0;
  std::size_t parameters = 0;
  std::vector<double> trial_ms;
};

/// Times `trials` batches after `warmup` untimed ones. The query and
/// documents are random token ids of exactly n and m tokens.
/// CE runs the full model under the baseline mask; MICE encodes the query
/// once per batch and every document; MICE-precomp scores documents whose
/// states were encoded before timing. ℓ* and k come from the weights'
/// config. When a trial runs out of memory the batch is halved (with a
/// warning on stderr) and the harness restarts; the report holds the batch
/// actually used. At least 3 warmup and 10 timed trials are enforced.
template <typename T>
BenchReport bench_latency(const Weights<T>& ce, const BenchConfig& cfg);

std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& r);
std::string bench_json(const BenchReport& r);
/// CSV when the extension is .csv, JSON lines otherwise.
void write_bench_reports(const std::filesystem::path& path, const std::vector<BenchReport>& reports);

}  // namespace mice
