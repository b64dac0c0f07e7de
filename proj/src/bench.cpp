#include "mice/bench.hpp"
#include "mice/parallel.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <new>
#include <random>
#include <sstream>

#include <omp.h>

#include "json.hpp"

namespace mice {

namespace {

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t count, std::size_t vocab) {
  std::uniform_int_distribution<TokenId> dist(kFirstWordId, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> ids(count);
  for (auto& id : ids) id = dist(rng);
  return ids;
}

template <typename T>
BenchReport run_once(const Weights<T>& ce, const BenchConfig& cfg, std::size_t batch) {
  const ModelConfig& mc = ce.config;
  std::mt19937_64 rng(cfg.seed);
  const auto query = random_tokens(rng, cfg.n, mc.vocab);
  std::vector<std::vector<TokenId>> docs;
  for (std::size_t i = 0; i < batch; ++i) docs.push_back(random_tokens(rng, cfg.m, mc.vocab));

  std::optional<MiceModel<T>> mice;
  std::vector<DocState<T>> states;
  std::vector<const DocState<T>*> state_ptrs;
  if (cfg.mode != BenchMode::CrossEncoder) {
    mice.emplace(from_cross_encoder(ce, mc.first_interaction, mc.interaction_layers));
  }
  if (cfg.mode == BenchMode::MicePrecomp) {
    for (std::size_t i = 0; i < batch; ++i) {
      states.push_back(mice->encode_document("doc" + std::to_string(i), docs[i]));
    }
    for (const auto& s : states) state_ptrs.push_back(&s);
  }
  const MaskSpec spec = mask_spec_for(mc, MaskStep::Baseline);
  MaskCache cache;
  std::vector<T> scores(batch);

  auto run_batch = [&] {
    switch (cfg.mode) {
      case BenchMode::CrossEncoder:
        parallel_for(batch, [&](std::size_t u) { scores[u] = cross_encoder_forward(ce, query, docs[u], spec, &cache); });
        break;
      case BenchMode::Mice: {
        const Tensor<T> q = mice->encode_query(query);
        parallel_for(batch, [&](std::size_t u) { scores[u] = mice->score_encoded(q, mice->encode_document("", docs[u])); });
        break;
      }
      case BenchMode::MicePrecomp:
        scores = mice->score_batch(query, state_ptrs);
        break;
    }
  };

  for (std::size_t i = 0; i < cfg.warmup; ++i) run_batch();
  MemoryMeter::reset_peak();
  BenchReport r;
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_batch();
    const auto t1 = std::chrono::steady_clock::now();
    r.trial_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  r.peak_bytes = MemoryMeter::peak();
  double mean = 0;
  for (double t : r.trial_ms) mean += t;
  mean /= static_cast<double>(r.trial_ms.size());
  double var = 0;
  for (double t : r.trial_ms) var += (t - mean) * (t - mean);
  var /= static_cast<double>(r.trial_ms.size() > 1 ? r.trial_ms.size() - 1 : 1);
  r.latency_mean_ms = mean;
  r.latency_std_ms = std::sqrt(var);
  r.docs_per_s = mean > 0 ? static_cast<double>(batch) * 1000.0 / mean : 0.0;
  r.parameters = mice ? mice->weights().parameter_count() : ce.parameter_count();
  return r;
}

}  // namespace

template <typename T>
BenchReport bench_latency(const Weights<T>& ce, const BenchConfig& cfg) {
  const ModelConfig& mc = ce.config;
  mc.validate();
  if (cfg.n == 0 || cfg.m == 0) throw InputError("bench: n and m must be positive");
  if (cfg.n > mc.max_query || cfg.m > mc.max_doc) {
    throw ConfigError("bench: n=" + std::to_string(cfg.n) + ", m=" + std::to_string(cfg.m) +
                      " exceed the model limits " + std::to_string(mc.max_query) + "/" +
                      std::to_string(mc.max_doc));
  }
  if (cfg.batch == 0) throw ConfigError("bench: batch must be positive");
  BenchConfig effective = cfg;
  effective.trials = std::max<std::size_t>(cfg.trials, 10);
  effective.warmup = std::max<std::size_t>(cfg.warmup, 3);

  std::size_t batch = cfg.batch;
  for (;;) {
    try {
      BenchReport r = run_once(ce, effective, batch);
      r.mode = mode_name(cfg.mode);
      r.precision = sizeof(T) == 4 ? "f32" : "f64";
      r.batch = batch;
      r.n = cfg.n;
      r.m = cfg.m;
      r.trials = effective.trials;
      r.warmup = effective.warmup;
      r.threads = omp_get_max_threads();
      r.flops = count_flops(mc, cfg.n, cfg.m, cfg.mode);
      return r;
    } catch (const std::bad_alloc&) {
      if (batch == 1) throw;
      std::cerr << "warning: bench " << mode_name(cfg.mode) << " ran out of memory at batch " << batch
                << ", retrying with " << batch / 2 << "\n";
      batch /= 2;
    }
  }
}

std::string bench_csv_header() {
  return "mode,precision,batch,n,m,trials,warmup,threads,latency_mean_ms,latency_std_ms,docs_per_s,"
         "peak_bytes,flops,parameters";
}

std::string bench_csv_row(const BenchReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << r.mode << ',' << r.precision << ',' << r.batch << ',' << r.n << ',' << r.m << ',' << r.trials
      << ',' << r.warmup << ',' << r.threads << ',' << r.latency_mean_ms << ',' << r.latency_std_ms << ','
      << r.docs_per_s << ',' << r.peak_bytes << ',' << r.flops << ',' << r.parameters;
  return out.str();
}

std::string bench_json(const BenchReport& r) {
  nlohmann::json j{{"mode", r.mode},
                   {"precision", r.precision},
                   {"batch", r.batch},
                   {"n", r.n},
                   {"m", r.m},
                   {"trials", r.trials},
                   {"warmup", r.warmup},
                   {"threads", r.threads},
                   {"latency_mean_ms", r.latency_mean_ms},
                   {"latency_std_ms", r.latency_std_ms},
                   {"docs_per_s", r.docs_per_s},
                   {"peak_bytes", r.peak_bytes},
                   {"flops", r.flops},
                   {"parameters", r.parameters},
                   {"trial_ms", r.trial_ms}};
  return j.dump();
}

void write_bench_reports(const std::filesystem::path& path, const std::vector<BenchReport>& reports) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  if (path.extension() == ".csv") {
    out << bench_csv_header() << '\n';
    for (const auto& r : reports) out << bench_csv_row(r) << '\n';
  } else {
    for (const auto& r : reports) out << bench_json(r) << '\n';
  }
}

template BenchReport bench_latency(const Weights<float>&, const BenchConfig&);
template BenchReport bench_latency(const Weights<double>&, const BenchConfig&);

}  // namespace mice
