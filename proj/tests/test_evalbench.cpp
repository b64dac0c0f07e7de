#include <gtest/gtest.h>

#include <cmath>

#include "mice/bench.hpp"
#include "mice/flops.hpp"
#include "mice/metrics.hpp"
#include "oracles.hpp"

using namespace mice;

namespace {

RankedList ranking(std::initializer_list<const char*> docs) {
  RankedList r{"q", {}};
  double s = static_cast<double>(docs.size());
  for (const char* d : docs) r.items.push_back({d, s--});
  return r;
}

// Spreadsheet-style count: one line per matrix product or elementwise pass.
std::uint64_t layer_oracle(std::uint64_t t, std::uint64_t s, std::uint64_t d, std::uint64_t h, std::uint64_t f) {
  std::uint64_t total = 0;
  total += 2 * t * d * d;  // Q projection
  total += 2 * s * d * d;  // K projection
  total += 2 * s * d * d;  // V projection
  total += 2 * t * s * d;  // scores
  total += 3 * h * t * s;  // softmax
  total += 2 * t * s * d;  // weighted values
  total += 2 * t * d * d;  // output projection
  total += 5 * t * d;      // attention layer norm
  total += 2 * t * d * f;  // FFN up
  total += 2 * t * f * d;  // FFN down
  total += 5 * t * d;      // FFN layer norm
  return total;
}

std::uint64_t mode_oracle(const ModelConfig& c, std::uint64_t n, std::uint64_t m, const std::string& mode) {
  const std::uint64_t d = c.hidden, h = c.heads, f = c.ffn, joint = n + m + 3;
  if (mode == "ce") return c.layers * layer_oracle(joint, joint, d, h, f);
  std::uint64_t total = c.first_interaction * layer_oracle(n + 2, n + 2, d, h, f);
  if (mode == "mice") total += c.first_interaction * layer_oracle(m + 1, m + 1, d, h, f);
  total += c.interaction_layers * layer_oracle(n + 2, joint, d, h, f);
  return total;
}

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.layers = 4;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.vocab = 30;
  cfg.max_query = 8;
  cfg.max_doc = 32;
  cfg.first_interaction = 2;
  cfg.interaction_layers = 1;
  return cfg;
}

}  // namespace

TEST(Metrics, PerfectRankingIsOne) {
  const std::map<std::string, int> rels{{"a", 2}, {"b", 1}};
  EXPECT_DOUBLE_EQ(ndcg_at_k(ranking({"a", "b", "c"}), rels, 10), 1.0);
  EXPECT_DOUBLE_EQ(rr_at_k(ranking({"a", "b", "c"}), rels, 10), 1.0);
}

TEST(Metrics, NothingRelevantRetrievedIsZero) {
  const std::map<std::string, int> rels{{"z", 1}};
  EXPECT_EQ(ndcg_at_k(ranking({"a", "b"}), rels, 10), 0.0);
  EXPECT_EQ(rr_at_k(ranking({"a", "b"}), rels, 10), 0.0);
  EXPECT_EQ(ndcg_at_k(ranking({"a"}), {}, 10), 0.0);
  EXPECT_EQ(ndcg_at_k(ranking({"a"}), {{"a", 0}}, 10), 0.0);
}

TEST(Metrics, GradedHandValues) {
  const std::map<std::string, int> rels{{"A", 1}, {"B", 2}};
  EXPECT_NEAR(ndcg_at_k(ranking({"B", "A"}), rels, 2), 1.0, 1e-15);
  const double want = (3 / std::log2(3.0) + 1) / (3 + 1 / std::log2(3.0));
  EXPECT_NEAR(ndcg_at_k(ranking({"A", "B"}), rels, 2), want, 1e-15);
}

TEST(Metrics, CutoffAndReciprocalRank) {
  const std::map<std::string, int> rels{{"c", 1}, {"e", 3}};
  const auto r = ranking({"a", "b", "c", "d", "e"});
  EXPECT_DOUBLE_EQ(rr_at_k(r, rels, 10), 1.0 / 3);
  EXPECT_EQ(rr_at_k(r, rels, 2), 0.0);
  const double ideal = oracle::dcg({3, 1});
  EXPECT_NEAR(ndcg_at_k(r, rels, 10), oracle::dcg({0, 0, 1, 0, 3}) / ideal, 1e-15);
  EXPECT_NEAR(ndcg_at_k(r, rels, 3), oracle::dcg({0, 0, 1}) / ideal, 1e-15);
  EXPECT_THROW(ndcg_at_k(ranking({"a", "a"}), rels, 10), InputError);
}

TEST(Metrics, SpecParsing) {
  EXPECT_EQ(MetricSpec::parse("ndcg@10").kind, MetricKind::Ndcg);
  EXPECT_EQ(MetricSpec::parse("mrr@5").k, 5u);
  EXPECT_EQ(MetricSpec::parse("rr@10").name(), "rr@10");
  EXPECT_THROW(MetricSpec::parse("map@10"), UsageError);
  EXPECT_THROW(MetricSpec::parse("ndcg@0"), UsageError);
}

TEST(Metrics, EvaluateAveragesJudgedQueries) {
  const Qrels qrels{{"q1", {{"a", 1}}}, {"q2", {{"b", 1}}}, {"q3", {{"c", 1}}}};
  std::vector<RankedList> runs{{"q1", {{"a", 2}, {"x", 1}}}, {"q2", {{"x", 2}, {"b", 1}}}, {"q9", {{"a", 1}}}};
  const auto rep = evaluate(runs, qrels, MetricSpec::parse("rr@10"));
  EXPECT_NEAR(rep.mean, (1.0 + 0.5 + 0.0) / 3, 1e-15);
  EXPECT_EQ(rep.per_query.at("q3"), 0.0);
  EXPECT_EQ(rep.unjudged, std::vector<std::string>{"q9"});
}

TEST(Flops, TermByTermOracleOnMiniLm) {
  const auto cfg = ModelConfig::minilm_like();
  for (const std::string mode : {"ce", "mice", "mice-precomp"}) {
    EXPECT_EQ(count_flops(cfg, 16, 512, parse_mode(mode)), mode_oracle(cfg, 16, 512, mode)) << mode;
  }
  const auto one = layer_flops(cfg, 531, 531);
  EXPECT_EQ(one.total(), layer_oracle(531, 531, 384, 12, 1536));
  EXPECT_EQ(one.softmax, 3ull * 12 * 531 * 531);
}

TEST(Flops, MiniLmRatios) {
  const auto cfg = ModelConfig::minilm_like();
  const double ce = static_cast<double>(count_flops(cfg, 16, 512, BenchMode::CrossEncoder));
  EXPECT_GE(ce / count_flops(cfg, 16, 512, BenchMode::MicePrecomp), 4.0);
  EXPECT_GE(ce / count_flops(cfg, 16, 512, BenchMode::Mice), 2.0);
}

TEST(Flops, ModesAreStrictlyOrdered) {
  auto cfg = ModelConfig::minilm_like();
  for (std::size_t ell = 1; ell < cfg.layers; ++ell) {
    for (std::size_t k = 1; ell + k < cfg.layers; ++k) {
      cfg.first_interaction = ell;
      cfg.interaction_layers = k;
      for (auto [n, m] : {std::pair{1, 1}, std::pair{1, 50}, std::pair{8, 8}, std::pair{32, 512}}) {
        const auto ce = count_flops(cfg, n, m, BenchMode::CrossEncoder);
        const auto mi = count_flops(cfg, n, m, BenchMode::Mice);
        const auto pre = count_flops(cfg, n, m, BenchMode::MicePrecomp);
        EXPECT_LT(pre, mi) << ell << " " << k << " " << n << " " << m;
        EXPECT_LT(mi, ce) << ell << " " << k << " " << n << " " << m;
      }
    }
  }
}

TEST(Flops, RejectsEmptyInputsAndUnknownModes) {
  const auto cfg = ModelConfig::minilm_like();
  EXPECT_THROW(count_flops(cfg, 0, 5, BenchMode::Mice), InputError);
  EXPECT_THROW(parse_mode("fast"), UsageError);
  EXPECT_EQ(mode_name(parse_mode("mice-precomp")), "mice-precomp");
}

TEST(Bench, ReportMatchesFlopModelAndEnforcesMinimums) {
  const auto w = Weights<float>::init(bench_config(), 1);
  BenchConfig bc;
  bc.batch = 4;
  bc.n = 4;
  bc.m = 16;
  bc.trials = 2;
  bc.warmup = 0;
  for (auto mode : {BenchMode::CrossEncoder, BenchMode::Mice, BenchMode::MicePrecomp}) {
    bc.mode = mode;
    const auto r = bench_latency(w, bc);
    EXPECT_EQ(r.flops, count_flops(w.config, 4, 16, mode));
    EXPECT_EQ(r.trials, 10u);
    EXPECT_EQ(r.warmup, 3u);
    EXPECT_EQ(r.trial_ms.size(), 10u);
    EXPECT_EQ(r.batch, 4u);
    EXPECT_GT(r.peak_bytes, 0u);
    EXPECT_GT(r.docs_per_s, 0.0);
    EXPECT_EQ(r.mode, mode_name(mode));
  }
}

TEST(Bench, RepeatedRunsAreStable) {
  const auto w = Weights<float>::init(bench_config(), 2);
  BenchConfig bc;
  bc.batch = 8;
  bc.n = 6;
  bc.m = 24;
  const auto a = bench_latency(w, bc);
  const auto b = bench_latency(w, bc);
  // Slack for scheduler noise on a shared machine.
  const double slack = 3 * (a.latency_std_ms + b.latency_std_ms) + 0.25 * std::max(a.latency_mean_ms, b.latency_mean_ms);
  EXPECT_LE(std::abs(a.latency_mean_ms - b.latency_mean_ms), slack);
}

TEST(Bench, RejectsOversizedInputs) {
  const auto w = Weights<float>::init(bench_config(), 3);
  BenchConfig bc;
  bc.m = 64;
  EXPECT_THROW(bench_latency(w, bc), ConfigError);
  bc.m = 8;
  bc.batch = 0;
  EXPECT_THROW(bench_latency(w, bc), ConfigError);
}

TEST(Bench, CsvAndJsonRows) {
  BenchReport r;
  r.mode = "ce";
  r.precision = "f32";
  r.batch = 8;
  r.flops = 123;
  const auto header = bench_csv_header();
  const auto row = bench_csv_row(r);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(row.rfind("ce,", 0), 0u);
  EXPECT_NE(bench_json(r).find("\"flops\":123"), std::string::npos);
}
