#include "mice/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>

#include <omp.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mice/bench.hpp"
#include "mice/metrics.hpp"
#include "mice/parallel.hpp"
#include "mice/scorers.hpp"
#include "mice/sweep.hpp"
#include "mice/training.hpp"

namespace mice {

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string precision = "f32";
  int threads = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--precision", c.precision, "Compute precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker threads (0 = runtime default; env MICE_THREADS)");
  auto* out = cmd->add_option("--out", c.out, "Machine-readable output path");
  if (out_required) out->required();
}

/// Calls f.template operator()<T>() with T chosen by the precision flag.
template <typename F>
void with_precision(const std::string& precision, F&& f) {
  if (precision == "f64") {
    f.template operator()<double>();
  } else {
    f.template operator()<float>();
  }
}

struct ModelShape {
  std::size_t layers = 3;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t max_query = 16;
  std::size_t max_doc = 64;
};

void add_shape(CLI::App* cmd, ModelShape& s) {
  cmd->add_option("--layers", s.layers, "Encoder layers of a fresh model")->capture_default_str();
  cmd->add_option("--hidden", s.hidden, "Hidden size of a fresh model")->capture_default_str();
  cmd->add_option("--heads", s.heads, "Attention heads of a fresh model")->capture_default_str();
  cmd->add_option("--ffn", s.ffn, "Feed-forward size of a fresh model")->capture_default_str();
  cmd->add_option("--max-query", s.max_query, "Query token limit")->capture_default_str();
  cmd->add_option("--max-doc", s.max_doc, "Document token limit")->capture_default_str();
}

ModelConfig make_config(const ModelShape& s, std::size_t vocab, std::size_t ell_star, std::size_t k_inter) {
  ModelConfig c;
  c.layers = s.layers;
  c.hidden = s.hidden;
  c.heads = s.heads;
  c.ffn = s.ffn;
  c.vocab = vocab;
  c.max_query = s.max_query;
  c.max_doc = s.max_doc;
  c.first_interaction = ell_star;
  c.interaction_layers = k_inter;
  c.validate();
  return c;
}

template <typename T>
Weights<T> load_cross_encoder(const std::string& path) {
  const CheckpointData ckpt = read_checkpoint(path);
  if (ckpt.kind != ModelKind::CrossEncoder) {
    throw FormatError(path + " holds a mid-fusion model; this command needs a cross-encoder");
  }
  return weights_from_checkpoint<T>(ckpt);
}

/// A mid-fusion checkpoint as stored, or a cross-encoder converted with the
/// given split (defaulting to the split recorded in its config).
template <typename T>
MiceWeights<T> load_mice(const std::string& path, std::optional<std::size_t> ell_star,
                         std::optional<std::size_t> k_inter) {
  const CheckpointData ckpt = read_checkpoint(path);
  if (ckpt.kind == ModelKind::Mice) {
    if ((ell_star && *ell_star != ckpt.config.first_interaction) ||
        (k_inter && *k_inter != ckpt.config.interaction_layers)) {
      throw ConfigError(path + " is a mid-fusion model with ell_star=" +
                        std::to_string(ckpt.config.first_interaction) + ", k_inter=" +
                        std::to_string(ckpt.config.interaction_layers) + "; its split cannot change");
    }
    return mice_weights_from_checkpoint<T>(ckpt);
  }
  const auto ce = weights_from_checkpoint<T>(ckpt);
  return from_cross_encoder(ce, ell_star.value_or(ckpt.config.first_interaction),
                            k_inter.value_or(ckpt.config.interaction_layers));
}

std::map<std::string, std::vector<std::string>> candidates_by_query(const std::string& run_path) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& list : read_run(run_path)) {
    auto& ids = out[list.query_id];
    for (const auto& item : list.items) ids.push_back(item.doc_id);
  }
  return out;
}

/// Reranks every query that has candidates; returns the rankings and prints a summary.
std::vector<RankedList> rerank_all(const std::vector<TextRecord>& queries,
                                   const std::map<std::string, std::vector<std::string>>& candidates,
                                   Scorer& scorer, std::size_t k_out, std::ostream& out, std::ostream& err) {
  std::vector<RankedList> runs;
  std::size_t failed = 0;
  std::size_t skipped = 0;
  for (const auto& q : queries) {
    auto it = candidates.find(q.id);
    if (it == candidates.end()) {
      ++skipped;
      continue;
    }
    auto res = rerank(q, it->second, scorer, k_out);
    for (const auto& [doc, msg] : res.errors) {
      err << "error: query " << q.id << " doc " << doc << ": " << msg << "\n";
    }
    failed += res.errors.size();
    runs.push_back(std::move(res.ranking));
  }
  out << scorer.name() << ": reranked " << runs.size() << " queries";
  if (skipped) out << ", " << skipped << " without candidates";
  if (failed) out << ", " << failed << " candidates could not be scored";
  out << "\n";
  return runs;
}

RankingTask load_task(const std::string& corpus, const std::string& queries, const std::string& dev,
                      const std::string& qrels) {
  RankingTask t;
  t.corpus = read_jsonl(corpus);
  if (!queries.empty()) t.train_queries = read_jsonl(queries);
  t.dev_queries = read_jsonl(dev);
  t.qrels = read_qrels(qrels);
  return t;
}

/// After a step-count override, shrinks warmup and validation interval to fit.
void fit_schedule(TrainConfig& cfg, std::ostream& err) {
  if (cfg.steps == 0) return;
  if (cfg.warmup_steps >= cfg.steps) {
    const std::size_t w = cfg.steps / 10;
    err << "warning: warmup_steps " << cfg.warmup_steps << " does not fit " << cfg.steps << " steps; using " << w << "\n";
    cfg.warmup_steps = w;
  }
  if (cfg.validate_every > cfg.steps) cfg.validate_every = cfg.steps;
}

std::vector<std::size_t> parse_k_range(const std::string& text) {
  std::vector<std::size_t> ks;
  try {
    if (auto dash = text.find('-'); dash != std::string::npos) {
      const auto lo = std::stoul(text.substr(0, dash));
      const auto hi = std::stoul(text.substr(dash + 1));
      if (lo > hi) throw UsageError("empty range");
      for (auto k = hi; k >= lo && k > 0; --k) ks.push_back(k);
      if (lo == 0) ks.push_back(0);
    } else {
      std::stringstream ss(text);
      for (std::string part; std::getline(ss, part, ',');) ks.push_back(std::stoul(part));
    }
  } catch (const std::logic_error&) {
    throw UsageError("--k-range '" + text + "': expected lo-hi or a comma list");
  }
  if (ks.empty()) throw UsageError("--k-range is empty");
  return ks;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mid-fusion re-ranking toolkit", "mice"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  Common common;
  std::function<void()> action;

  // synth
  SynthConfig synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic ranking task");
  add_common(c_synth, common, true);
  c_synth->add_option("--docs", synth.n_docs, "Documents")->capture_default_str();
  c_synth->add_option("--queries", synth.n_queries, "Queries (training + held-out)")->capture_default_str();
  c_synth->add_option("--dev-queries", synth.dev_queries, "Held-out queries")->capture_default_str();
  c_synth->add_option("--vocab-size", synth.vocab_size, "Distinct words")->capture_default_str();
  c_synth->add_option("--docs-per-topic", synth.docs_per_topic, "Documents per topic")->capture_default_str();
  c_synth->callback([&] {
    action = [&] {
      synth.seed = common.seed;
      const auto task = synth_corpus(synth);
      const std::filesystem::path dir = common.out;
      std::filesystem::create_directories(dir);
      write_jsonl(dir / "corpus.jsonl", task.corpus);
      write_jsonl(dir / "queries.jsonl", task.train_queries);
      write_jsonl(dir / "dev_queries.jsonl", task.dev_queries);
      write_qrels(dir / "qrels.tsv", task.qrels);
      out << "wrote " << task.corpus.size() << " documents, " << task.train_queries.size()
          << " training and " << task.dev_queries.size() << " held-out queries to " << dir.string() << "\n";
    };
  });

  // build-vocab
  std::vector<std::string> vocab_inputs;
  std::size_t max_words = 0;
  std::size_t min_count = 1;
  auto* c_vocab = app.add_subcommand("build-vocab", "Build a vocabulary from JSON-lines texts");
  add_common(c_vocab, common, true);
  c_vocab->add_option("--input", vocab_inputs, "JSON-lines files")->required();
  c_vocab->add_option("--max-words", max_words, "Word limit (0 = all)")->capture_default_str();
  c_vocab->add_option("--min-count", min_count, "Minimum term frequency")->capture_default_str();
  c_vocab->callback([&] {
    action = [&] {
      std::vector<TextRecord> texts;
      for (const auto& p : vocab_inputs) {
        auto part = read_jsonl(p);
        texts.insert(texts.end(), part.begin(), part.end());
      }
      const Vocab v = Vocab::build(texts, max_words, min_count);
      v.save(common.out);
      out << "vocabulary of " << v.size() << " entries written to " << common.out << "\n";
    };
  });

  // shared file flags
  std::string corpus_path, queries_path, dev_path, qrels_path, vocab_path, model_path, candidates_path;
  std::string cache_path, config_path, metrics_path, init_path, step_text = "baseline", mode_text = "ce";
  std::optional<std::size_t> ell_star, k_inter, steps_override;
  std::size_t k_out = 0;

  // train
  ModelShape shape;
  std::string variant_text;
  auto* c_train = app.add_subcommand("train", "MarginMSE training with RR@10 validation");
  add_common(c_train, common, true);
  c_train->add_option("--corpus", corpus_path, "Corpus JSON lines")->required();
  c_train->add_option("--queries", queries_path, "Training queries JSON lines")->required();
  c_train->add_option("--dev-queries", dev_path, "Held-out queries JSON lines")->required();
  c_train->add_option("--qrels", qrels_path, "Relevance judgments")->required();
  c_train->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  c_train->add_option("--config", config_path, "Training config (key = value)");
  c_train->add_option("--variant", variant_text, "baseline, step0..step3 or mice");
  c_train->add_option("--ell-star", ell_star, "First interaction layer");
  c_train->add_option("--k-inter", k_inter, "Interaction layers kept by the mid-fusion model");
  c_train->add_option("--steps", steps_override, "Override the configured step count");
  c_train->add_option("--init", init_path, "Start from this checkpoint");
  c_train->add_option("--metrics", metrics_path, "Metrics log (JSON lines)");
  add_shape(c_train, shape);
  c_train->callback([&] {
    action = [&] {
      TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
      cfg.seed = common.seed;
      if (!variant_text.empty()) cfg.variant = ModelVariant::parse(variant_text);
      if (ell_star) cfg.ell_star = *ell_star;
      if (k_inter) cfg.k_inter = *k_inter;
      if (steps_override) {
        cfg.steps = *steps_override;
        fit_schedule(cfg, err);
      }
      const RankingTask task = load_task(corpus_path, queries_path, dev_path, qrels_path);
      const Vocab vocab = Vocab::load(vocab_path);
      TrainOutputs outputs;
      outputs.checkpoint = common.out;
      if (!metrics_path.empty()) outputs.metrics = metrics_path;
      outputs.verbose = true;
      with_precision(common.precision, [&]<typename T>() {
        std::unique_ptr<Ranker<T>> ranker;
        if (cfg.variant.kind == ModelVariant::Kind::Mice) {
          MiceWeights<T> w = init_path.empty()
                                 ? from_cross_encoder(Weights<T>::init(make_config(shape, vocab.size(), cfg.ell_star,
                                                                                    cfg.k_inter),
                                                                       common.seed),
                                                      cfg.ell_star, cfg.k_inter)
                                 : load_mice<T>(init_path, cfg.ell_star, cfg.k_inter);
          ranker = std::make_unique<MiceRanker<T>>(std::move(w));
        } else {
          Weights<T> w = init_path.empty()
                             ? Weights<T>::init(make_config(shape, vocab.size(), cfg.ell_star,
                                                            std::min(cfg.k_inter, shape.layers - cfg.ell_star)),
                                                common.seed)
                             : load_cross_encoder<T>(init_path);
          if (w.config.vocab < vocab.size()) {
            throw ConfigError("model vocabulary (" + std::to_string(w.config.vocab) +
                              ") is smaller than the vocabulary file (" + std::to_string(vocab.size()) + ")");
          }
          MaskSpec spec{cfg.variant.step, cfg.ell_star, w.config.layers};
          ranker = std::make_unique<CrossEncoderRanker<T>>(std::move(w), spec);
        }
        const auto result = train<T>(*ranker, task, vocab, cfg, outputs);
        out << ranker->name() << ": best rr@10 " << std::fixed << std::setprecision(4) << result.best_rr10
            << " at step " << result.best_step << "; checkpoint " << common.out << "\n";
      });
    };
  });

  // ablate
  std::string ablate_step;
  auto* c_ablate = app.add_subcommand("ablate", "Rerank candidates with a cross-encoder under a mask step");
  add_common(c_ablate, common, true);
  c_ablate->add_option("--step", ablate_step, "baseline or 0..3")->required();
  c_ablate->add_option("--ell-star", ell_star, "First interaction layer for Step3");
  c_ablate->add_option("--model", model_path, "Cross-encoder checkpoint")->required();
  c_ablate->add_option("--queries", queries_path, "Queries JSON lines")->required();
  c_ablate->add_option("--corpus", corpus_path, "Corpus JSON lines")->required();
  c_ablate->add_option("--candidates", candidates_path, "Candidate run (TREC)")->required();
  c_ablate->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  c_ablate->add_option("--k-out", k_out, "Keep this many per query (0 = all)");
  c_ablate->callback([&] {
    action = [&] {
      const MaskStep step = parse_step(ablate_step);
      const auto queries = read_jsonl(queries_path);
      const auto corpus = read_jsonl(corpus_path);
      const DocTexts texts = index_texts(corpus);
      const Vocab vocab = Vocab::load(vocab_path);
      const auto cands = candidates_by_query(candidates_path);
      with_precision(common.precision, [&]<typename T>() {
        const Weights<T> w = load_cross_encoder<T>(model_path);
        MaskSpec spec{step, ell_star.value_or(w.config.first_interaction), w.config.layers};
        CrossEncoderScorer<T> scorer(w, spec, vocab, texts);
        const auto runs = rerank_all(queries, cands, scorer, k_out, out, err);
        write_run(common.out, runs, std::string("ablate-") + step_name(step));
      });
    };
  });

  // encode-docs
  auto* c_encode = app.add_subcommand("encode-docs", "Precompute document states into a cache file");
  add_common(c_encode, common, true);
  c_encode->add_option("--model", model_path, "Mid-fusion or cross-encoder checkpoint")->required();
  c_encode->add_option("--corpus", corpus_path, "Corpus JSON lines")->required();
  c_encode->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  c_encode->add_option("--ell-star", ell_star, "Split for a cross-encoder checkpoint");
  c_encode->add_option("--k-inter", k_inter, "Split for a cross-encoder checkpoint");
  c_encode->callback([&] {
    action = [&] {
      const auto corpus = read_jsonl(corpus_path);
      const Vocab vocab = Vocab::load(vocab_path);
      with_precision(common.precision, [&]<typename T>() {
        const MiceModel<T> model(load_mice<T>(model_path, ell_star, k_inter));
        std::vector<DocState<T>> states(corpus.size());
        parallel_for(corpus.size(), [&](std::size_t i) {
          states[i] = model.encode_document(corpus[i].id, tokenize_nonempty(corpus[i].text, vocab));
        });
        CacheHeader header;
        header.d = static_cast<std::uint32_t>(model.config().hidden);
        header.ell_star = static_cast<std::uint32_t>(model.config().first_interaction);
        header.checkpoint_hash = model.fingerprint();
        header.doc_count = static_cast<std::uint32_t>(states.size());
        write_cache<T>(common.out, states, header);
        out << "encoded " << states.size() << " documents (checkpoint " << to_hex(model.fingerprint()).substr(0, 16)
            << ") into " << common.out << "\n";
      });
    };
  });

  // bm25
  std::size_t bm25_k = 1000;
  Bm25Params bm25;
  auto* c_bm25 = app.add_subcommand("bm25", "First-stage BM25 retrieval");
  add_common(c_bm25, common, true);
  c_bm25->add_option("--corpus", corpus_path, "Corpus JSON lines")->required();
  c_bm25->add_option("--queries", queries_path, "Queries JSON lines")->required();
  c_bm25->add_option("--k", bm25_k, "Candidates per query")->capture_default_str();
  c_bm25->add_option("--k1", bm25.k1, "BM25 k1")->capture_default_str();
  c_bm25->add_option("--b", bm25.b, "BM25 b")->capture_default_str();
  c_bm25->callback([&] {
    action = [&] {
      const auto corpus = read_jsonl(corpus_path);
      const auto queries = read_jsonl(queries_path);
      const CorpusStats stats = CorpusStats::build(corpus);
      std::vector<RankedList> runs;
      for (const auto& q : queries) runs.push_back(retrieve(q, stats, bm25_k, bm25));
      write_run(common.out, runs, "bm25");
      out << "bm25: retrieved for " << runs.size() << " queries over " << stats.size() << " documents\n";
    };
  });

  // rerank
  bool strict = true;
  auto* c_rerank = app.add_subcommand("rerank", "Rerank candidates with a neural model");
  add_common(c_rerank, common, true);
  c_rerank->add_option("--mode", mode_text, "ce, mice or mice-precomp")
      ->check(CLI::IsMember({"ce", "mice", "mice-precomp"}))
      ->capture_default_str();
  c_rerank->add_option("--model", model_path, "Checkpoint")->required();
  c_rerank->add_option("--queries", queries_path, "Queries JSON lines")->required();
  c_rerank->add_option("--corpus", corpus_path, "Corpus JSON lines (not needed for mice-precomp)");
  c_rerank->add_option("--candidates", candidates_path, "Candidate run (TREC)")->required();
  c_rerank->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  c_rerank->add_option("--cache", cache_path, "Document state cache (mice-precomp)");
  c_rerank->add_option("--step", step_text, "Mask step for ce mode")->capture_default_str();
  c_rerank->add_option("--ell-star", ell_star, "Split (Step3 masks, or converting a cross-encoder)");
  c_rerank->add_option("--k-inter", k_inter, "Interaction layers when converting a cross-encoder");
  c_rerank->add_option("--k-out", k_out, "Keep this many per query (0 = all)");
  c_rerank->add_flag("--strict,!--no-strict", strict, "Fail on cache/checkpoint mismatch")->capture_default_str();
  c_rerank->callback([&] {
    action = [&] {
      const BenchMode mode = parse_mode(mode_text);
      if (mode != BenchMode::MicePrecomp && corpus_path.empty()) throw UsageError("--corpus is required");
      if (mode == BenchMode::MicePrecomp && cache_path.empty()) throw UsageError("--cache is required for mice-precomp");
      const auto queries = read_jsonl(queries_path);
      const DocTexts texts = corpus_path.empty() ? DocTexts{} : index_texts(read_jsonl(corpus_path));
      const Vocab vocab = Vocab::load(vocab_path);
      const auto cands = candidates_by_query(candidates_path);
      with_precision(common.precision, [&]<typename T>() {
        std::vector<RankedList> runs;
        if (mode == BenchMode::CrossEncoder) {
          const Weights<T> w = load_cross_encoder<T>(model_path);
          MaskSpec spec{parse_step(step_text), ell_star.value_or(w.config.first_interaction), w.config.layers};
          CrossEncoderScorer<T> scorer(w, spec, vocab, texts);
          runs = rerank_all(queries, cands, scorer, k_out, out, err);
        } else {
          const MiceModel<T> model(load_mice<T>(model_path, ell_star, k_inter));
          if (mode == BenchMode::Mice) {
            MiceOnlineScorer<T> scorer(model, vocab, texts);
            runs = rerank_all(queries, cands, scorer, k_out, out, err);
          } else {
            CacheCheck check;
            check.expected_hash = model.fingerprint();
            check.expected_d = static_cast<std::uint32_t>(model.config().hidden);
            check.expected_ell_star = static_cast<std::uint32_t>(model.config().first_interaction);
            check.strict = strict;
            const DocCacheReader cache(cache_path, check);
            // Non-strict: the warning has been printed; trust the cached states as they are.
            const MiceModel<T> trusting(model.weights(), cache.header().checkpoint_hash);
            MiceCacheScorer<T> scorer(cache.mismatch() ? trusting : model, cache, vocab);
            runs = rerank_all(queries, cands, scorer, k_out, out, err);
          }
        }
        write_run(common.out, runs, mode_text);
      });
    };
  });

  // eval
  std::string run_path;
  std::vector<std::string> metric_names{"ndcg@10"};
  auto* c_eval = app.add_subcommand("eval", "Score a run against judgments");
  add_common(c_eval, common, false);
  c_eval->add_option("--run", run_path, "Run file (TREC)")->required();
  c_eval->add_option("--qrels", qrels_path, "Relevance judgments")->required();
  c_eval->add_option("--metric", metric_names, "ndcg@k, rr@k or mrr@k (repeatable)")->capture_default_str();
  c_eval->callback([&] {
    action = [&] {
      std::vector<MetricSpec> metrics;
      for (const auto& m : metric_names) metrics.push_back(MetricSpec::parse(m));
      const auto runs = read_run(run_path);
      const Qrels qrels = read_qrels(qrels_path);
      nlohmann::json report = nlohmann::json::object();
      for (const auto& m : metrics) {
        const EvalReport r = evaluate(runs, qrels, m);
        out << m.name() << " " << std::fixed << std::setprecision(4) << r.mean << "\n";
        if (!r.unjudged.empty()) {
          err << "warning: " << r.unjudged.size() << " run queries have no judgments and were ignored\n";
        }
        report[m.name()] = {{"mean", r.mean}, {"per_query", r.per_query}};
      }
      if (!common.out.empty()) {
        std::ofstream f(common.out);
        if (!f) throw InputError("cannot write " + common.out);
        f << report.dump(2) << "\n";
      }
    };
  });

  // bench
  std::vector<std::string> bench_modes{"ce", "mice", "mice-precomp"};
  std::string preset = "latency";
  BenchConfig bench;
  auto* c_bench = app.add_subcommand("bench", "Latency, memory and FLOPs per inference mode");
  add_common(c_bench, common, false);
  c_bench->add_option("--mode", bench_modes, "Modes to run")
      ->check(CLI::IsMember({"ce", "mice", "mice-precomp"}))
      ->capture_default_str();
  c_bench->add_option("--model", model_path, "Cross-encoder checkpoint (random weights when absent)");
  c_bench->add_option("--preset", preset, "Random-model shape: latency, minilm or desk")
      ->check(CLI::IsMember({"latency", "minilm", "desk"}))
      ->capture_default_str();
  c_bench->add_option("--ell-star", ell_star, "First interaction layer");
  c_bench->add_option("--k-inter", k_inter, "Interaction layers");
  c_bench->add_option("--batch", bench.batch, "Documents per batch")->capture_default_str();
  c_bench->add_option("--n", bench.n, "Query tokens")->capture_default_str();
  c_bench->add_option("--m", bench.m, "Document tokens")->capture_default_str();
  c_bench->add_option("--trials", bench.trials, "Timed trials (at least 10)")->capture_default_str();
  c_bench->add_option("--warmup", bench.warmup, "Warmup trials (at least 3)")->capture_default_str();
  c_bench->callback([&] {
    action = [&] {
      with_precision(common.precision, [&]<typename T>() {
        Weights<T> w;
        if (!model_path.empty()) {
          w = load_cross_encoder<T>(model_path);
        } else {
          ModelConfig cfg;
          if (preset == "minilm") {
            cfg = ModelConfig::minilm_like();
          } else if (preset == "latency") {
            cfg = ModelConfig::minilm_like();
            cfg.hidden = 64;
            cfg.heads = 4;
            cfg.ffn = 256;
            cfg.vocab = 1000;
          }
          w = Weights<T>::init(cfg, common.seed);
        }
        if (ell_star) w.config.first_interaction = *ell_star;
        if (k_inter) w.config.interaction_layers = *k_inter;
        w.config.validate();
        std::vector<BenchReport> reports;
        bench.seed = common.seed;
        for (const auto& m : bench_modes) {
          bench.mode = parse_mode(m);
          reports.push_back(bench_latency(w, bench));
          const auto& r = reports.back();
          out << std::left << std::setw(13) << r.mode << std::right << std::fixed << std::setprecision(2)
              << std::setw(10) << r.latency_mean_ms << " ms +- " << std::setw(7) << r.latency_std_ms
              << "  " << std::setw(9) << r.docs_per_s << " docs/s  peak " << r.peak_bytes / 1024
              << " KiB  " << std::setprecision(3) << static_cast<double>(r.flops) / 1e9
              << " GFLOP/pair  batch " << r.batch << "  threads " << r.threads << "\n";
        }
        if (!common.out.empty()) write_bench_reports(common.out, reports);
      });
    };
  });

  // sweep
  std::string k_range = "1-3";
  auto* c_sweep = app.add_subcommand("sweep", "Layer-dropping sweep over interaction layers");
  add_common(c_sweep, common, true);
  c_sweep->add_option("--model", model_path, "Trained cross-encoder checkpoint")->required();
  c_sweep->add_option("--ell-star", ell_star, "First interaction layer")->required();
  c_sweep->add_option("--k-range", k_range, "lo-hi or comma list")->capture_default_str();
  c_sweep->add_option("--corpus", corpus_path, "Corpus JSON lines")->required();
  c_sweep->add_option("--queries", queries_path, "Training queries for fine-tuning");
  c_sweep->add_option("--dev-queries", dev_path, "Held-out queries")->required();
  c_sweep->add_option("--qrels", qrels_path, "Relevance judgments")->required();
  c_sweep->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  c_sweep->add_option("--config", config_path, "Fine-tuning config (key = value)");
  c_sweep->add_option("--finetune-steps", steps_override, "Fine-tuning steps per k (0 = none)");
  c_sweep->callback([&] {
    action = [&] {
      TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
      cfg.seed = common.seed;
      if (steps_override) {
        cfg.steps = *steps_override;
        fit_schedule(cfg, err);
      }
      if (cfg.steps > 0 && queries_path.empty()) throw UsageError("--queries is required when fine-tuning");
      const RankingTask task = load_task(corpus_path, queries_path, dev_path, qrels_path);
      const Vocab vocab = Vocab::load(vocab_path);
      const auto ks = parse_k_range(k_range);
      with_precision(common.precision, [&]<typename T>() {
        const Weights<T> base = load_cross_encoder<T>(model_path);
        const auto rows = layer_drop_sweep<T>(base, *ell_star, ks, task, vocab, cfg, true);
        write_sweep_csv(std::filesystem::path(common.out), rows);
        out << "sweep: " << rows.size() << " rows written to " << common.out << "\n";
      });
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  int threads = common.threads;
  if (threads == 0) {
    if (const char* env = std::getenv("MICE_THREADS")) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        err << "error: MICE_THREADS must be an integer\n";
        return kExitUsage;
      }
    }
  }
  if (threads < 0) {
    err << "error: --threads must be non-negative\n";
    return kExitUsage;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (action) action();
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace mice
