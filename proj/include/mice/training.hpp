#pragma once

// MarginMSE distillation on a synthetic ranking task.

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mice/checkpoint.hpp"
#include "mice/mice_model.hpp"
#include "mice/retrieval.hpp"

namespace mice {

// ---- loss, schedule, optimizer ----

/// ((s_pos − s_neg) − (t_pos − t_neg))².
double margin_mse(double s_pos, double s_neg, double t_pos, double t_neg);
/// Mean of margin_mse over a batch; all spans have the same length.
double margin_mse_batch(std::span<const double> s_pos, std::span<const double> s_neg,
                        std::span<const double> t_pos, std::span<const double> t_neg);
template <typename T>
Var<T> margin_mse(Var<T> s_pos, Var<T> s_neg, T t_pos, T t_neg);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
  std::vector<Buffer<T>> m;
  std::vector<Buffer<T>> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update of every parameter from its `grad` buffer.
/// Moments are zero-initialized on first use. A non-finite gradient throws
/// NumericError naming the parameter, before anything is modified.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, AdamMoments<T>& moments, const AdamHyper& hyper,
               std::span<const std::string> names = {});

// ---- configuration ----

/// Which model a run trains: the cross-encoder under a mask step, or the
/// mid-fusion model with its split.
struct ModelVariant {
  enum class Kind { CrossEncoder, Mice };
  Kind kind = Kind::CrossEncoder;
  MaskStep step = MaskStep::Baseline;

  /// "baseline", "step0".."step3" (or "0".."3"), "mice".
  static ModelVariant parse(const std::string& text);
  std::string name() const;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double lr_peak = 1e-3;
  std::size_t warmup_steps = 100;
  std::size_t validate_every = 500;
  std::uint64_t seed = 1;
  ModelVariant variant;
  /// MICE split; ℓ* also drives Step3 masks.
  std::size_t ell_star = 1;
  std::size_t k_inter = 2;
  /// Random non-relevant candidates per held-out query during validation.
  std::size_t dev_negatives = 45;

  /// "desk" (the defaults above) or "paper": 125,000 steps, batch 32,
  /// lr 7e-6, 5,000 warmup, validation every 10,000 steps.
  static TrainConfig profile(const std::string& name);
  /// Flat `key = value` lines, '#' comments. A `profile` key, if present,
  /// must come first. Unknown keys throw ConfigError.
  static TrainConfig load(const std::filesystem::path& path);
  static TrainConfig parse(const std::string& text);
  void set(const std::string& key, const std::string& value);
  std::string to_string() const;
  void validate() const;
};

/// Warmup from 0 to lr_peak, then linear decay to 0 at cfg.steps.
double lr_schedule(std::size_t step, const TrainConfig& cfg);

// ---- synthetic data ----

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t n_docs = 300;
  /// Training queries plus held-out queries.
  std::size_t n_queries = 300;
  std::size_t dev_queries = 50;
  /// Distinct word types: topic words plus background words.
  std::size_t vocab_size = 400;
  std::size_t docs_per_topic = 5;
  std::size_t topic_terms = 4;
  std::size_t query_terms = 3;
  std::size_t min_doc_len = 10;
  std::size_t max_doc_len = 20;
  /// Probability that a document token is one of its topic's words.
  double topic_ratio = 0.5;
};

/// Corpus, queries and judgments of a ranking task.
struct RankingTask {
  std::vector<TextRecord> corpus;
  std::vector<TextRecord> train_queries;
  std::vector<TextRecord> dev_queries;
  Qrels qrels;

  std::vector<TextRecord> all_queries() const;
};

/// Documents fall into topic clusters, each owning disjoint topic words;
/// the rest of a document is drawn from a shared background pool. A query
/// samples distinct words of one topic and is relevant (grade 1) to every
/// document of that topic.
RankingTask synth_corpus(const SynthConfig& cfg);

/// Oracle teacher: Σ over query terms of tf/(tf+1) in the document, plus
/// `bonus` when the document is relevant.
struct Teacher {
  double bonus = 1.0;
  double score(std::span<const std::string> query_terms, std::span<const std::string> doc_terms,
               bool relevant) const;
};

struct Triple {
  std::string query_id;
  std::string pos_doc_id;
  std::string neg_doc_id;
  double teacher_pos = 0;
  double teacher_neg = 0;
};

// ---- models under training ----

template <typename T>
class Ranker {
 public:
  virtual ~Ranker() = default;
  virtual std::string name() const = 0;
  virtual Var<T> score(Tape<T>& tape, std::span<const TokenId> query,
                       std::span<const TokenId> doc) const = 0;
  /// Inference scores of several documents for one query.
  virtual std::vector<T> score_many(std::span<const TokenId> query,
                                    std::span<const std::vector<TokenId>> docs) const;
  virtual std::vector<std::pair<std::string, Tensor<T>*>> parameters() = 0;
  virtual CheckpointData checkpoint() const = 0;
  virtual void restore(const CheckpointData& ckpt) = 0;
};

template <typename T>
class CrossEncoderRanker : public Ranker<T> {
 public:
  CrossEncoderRanker(Weights<T> weights, MaskSpec spec);
  std::string name() const override { return std::string("cross-encoder/") + step_name(spec_.step); }
  Var<T> score(Tape<T>& tape, std::span<const TokenId> query,
               std::span<const TokenId> doc) const override;
  std::vector<std::pair<std::string, Tensor<T>*>> parameters() override;
  CheckpointData checkpoint() const override { return to_checkpoint(w_); }
  void restore(const CheckpointData& ckpt) override;

  const Weights<T>& weights() const noexcept { return w_; }
  const MaskSpec& spec() const noexcept { return spec_; }

 private:
  Weights<T> w_;
  MaskSpec spec_;
  mutable MaskCache cache_;
};

/// Trains the mid-fusion model end to end: documents are re-encoded on the
/// tape so the shared lower layers receive gradients from both streams.
template <typename T>
class MiceRanker : public Ranker<T> {
 public:
  explicit MiceRanker(MiceWeights<T> weights) : model_(std::move(weights)) {}
  std::string name() const override { return "mice"; }
  Var<T> score(Tape<T>& tape, std::span<const TokenId> query,
               std::span<const TokenId> doc) const override;
  std::vector<T> score_many(std::span<const TokenId> query,
                            std::span<const std::vector<TokenId>> docs) const override;
  std::vector<std::pair<std::string, Tensor<T>*>> parameters() override;
  CheckpointData checkpoint() const override { return to_checkpoint(model_.weights()); }
  void restore(const CheckpointData& ckpt) override;

  /// Fingerprint refreshed to the current weights.
  MiceModel<T>& model();

 private:
  MiceModel<T> model_;
};

// ---- training loop ----

struct TrainLogEntry {
  std::size_t step = 0;
  /// Mean training loss since the previous validation; absent at step 0.
  std::optional<double> loss;
  double lr = 0;
  double rr10 = 0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::size_t best_step = 0;
  double best_rr10 = 0;
  CheckpointData best;
};

struct TrainOutputs {
  /// Best checkpoint, rewritten whenever validation improves.
  std::optional<std::filesystem::path> checkpoint;
  /// JSON lines {step, loss, lr, rr10}, one per validation.
  std::optional<std::filesystem::path> metrics;
  /// Print a line per validation to stdout.
  bool verbose = false;
};

/// Fixed validation candidates: each held-out query's relevant documents
/// plus `negatives` sampled non-relevant ones.
std::map<std::string, std::vector<std::string>> dev_candidates(const RankingTask& task,
                                                               std::size_t negatives,
                                                               std::uint64_t seed);

/// Ranks every held-out query's candidates with `model`.
template <typename T>
std::vector<RankedList> dev_rankings(const Ranker<T>& model, const RankingTask& task, const Vocab& vocab,
                                     const std::map<std::string, std::vector<std::string>>& candidates);

/// Mean RR@10 of `model` over the held-out queries and their candidates.
template <typename T>
double validate_rr10(const Ranker<T>& model, const RankingTask& task, const Vocab& vocab,
                     const std::map<std::string, std::vector<std::string>>& candidates);

/// Runs cfg.steps Adam updates on MarginMSE over sampled triples, validating
/// at step 0, every validate_every steps and at the end. Keeps the best
/// validation checkpoint and restores it into `model` before returning.
template <typename T>
TrainResult train(Ranker<T>& model, const RankingTask& task, const Vocab& vocab,
                  const TrainConfig& cfg, const TrainOutputs& outputs = {});

}  // namespace mice
