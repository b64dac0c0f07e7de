#pragma once

// Tokenizer, Okapi BM25 first stage and the re-ranking pipeline.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mice/common.hpp"
#include "mice/ranking.hpp"

namespace mice {

/// A corpus document or a query: JSON-lines records {"id": ..., "text": ...}.
struct TextRecord {
  std::string id;
  std::string text;
};

std::vector<TextRecord> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const TextRecord> records);

/// Lowercase ASCII, split on anything that is not a letter or digit.
std::vector<std::string> split_terms(std::string_view text);

class Vocab {
 public:
  /// Specials only: [PAD] [UNK] [CLS] [SEP].
  Vocab();

  /// Word ids are assigned by descending frequency, ties alphabetically.
  /// `max_words` = 0 keeps every term seen at least `min_count` times.
  static Vocab build(std::span<const TextRecord> texts, std::size_t max_words = 0,
                     std::size_t min_count = 1);
  /// One term per line, line index = id.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// [UNK] for unknown terms.
  TokenId id(std::string_view term) const;
  const std::string& term(TokenId id) const;
  std::size_t size() const noexcept { return terms_.size(); }

 private:
  void add(std::string term);

  std::vector<std::string> terms_;
  std::unordered_map<std::string, TokenId> ids_;
};

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);
/// As tokenize, but an empty result becomes a single [UNK] so layouts stay valid.
std::vector<TokenId> tokenize_nonempty(std::string_view text, const Vocab& vocab);

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

class CorpusStats {
 public:
  static CorpusStats build(std::span<const TextRecord> corpus);

  std::size_t size() const noexcept { return doc_ids_.size(); }
  double avgdl() const noexcept { return avgdl_; }
  std::size_t df(const std::string& term) const;
  bool contains(const std::string& doc_id) const { return index_.count(doc_id) != 0; }
  const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }

  /// Throws InputError for an unknown doc.
  double score(std::span<const std::string> query_terms, const std::string& doc_id,
               const Bm25Params& params = {}) const;
  /// Top-k by BM25 over the whole corpus, ties by doc_id.
  RankedList retrieve(const std::string& query_id, std::span<const std::string> query_terms,
                      std::size_t k, const Bm25Params& params = {}) const;

 private:
  double idf(std::size_t df) const;
  double term_weight(std::uint32_t tf, std::uint32_t dl, double idf, const Bm25Params& p) const;

  std::vector<std::string> doc_ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::uint32_t> doc_len_;
  std::vector<std::unordered_map<std::string, std::uint32_t>> tf_;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::uint32_t>>> postings_;
  double avgdl_ = 0;
};

/// Okapi BM25: Σ idf(t)·tf·(k1+1)/(tf + k1·(1−b+b·dl/avgdl)),
/// idf(t) = ln(1 + (N−df+0.5)/(df+0.5)).
double bm25_score(std::span<const std::string> query_terms, const std::string& doc_id,
                  const CorpusStats& stats, const Bm25Params& params = {});

RankedList retrieve(const TextRecord& query, const CorpusStats& stats, std::size_t k,
                    const Bm25Params& params = {});

/// Score of one candidate, or the reason it could not be scored.
struct CandidateScore {
  double score = 0;
  std::optional<std::string> error;
};

/// Re-scoring model used by rerank(). Implementations may score candidates
/// concurrently; results come back in candidate order.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string name() const = 0;
  virtual std::vector<CandidateScore> score(const TextRecord& query,
                                            std::span<const std::string> doc_ids) = 0;
};

struct RerankResult {
  RankedList ranking;
  /// (doc_id, message) for candidates that could not be scored.
  std::vector<std::pair<std::string, std::string>> errors;
};

/// Re-scores `candidates`, sorts by (score desc, doc_id asc) and keeps k_out
/// (0 = all). Failed candidates are left out of the ranking and listed in errors.
RerankResult rerank(const TextRecord& query, std::span<const std::string> candidates,
                    Scorer& scorer, std::size_t k_out = 0);

class Bm25Scorer : public Scorer {
 public:
  Bm25Scorer(const CorpusStats& stats, Bm25Params params = {}) : stats_(stats), params_(params) {}
  std::string name() const override { return "bm25"; }
  std::vector<CandidateScore> score(const TextRecord& query,
                                    std::span<const std::string> doc_ids) override;

 private:
  const CorpusStats& stats_;
  Bm25Params params_;
};

/// Map from doc id to text, used by model scorers.
using DocTexts = std::unordered_map<std::string, std::string>;
DocTexts index_texts(std::span<const TextRecord> corpus);

}  // namespace mice
