#pragma once

// Re-ranking scorers backed by the neural models.

#include "mice/doccache.hpp"
#include "mice/mice_model.hpp"
#include "mice/retrieval.hpp"

namespace mice {

template <typename T>
class CrossEncoderScorer : public Scorer {
 public:
  CrossEncoderScorer(const Weights<T>& weights, MaskSpec spec, const Vocab& vocab, const DocTexts& docs)
      : w_(weights), spec_(spec), vocab_(vocab), docs_(docs) {
    spec_.validate();
  }
  std::string name() const override { return "cross-encoder"; }
  std::vector<CandidateScore> score(const TextRecord& query,
                                    std::span<const std::string> doc_ids) override;

 private:
  const Weights<T>& w_;
  MaskSpec spec_;
  const Vocab& vocab_;
  const DocTexts& docs_;
  MaskCache cache_;
};

/// Encodes each candidate's document stream on the fly.
template <typename T>
class MiceOnlineScorer : public Scorer {
 public:
  MiceOnlineScorer(const MiceModel<T>& model, const Vocab& vocab, const DocTexts& docs)
      : model_(model), vocab_(vocab), docs_(docs) {}
  std::string name() const override { return "mice"; }
  std::vector<CandidateScore> score(const TextRecord& query,
                                    std::span<const std::string> doc_ids) override;

 private:
  const MiceModel<T>& model_;
  const Vocab& vocab_;
  const DocTexts& docs_;
};

/// Reads document states from a precomputed cache. A candidate missing from
/// the cache is reported as an error, not re-encoded.
template <typename T>
class MiceCacheScorer : public Scorer {
 public:
  MiceCacheScorer(const MiceModel<T>& model, const DocCacheReader& cache, const Vocab& vocab)
      : model_(model), cache_(cache), vocab_(vocab) {}
  std::string name() const override { return "mice-precomp"; }
  std::vector<CandidateScore> score(const TextRecord& query,
                                    std::span<const std::string> doc_ids) override;

 private:
  const MiceModel<T>& model_;
  const DocCacheReader& cache_;
  const Vocab& vocab_;
};

}  // namespace mice
