#include "mice/scorers.hpp"

namespace mice {

namespace {

// Runs `f(i)` for every candidate in parallel, turning exceptions into per-candidate errors.
template <typename F>
std::vector<CandidateScore> score_each(std::size_t count, F&& f) {
  std::vector<CandidateScore> out(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto& slot = out[static_cast<std::size_t>(i)];
    try {
      slot.score = static_cast<double>(f(static_cast<std::size_t>(i)));
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<CandidateScore> CrossEncoderScorer<T>::score(const TextRecord& query,
                                                         std::span<const std::string> doc_ids) {
  const auto q = tokenize_nonempty(query.text, vocab_);
  return score_each(doc_ids.size(), [&](std::size_t i) {
    auto it = docs_.find(doc_ids[i]);
    if (it == docs_.end()) throw InputError("unknown doc id");
    const auto d = tokenize_nonempty(it->second, vocab_);
    return cross_encoder_forward(w_, q, d, spec_, &cache_);
  });
}

template <typename T>
std::vector<CandidateScore> MiceOnlineScorer<T>::score(const TextRecord& query,
                                                       std::span<const std::string> doc_ids) {
  const auto q = tokenize_nonempty(query.text, vocab_);
  const Tensor<T> q_states = model_.encode_query(q);
  return score_each(doc_ids.size(), [&](std::size_t i) {
    auto it = docs_.find(doc_ids[i]);
    if (it == docs_.end()) throw InputError("unknown doc id");
    const auto state = model_.encode_document(doc_ids[i], tokenize_nonempty(it->second, vocab_));
    return model_.score_encoded(q_states, state);
  });
}

template <typename T>
std::vector<CandidateScore> MiceCacheScorer<T>::score(const TextRecord& query,
                                                      std::span<const std::string> doc_ids) {
  const auto q = tokenize_nonempty(query.text, vocab_);
  std::vector<CandidateScore> out(doc_ids.size());
  std::vector<DocState<T>> states;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    if (!cache_.contains(doc_ids[i])) {
      out[i].error = "no precomputed state in cache";
      continue;
    }
    try {
      states.push_back(cache_.template load<T>(doc_ids[i]));
      slots.push_back(i);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  std::vector<const DocState<T>*> ptrs;
  for (const auto& s : states) ptrs.push_back(&s);
  const auto scores = model_.score_batch(q, ptrs);
  for (std::size_t j = 0; j < slots.size(); ++j) out[slots[j]].score = static_cast<double>(scores[j]);
  return out;
}

template class CrossEncoderScorer<float>;
template class CrossEncoderScorer<double>;
template class MiceOnlineScorer<float>;
template class MiceOnlineScorer<double>;
template class MiceCacheScorer<float>;
template class MiceCacheScorer<double>;

}  // namespace mice
