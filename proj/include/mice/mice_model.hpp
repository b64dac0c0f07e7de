#pragma once

// Mid-fusion re-ranker: query and document are contextualized independently
// through the shared lower layers, then a few interaction layers let the
// query stream attend over itself and the frozen document states.

#include <span>
#include <string>
#include <vector>

#include "mice/checkpoint.hpp"
#include "mice/transformer.hpp"

namespace mice {

template <typename T>
struct MiceWeights {
  /// `layers` keeps the source model's depth; `first_interaction` is ℓ* and
  /// `interaction_layers` the number of retained upper layers.
  ModelConfig config;
  Tensor<T> token_embedding;
  Tensor<T> position_embedding;
  /// Layers 1..ℓ*, shared by the query and document streams.
  std::vector<LayerWeights<T>> lower;
  std::vector<LayerWeights<T>> interaction;
  Tensor<T> scorer_w;
  Tensor<T> scorer_b;

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const;
  std::size_t retained_layers() const noexcept { return lower.size() + interaction.size(); }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("token_embedding"), self.token_embedding);
    f(std::string("position_embedding"), self.position_embedding);
    for (std::size_t i = 0; i < self.lower.size(); ++i) {
      const std::string prefix = "layer." + std::to_string(i + 1) + ".";
      LayerWeights<T>::visit(self.lower[i], [&](const char* name, auto& t) { f(prefix + name, t); });
    }
    for (std::size_t i = 0; i < self.interaction.size(); ++i) {
      const std::string prefix = "interaction." + std::to_string(i + 1) + ".";
      LayerWeights<T>::visit(self.interaction[i],
                             [&](const char* name, auto& t) { f(prefix + name, t); });
    }
    f(std::string("scorer.w"), self.scorer_w);
    f(std::string("scorer.b"), self.scorer_b);
  }
};

/// Copies layers 1..ℓ* as the shared lower stack, layers ℓ*+1..ℓ*+k as
/// interaction layers and the scorer; the remaining top layers are dropped.
/// Throws ConfigError when ℓ* + k exceeds the source depth.
template <typename T>
MiceWeights<T> from_cross_encoder(const Weights<T>& ce, std::size_t ell_star, std::size_t k_inter);

template <typename T>
CheckpointData to_checkpoint(const MiceWeights<T>& w);
template <typename T>
MiceWeights<T> mice_weights_from_checkpoint(const CheckpointData& ckpt);

/// Document hidden states at the output of layer ℓ*: m token rows plus SEP2.
template <typename T>
struct DocState {
  std::string doc_id;
  std::size_t m = 0;
  Tensor<T> states;
  Fingerprint checkpoint{};
};

template <typename T>
class MiceModel {
 public:
  /// Fingerprint is the digest of the weights' serialized checkpoint.
  explicit MiceModel(MiceWeights<T> weights);
  MiceModel(MiceWeights<T> weights, const Fingerprint& fingerprint);

  const MiceWeights<T>& weights() const noexcept { return w_; }
  /// For training. Call refresh_fingerprint() after updating parameters.
  MiceWeights<T>& mutable_weights() noexcept { return w_; }
  void refresh_fingerprint();
  const Fingerprint& fingerprint() const noexcept { return fingerprint_; }
  const ModelConfig& config() const noexcept { return w_.config; }

  /// Runs the lower layers over [CLS, Q, SEP1]; returns (n+2)×d.
  Var<T> encode_query(Tape<T>& tape, std::span<const TokenId> query) const;
  Tensor<T> encode_query(std::span<const TokenId> query) const;

  /// Runs the lower layers over [D, SEP2]; returns (m+1)×d. Differentiable.
  Var<T> encode_document(Tape<T>& tape, std::span<const TokenId> doc) const;
  DocState<T> encode_document(std::string doc_id, std::span<const TokenId> doc) const;

  /// Interaction layer `index` (1-based). Query rows attend jointly over the
  /// query stream and the document rows; document rows are not updated.
  Var<T> interaction_layer(Tape<T>& tape, Var<T> query_states, Var<T> doc_states,
                           std::size_t index) const;
  /// Same, reading a frozen DocState. Throws ConsistencyError when the state
  /// was produced by a different checkpoint.
  Var<T> interaction_layer(Tape<T>& tape, Var<T> query_states, const DocState<T>& doc,
                           std::size_t index) const;

  Var<T> score(Tape<T>& tape, std::span<const TokenId> query, const DocState<T>& doc) const;
  /// Re-encodes the document on the tape so gradients reach the lower layers.
  Var<T> score_online(Tape<T>& tape, std::span<const TokenId> query,
                      std::span<const TokenId> doc) const;
  T score(std::span<const TokenId> query, const DocState<T>& doc) const;
  /// Scores from query states produced by encode_query().
  T score_encoded(const Tensor<T>& query_states, const DocState<T>& doc) const;
  /// Scores a batch of documents for one query, in parallel across documents.
  std::vector<T> score_batch(std::span<const TokenId> query,
                             std::span<const DocState<T>* const> docs) const;

 private:
  void check_state(const DocState<T>& doc) const;
  Var<T> run_interactions(Tape<T>& tape, Var<T> q, Var<T> doc) const;

  MiceWeights<T> w_;
  Fingerprint fingerprint_{};
};

}  // namespace mice
