#pragma once

// Post-layernorm transformer encoder with mask-injected self-attention and
// the cross-encoder scoring path.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mice/autograd.hpp"
#include "mice/masking.hpp"
#include "mice/tensor.hpp"

namespace mice {

struct ModelConfig {
  std::size_t layers = 3;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t vocab = 512;
  std::size_t max_query = 16;
  std::size_t max_doc = 64;
  /// ℓ*: last layer of independent query/document contextualization.
  std::size_t first_interaction = 1;
  /// Interaction layers kept by the mid-fusion model.
  std::size_t interaction_layers = 2;

  /// Throws ConfigError on inconsistent fields.
  void validate() const;
  std::size_t position_count() const noexcept { return max_query + max_doc + 3; }
  /// Documents always start here so their states do not depend on the query length.
  std::size_t doc_position_offset() const noexcept { return max_query + 2; }

  /// 12 layers, width 384, 12 heads, FFN 1536.
  static ModelConfig minilm_like();

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerWeights {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> attn_ln_gain, attn_ln_bias;
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> ffn_ln_gain, ffn_ln_bias;

  static LayerWeights init(const ModelConfig& cfg, std::mt19937_64& rng);

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("attn.wq", self.wq);
    f("attn.bq", self.bq);
    f("attn.wk", self.wk);
    f("attn.bk", self.bk);
    f("attn.wv", self.wv);
    f("attn.bv", self.bv);
    f("attn.wo", self.wo);
    f("attn.bo", self.bo);
    f("attn_ln.gain", self.attn_ln_gain);
    f("attn_ln.bias", self.attn_ln_bias);
    f("ffn.w1", self.w1);
    f("ffn.b1", self.b1);
    f("ffn.w2", self.w2);
    f("ffn.b2", self.b2);
    f("ffn_ln.gain", self.ffn_ln_gain);
    f("ffn_ln.bias", self.ffn_ln_bias);
  }
};

/// Cross-encoder parameters.
template <typename T>
struct Weights {
  ModelConfig config;
  Tensor<T> token_embedding;
  Tensor<T> position_embedding;
  std::vector<LayerWeights<T>> layers;
  Tensor<T> scorer_w;
  Tensor<T> scorer_b;

  /// Deterministic random initialization; parameters have requires_grad set.
  static Weights init(const ModelConfig& cfg, std::uint64_t seed);

  /// Calls f(name, tensor) for every parameter in checkpoint order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const;

  template <typename U>
  Weights<U> cast() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("token_embedding"), self.token_embedding);
    f(std::string("position_embedding"), self.position_embedding);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      const std::string prefix = "layer." + std::to_string(i + 1) + ".";
      LayerWeights<T>::visit(self.layers[i], [&](const char* name, auto& t) { f(prefix + name, t); });
    }
    f(std::string("scorer.w"), self.scorer_w);
    f(std::string("scorer.b"), self.scorer_b);
  }
};

/// Token ids and positions of the joint [CLS, Q, SEP1, D, SEP2] sequence.
struct PairSequence {
  SegmentLayout layout;
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> positions;
};

/// Truncates the query to max_query tokens (never below one) and keeps the
/// first max_doc document tokens. Empty inputs throw InputError.
std::vector<TokenId> truncate_query(const ModelConfig& cfg, std::span<const TokenId> ids);
std::vector<TokenId> truncate_doc(const ModelConfig& cfg, std::span<const TokenId> ids);

PairSequence make_pair_sequence(const ModelConfig& cfg, std::span<const TokenId> query,
                                std::span<const TokenId> doc);
/// [CLS, Q, SEP1] with positions 0..n+1.
PairSequence make_query_sequence(const ModelConfig& cfg, std::span<const TokenId> query);
/// [D, SEP2] with positions from doc_position_offset().
PairSequence make_doc_sequence(const ModelConfig& cfg, std::span<const TokenId> doc);

/// Token embedding plus position embedding, row per position. Out-of-range
/// ids throw InputError.
template <typename T>
Var<T> embed(Tape<T>& tape, const Tensor<T>& token_table, const Tensor<T>& position_table,
             std::span<const std::size_t> tokens, std::span<const std::size_t> positions);
template <typename T>
Var<T> embed(Tape<T>& tape, const Weights<T>& w, std::span<const std::size_t> tokens,
             std::span<const std::size_t> positions) {
  return embed(tape, w.token_embedding, w.position_embedding, tokens, positions);
}

/// One post-LN encoder layer where `targets` attend over `sources`:
///   h = LN(x + MHA(x, sources)); out = LN(h + FFN(h)).
/// With sources == targets this is ordinary masked self-attention.
template <typename T>
Var<T> attend_layer(Tape<T>& tape, Var<T> targets, Var<T> sources, const AttentionMask& mask,
                    const LayerWeights<T>& lw, std::size_t heads);

template <typename T>
Var<T> encoder_layer(Tape<T>& tape, Var<T> states, const AttentionMask& mask,
                     const LayerWeights<T>& lw, std::size_t heads) {
  return attend_layer(tape, states, states, mask, lw, heads);
}

/// w·row + b over a single hidden row, shape [1×1].
template <typename T>
Var<T> score_head(Tape<T>& tape, const Tensor<T>& scorer_w, const Tensor<T>& scorer_b, Var<T> row);

/// Hidden states after the first `depth` layers (0 = all) of the masked joint forward.
template <typename T>
Var<T> cross_encoder_states(Tape<T>& tape, const Weights<T>& w, std::span<const TokenId> query,
                            std::span<const TokenId> doc, const MaskSpec& spec,
                            std::size_t depth = 0, MaskCache* cache = nullptr);

/// Relevance score read from CLS after `depth` layers (0 = all).
template <typename T>
Var<T> cross_encoder_score(Tape<T>& tape, const Weights<T>& w, std::span<const TokenId> query,
                           std::span<const TokenId> doc, const MaskSpec& spec,
                           std::size_t depth = 0, MaskCache* cache = nullptr);

/// Inference convenience: no-grad tape, plain score.
template <typename T>
T cross_encoder_forward(const Weights<T>& w, std::span<const TokenId> query,
                        std::span<const TokenId> doc, const MaskSpec& spec,
                        MaskCache* cache = nullptr);

/// Default mask spec for a model: Step3 uses the config's ℓ*.
MaskSpec mask_spec_for(const ModelConfig& cfg, MaskStep step);

}  // namespace mice
