#include "mice/transformer.hpp"

#include <cmath>

namespace mice {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  t.requires_grad = true;
  return t;
}

template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return normal_tensor<T>({fan_in, fan_out}, std::sqrt(2.0 / double(fan_in + fan_out)), rng);
}

template <typename T>
Tensor<T> filled(std::size_t n, T value) {
  Tensor<T> t({n}, value);
  t.requires_grad = true;
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (layers < 2) fail("at least two layers are required");
  if (hidden == 0 || heads == 0 || ffn == 0 || vocab <= kFirstWordId) fail("sizes must be positive");
  if (hidden % heads != 0) fail("hidden size must be divisible by the head count");
  if (max_query == 0 || max_doc == 0) fail("max_query and max_doc must be positive");
  if (first_interaction < 1 || first_interaction >= layers) {
    fail("first_interaction must lie in 1.." + std::to_string(layers - 1));
  }
  if (interaction_layers < 1 || interaction_layers > layers - first_interaction) {
    fail("interaction_layers must lie in 1.." + std::to_string(layers - first_interaction));
  }
}

ModelConfig ModelConfig::minilm_like() {
  ModelConfig c;
  c.layers = 12;
  c.hidden = 384;
  c.heads = 12;
  c.ffn = 1536;
  c.vocab = 30522;
  c.max_query = 32;
  c.max_doc = 512;
  c.first_interaction = 4;
  c.interaction_layers = 3;
  return c;
}

MaskSpec mask_spec_for(const ModelConfig& cfg, MaskStep step) {
  return MaskSpec{step, cfg.first_interaction, cfg.layers};
}

template <typename T>
LayerWeights<T> LayerWeights<T>::init(const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t d = cfg.hidden, f = cfg.ffn;
  LayerWeights lw;
  lw.wq = xavier<T>(d, d, rng);
  lw.bq = filled<T>(d, 0);
  lw.wk = xavier<T>(d, d, rng);
  lw.bk = filled<T>(d, 0);
  lw.wv = xavier<T>(d, d, rng);
  lw.bv = filled<T>(d, 0);
  lw.wo = xavier<T>(d, d, rng);
  lw.bo = filled<T>(d, 0);
  lw.attn_ln_gain = filled<T>(d, 1);
  lw.attn_ln_bias = filled<T>(d, 0);
  lw.w1 = xavier<T>(d, f, rng);
  lw.b1 = filled<T>(f, 0);
  lw.w2 = xavier<T>(f, d, rng);
  lw.b2 = filled<T>(d, 0);
  lw.ffn_ln_gain = filled<T>(d, 1);
  lw.ffn_ln_bias = filled<T>(d, 0);
  return lw;
}

template <typename T>
Weights<T> Weights<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Weights w;
  w.config = cfg;
  w.token_embedding = normal_tensor<T>({cfg.vocab, cfg.hidden}, 1.0, rng);
  w.position_embedding = normal_tensor<T>({cfg.position_count(), cfg.hidden}, 0.1, rng);
  for (std::size_t i = 0; i < cfg.layers; ++i) w.layers.push_back(LayerWeights<T>::init(cfg, rng));
  w.scorer_w = xavier<T>(cfg.hidden, 1, rng);
  w.scorer_b = filled<T>(1, 0);
  return w;
}

template <typename T>
std::size_t Weights<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
template <typename U>
Weights<U> Weights<T>::cast() const {
  Weights<U> out;
  out.config = config;
  out.layers.resize(layers.size());
  std::vector<const Tensor<T>*> src;
  visit([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
  return out;
}

std::vector<TokenId> truncate_query(const ModelConfig& cfg, std::span<const TokenId> ids) {
  if (ids.empty()) throw InputError("empty query");
  const std::size_t n = std::min(ids.size(), cfg.max_query);
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<TokenId> truncate_doc(const ModelConfig& cfg, std::span<const TokenId> ids) {
  if (ids.empty()) throw InputError("empty document");
  const std::size_t m = std::min(ids.size(), cfg.max_doc);
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(m)};
}

PairSequence make_pair_sequence(const ModelConfig& cfg, std::span<const TokenId> query,
                                std::span<const TokenId> doc) {
  const auto q = truncate_query(cfg, query);
  const auto d = truncate_doc(cfg, doc);
  PairSequence s;
  s.layout = SegmentLayout::make(q.size(), d.size());
  s.tokens.reserve(s.layout.length());
  s.tokens.push_back(kClsId);
  s.tokens.insert(s.tokens.end(), q.begin(), q.end());
  s.tokens.push_back(kSepId);
  s.tokens.insert(s.tokens.end(), d.begin(), d.end());
  s.tokens.push_back(kSepId);
  for (std::size_t i = 0; i < q.size() + 2; ++i) s.positions.push_back(i);
  for (std::size_t i = 0; i < d.size() + 1; ++i) s.positions.push_back(cfg.doc_position_offset() + i);
  return s;
}

PairSequence make_query_sequence(const ModelConfig& cfg, std::span<const TokenId> query) {
  const auto q = truncate_query(cfg, query);
  PairSequence s;
  s.layout.n = q.size();
  s.layout.seg.push_back(Segment::Cls);
  s.layout.seg.insert(s.layout.seg.end(), q.size(), Segment::Query);
  s.layout.seg.push_back(Segment::Sep1);
  s.tokens.push_back(kClsId);
  s.tokens.insert(s.tokens.end(), q.begin(), q.end());
  s.tokens.push_back(kSepId);
  for (std::size_t i = 0; i < q.size() + 2; ++i) s.positions.push_back(i);
  return s;
}

PairSequence make_doc_sequence(const ModelConfig& cfg, std::span<const TokenId> doc) {
  const auto d = truncate_doc(cfg, doc);
  PairSequence s;
  s.layout.m = d.size();
  s.layout.seg.assign(d.size(), Segment::Doc);
  s.layout.seg.push_back(Segment::Sep2);
  s.tokens.assign(d.begin(), d.end());
  s.tokens.push_back(kSepId);
  for (std::size_t i = 0; i < d.size() + 1; ++i) s.positions.push_back(cfg.doc_position_offset() + i);
  return s;
}

template <typename T>
Var<T> embed(Tape<T>& tape, const Tensor<T>& token_table, const Tensor<T>& position_table,
             std::span<const std::size_t> tokens, std::span<const std::size_t> positions) {
  if (tokens.size() != positions.size()) {
    throw DimensionError("embed: " + std::to_string(tokens.size()) + " tokens but " +
                         std::to_string(positions.size()) + " positions");
  }
  auto tok = gather_rows(tape.param(token_table), tokens);
  auto pos = gather_rows(tape.param(position_table), positions);
  return add(tok, pos);
}

template <typename T>
Var<T> attend_layer(Tape<T>& tape, Var<T> targets, Var<T> sources, const AttentionMask& mask,
                    const LayerWeights<T>& lw, std::size_t heads) {
  const std::size_t t = targets.value().rows(), s = sources.value().rows();
  if (mask.rows() != t || mask.cols() != s) {
    throw DimensionError("encoder layer: mask " + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + " for " + std::to_string(t) +
                         " targets over " + std::to_string(s) + " sources");
  }
  auto p = [&](const Tensor<T>& x) { return tape.param(x); };
  const T eps = static_cast<T>(kLayerNormEps);
  auto q = linear(targets, p(lw.wq), p(lw.bq));
  auto k = linear(sources, p(lw.wk), p(lw.bk));
  auto v = linear(sources, p(lw.wv), p(lw.bv));
  auto a = attention(q, k, v, mask.data(), heads);
  auto o = linear(a, p(lw.wo), p(lw.bo));
  auto h = layernorm(add(targets, o), p(lw.attn_ln_gain), p(lw.attn_ln_bias), eps);
  auto f = linear(gelu(linear(h, p(lw.w1), p(lw.b1))), p(lw.w2), p(lw.b2));
  return layernorm(add(h, f), p(lw.ffn_ln_gain), p(lw.ffn_ln_bias), eps);
}

template <typename T>
Var<T> score_head(Tape<T>& tape, const Tensor<T>& scorer_w, const Tensor<T>& scorer_b, Var<T> row) {
  return linear(row, tape.param(scorer_w), tape.param(scorer_b));
}

template <typename T>
Var<T> cross_encoder_states(Tape<T>& tape, const Weights<T>& w, std::span<const TokenId> query,
                            std::span<const TokenId> doc, const MaskSpec& spec, std::size_t depth,
                            MaskCache* cache) {
  const ModelConfig& cfg = w.config;
  if (depth == 0) depth = cfg.layers;
  if (depth > cfg.layers) throw ConfigError("cross encoder: depth exceeds layer count");
  spec.validate();
  const PairSequence seq = make_pair_sequence(cfg, query, doc);
  auto x = embed(tape, w, seq.tokens, seq.positions);
  for (std::size_t l = 1; l <= depth; ++l) {
    if (cache != nullptr) {
      auto mask = cache->get(seq.layout, spec, l);
      x = encoder_layer(tape, x, *mask, w.layers[l - 1], cfg.heads);
    } else {
      x = encoder_layer(tape, x, build_mask(seq.layout, spec, l), w.layers[l - 1], cfg.heads);
    }
  }
  return x;
}

template <typename T>
Var<T> cross_encoder_score(Tape<T>& tape, const Weights<T>& w, std::span<const TokenId> query,
                           std::span<const TokenId> doc, const MaskSpec& spec, std::size_t depth,
                           MaskCache* cache) {
  auto states = cross_encoder_states(tape, w, query, doc, spec, depth, cache);
  return score_head(tape, w.scorer_w, w.scorer_b, slice_rows(states, 0, 1));
}

template <typename T>
T cross_encoder_forward(const Weights<T>& w, std::span<const TokenId> query,
                        std::span<const TokenId> doc, const MaskSpec& spec, MaskCache* cache) {
  Tape<T> tape(false);
  return cross_encoder_score(tape, w, query, doc, spec, 0, cache).value().data[0];
}

#define MICE_INSTANTIATE_TRANSFORMER(T)                                                          \
  template struct LayerWeights<T>;                                                               \
  template struct Weights<T>;                                                                    \
  template Var<T> embed(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                          \
                        std::span<const std::size_t>, std::span<const std::size_t>);             \
  template Var<T> attend_layer(Tape<T>&, Var<T>, Var<T>, const AttentionMask&,                  \
                               const LayerWeights<T>&, std::size_t);                             \
  template Var<T> score_head(Tape<T>&, const Tensor<T>&, const Tensor<T>&, Var<T>);             \
  template Var<T> cross_encoder_states(Tape<T>&, const Weights<T>&, std::span<const TokenId>,   \
                                       std::span<const TokenId>, const MaskSpec&, std::size_t,   \
                                       MaskCache*);                                              \
  template Var<T> cross_encoder_score(Tape<T>&, const Weights<T>&, std::span<const TokenId>,    \
                                      std::span<const TokenId>, const MaskSpec&, std::size_t,    \
                                      MaskCache*);                                               \
  template T cross_encoder_forward(const Weights<T>&, std::span<const TokenId>,                 \
                                   std::span<const TokenId>, const MaskSpec&, MaskCache*);

MICE_INSTANTIATE_TRANSFORMER(float)
MICE_INSTANTIATE_TRANSFORMER(double)

template Weights<double> Weights<float>::cast<double>() const;
template Weights<float> Weights<double>::cast<float>() const;
template Weights<float> Weights<float>::cast<float>() const;
template Weights<double> Weights<double>::cast<double>() const;

}  // namespace mice
