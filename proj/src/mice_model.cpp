#include "mice/mice_model.hpp"
#include "mice/parallel.hpp"

#include <memory>

namespace mice {

namespace {

// Rule set for every stream: Step3 below ℓ* keeps query and document apart,
// above ℓ* lets Q read D while CLS and the sinks stay closed.
constexpr MaskStep kStreamStep = MaskStep::Step3;

}  // namespace

template <typename T>
std::size_t MiceWeights<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
  return n;
}

template <typename T>
MiceWeights<T> from_cross_encoder(const Weights<T>& ce, std::size_t ell_star, std::size_t k_inter) {
  const std::size_t depth = ce.layers.size();
  if (ell_star < 1 || k_inter < 1 || ell_star + k_inter > depth) {
    throw ConfigError("from_cross_encoder: ell_star=" + std::to_string(ell_star) +
                      ", k_inter=" + std::to_string(k_inter) + " do not fit " +
                      std::to_string(depth) + " layers");
  }
  MiceWeights<T> w;
  w.config = ce.config;
  w.config.first_interaction = ell_star;
  w.config.interaction_layers = k_inter;
  w.token_embedding = ce.token_embedding;
  w.position_embedding = ce.position_embedding;
  w.lower.assign(ce.layers.begin(), ce.layers.begin() + static_cast<std::ptrdiff_t>(ell_star));
  w.interaction.assign(ce.layers.begin() + static_cast<std::ptrdiff_t>(ell_star),
                       ce.layers.begin() + static_cast<std::ptrdiff_t>(ell_star + k_inter));
  w.scorer_w = ce.scorer_w;
  w.scorer_b = ce.scorer_b;
  w.visit([](const std::string&, Tensor<T>& t) { t.grad.clear(); });
  return w;
}

template <typename T>
CheckpointData to_checkpoint(const MiceWeights<T>& w) {
  CheckpointData ckpt;
  ckpt.kind = ModelKind::Mice;
  ckpt.config = w.config;
  w.visit([&](const std::string& name, const Tensor<T>& t) {
    ckpt.tensors.emplace_back(name, t.template cast<float>());
  });
  return ckpt;
}

template <typename T>
MiceWeights<T> mice_weights_from_checkpoint(const CheckpointData& ckpt) {
  if (ckpt.kind != ModelKind::Mice) {
    throw FormatError("checkpoint holds a cross-encoder, expected a mid-fusion model");
  }
  const ModelConfig& cfg = ckpt.config;
  cfg.validate();
  MiceWeights<T> w;
  w.config = cfg;
  w.lower.resize(cfg.first_interaction);
  w.interaction.resize(cfg.interaction_layers);
  w.visit([&](const std::string& name, Tensor<T>& t) {
    t = ckpt.get(name).template cast<T>();
    t.requires_grad = true;
  });
  // Shape check against a freshly laid-out model.
  auto expected = from_cross_encoder(Weights<T>::init(cfg, 0), cfg.first_interaction,
                                     cfg.interaction_layers);
  std::vector<Shape> shapes;
  expected.visit([&](const std::string&, const Tensor<T>& t) { shapes.push_back(t.shape); });
  std::size_t i = 0;
  w.visit([&](const std::string& name, const Tensor<T>& t) {
    if (t.shape != shapes[i++]) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(t.shape));
    }
  });
  return w;
}

template <typename T>
MiceModel<T>::MiceModel(MiceWeights<T> weights) : w_(std::move(weights)) {
  w_.config.validate();
  refresh_fingerprint();
}

template <typename T>
MiceModel<T>::MiceModel(MiceWeights<T> weights, const Fingerprint& fingerprint)
    : w_(std::move(weights)), fingerprint_(fingerprint) {
  w_.config.validate();
}

template <typename T>
void MiceModel<T>::refresh_fingerprint() {
  fingerprint_ = io::sha256(serialize_checkpoint(to_checkpoint(w_)));
}

template <typename T>
Var<T> MiceModel<T>::encode_query(Tape<T>& tape, std::span<const TokenId> query) const {
  const ModelConfig& cfg = w_.config;
  const PairSequence seq = make_query_sequence(cfg, query);
  const AttentionMask mask =
      build_stream_mask(seq.layout.seg, seq.layout.seg, kStreamStep, 1, cfg.first_interaction);
  auto x = embed(tape, w_.token_embedding, w_.position_embedding, seq.tokens, seq.positions);
  for (const auto& lw : w_.lower) x = encoder_layer(tape, x, mask, lw, cfg.heads);
  return x;
}

template <typename T>
Tensor<T> MiceModel<T>::encode_query(std::span<const TokenId> query) const {
  Tape<T> tape(false);
  return encode_query(tape, query).value();
}

template <typename T>
Var<T> MiceModel<T>::encode_document(Tape<T>& tape, std::span<const TokenId> doc) const {
  const ModelConfig& cfg = w_.config;
  const PairSequence seq = make_doc_sequence(cfg, doc);
  const AttentionMask mask =
      build_stream_mask(seq.layout.seg, seq.layout.seg, kStreamStep, 1, cfg.first_interaction);
  auto x = embed(tape, w_.token_embedding, w_.position_embedding, seq.tokens, seq.positions);
  for (const auto& lw : w_.lower) x = encoder_layer(tape, x, mask, lw, cfg.heads);
  return x;
}

template <typename T>
DocState<T> MiceModel<T>::encode_document(std::string doc_id, std::span<const TokenId> doc) const {
  Tape<T> tape(false);
  DocState<T> state;
  state.states = encode_document(tape, doc).value();
  state.states.requires_grad = false;
  state.m = state.states.rows() - 1;
  state.doc_id = std::move(doc_id);
  state.checkpoint = fingerprint_;
  return state;
}

template <typename T>
Var<T> MiceModel<T>::interaction_layer(Tape<T>& tape, Var<T> query_states, Var<T> doc_states,
                                       std::size_t index) const {
  const ModelConfig& cfg = w_.config;
  if (index < 1 || index > w_.interaction.size()) {
    throw ConfigError("interaction layer " + std::to_string(index) + " outside 1.." +
                      std::to_string(w_.interaction.size()));
  }
  const std::size_t q_rows = query_states.value().rows();
  const std::size_t d_rows = doc_states.value().rows();
  if (q_rows < 3 || d_rows < 2) {
    throw DimensionError("interaction layer: query stream needs >= 3 rows and document >= 2");
  }
  std::vector<Segment> targets(q_rows, Segment::Query);
  targets.front() = Segment::Cls;
  targets.back() = Segment::Sep1;
  std::vector<Segment> sources = targets;
  sources.insert(sources.end(), d_rows - 1, Segment::Doc);
  sources.push_back(Segment::Sep2);
  const AttentionMask mask = build_stream_mask(targets, sources, kStreamStep,
                                               cfg.first_interaction + index, cfg.first_interaction);
  auto all_sources = concat_rows(query_states, doc_states);
  return attend_layer(tape, query_states, all_sources, mask, w_.interaction[index - 1], cfg.heads);
}

template <typename T>
void MiceModel<T>::check_state(const DocState<T>& doc) const {
  if (doc.checkpoint != fingerprint_) {
    throw ConsistencyError("document state '" + doc.doc_id + "' was encoded with checkpoint " +
                           to_hex(doc.checkpoint) + ", model is " + to_hex(fingerprint_));
  }
  if (doc.states.rank() != 2 || doc.states.cols() != w_.config.hidden ||
      doc.states.rows() != doc.m + 1) {
    throw DimensionError("document state '" + doc.doc_id + "' has shape " +
                         shape_str(doc.states.shape));
  }
}

template <typename T>
Var<T> MiceModel<T>::interaction_layer(Tape<T>& tape, Var<T> query_states, const DocState<T>& doc,
                                       std::size_t index) const {
  check_state(doc);
  return interaction_layer(tape, query_states, tape.param(doc.states), index);
}

template <typename T>
Var<T> MiceModel<T>::run_interactions(Tape<T>& tape, Var<T> q, Var<T> doc) const {
  for (std::size_t j = 1; j <= w_.interaction.size(); ++j) q = interaction_layer(tape, q, doc, j);
  return score_head(tape, w_.scorer_w, w_.scorer_b, slice_rows(q, 0, 1));
}

template <typename T>
Var<T> MiceModel<T>::score(Tape<T>& tape, std::span<const TokenId> query,
                           const DocState<T>& doc) const {
  check_state(doc);
  return run_interactions(tape, encode_query(tape, query), tape.param(doc.states));
}

template <typename T>
Var<T> MiceModel<T>::score_online(Tape<T>& tape, std::span<const TokenId> query,
                                  std::span<const TokenId> doc) const {
  auto q = encode_query(tape, query);
  auto d = encode_document(tape, doc);
  return run_interactions(tape, q, d);
}

template <typename T>
T MiceModel<T>::score(std::span<const TokenId> query, const DocState<T>& doc) const {
  Tape<T> tape(false);
  return score(tape, query, doc).value().data[0];
}

template <typename T>
T MiceModel<T>::score_encoded(const Tensor<T>& query_states, const DocState<T>& doc) const {
  check_state(doc);
  Tape<T> tape(false);
  return run_interactions(tape, tape.param(query_states), tape.param(doc.states)).value().data[0];
}

template <typename T>
std::vector<T> MiceModel<T>::score_batch(std::span<const TokenId> query,
                                         std::span<const DocState<T>* const> docs) const {
  for (const auto* d : docs) check_state(*d);
  std::vector<T> out(docs.size());
  // The query stream is shared by every document: encode it once.
  const Tensor<T> q_states = encode_query(query);
  parallel_for(docs.size(), [&](std::size_t i) { out[i] = score_encoded(q_states, *docs[i]); });
  return out;
}

#define MICE_INSTANTIATE_MODEL(T)                                                              \
  template struct MiceWeights<T>;                                                              \
  template MiceWeights<T> from_cross_encoder(const Weights<T>&, std::size_t, std::size_t);     \
  template CheckpointData to_checkpoint(const MiceWeights<T>&);                                \
  template MiceWeights<T> mice_weights_from_checkpoint(const CheckpointData&);                 \
  template class MiceModel<T>;

MICE_INSTANTIATE_MODEL(float)
MICE_INSTANTIATE_MODEL(double)

}  // namespace mice
