#include <gtest/gtest.h>

#include <cmath>

#include "mice/transformer.hpp"
#include "oracles.hpp"

using namespace mice;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor<double>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  }
  return m;
}

Mat affine(const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
  Mat out(x.size(), std::vector<double>(w.cols()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b[j];
      for (std::size_t k = 0; k < x[i].size(); ++k) s += x[i][k] * w.at(k, j);
      out[i][j] = s;
    }
  }
  return out;
}

void layer_norm(Mat& x, const Tensor<double>& g, const Tensor<double>& b) {
  for (auto& row : x) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= row.size();
    for (double v : row) var += (v - mean) * (v - mean);
    var /= row.size();
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
}

// Textbook post-LN encoder layer; allow[i][j] restricts attention.
Mat reference_layer(const Mat& x, const LayerWeights<double>& lw, std::size_t heads,
                    const std::vector<std::vector<bool>>& allow) {
  const std::size_t t = x.size(), d = x[0].size(), dh = d / heads;
  const Mat q = affine(x, lw.wq, lw.bq), k = affine(x, lw.wk, lw.bk), v = affine(x, lw.wv, lw.bv);
  Mat mixed(t, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> w(t, 0.0);
      double mx = -INFINITY, z = 0;
      for (std::size_t j = 0; j < t; ++j) {
        if (!allow[i][j]) continue;
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
        w[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, w[j]);
      }
      for (std::size_t j = 0; j < t; ++j) {
        w[j] = allow[i][j] ? std::exp(w[j] - mx) : 0.0;
        z += w[j];
      }
      for (std::size_t j = 0; j < t; ++j) {
        for (std::size_t c = 0; c < dh; ++c) mixed[i][h * dh + c] += w[j] / z * v[j][h * dh + c];
      }
    }
  }
  Mat h1 = affine(mixed, lw.wo, lw.bo);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < d; ++c) h1[i][c] += x[i][c];
  }
  layer_norm(h1, lw.attn_ln_gain, lw.attn_ln_bias);
  Mat f = affine(h1, lw.w1, lw.b1);
  for (auto& row : f) {
    for (auto& val : row) val = 0.5 * val * (1 + std::erf(val / std::sqrt(2.0)));
  }
  Mat out = affine(f, lw.w2, lw.b2);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t c = 0; c < d; ++c) out[i][c] += h1[i][c];
  }
  layer_norm(out, lw.ffn_ln_gain, lw.ffn_ln_bias);
  return out;
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.hidden = 16;
  cfg.heads = 4;
  cfg.ffn = 24;
  cfg.vocab = 40;
  cfg.max_query = 6;
  cfg.max_doc = 9;
  cfg.first_interaction = 1;
  cfg.interaction_layers = 2;
  return cfg;
}

Weights<double> small_weights(std::uint64_t seed = 3) {
  auto w = Weights<double>::init(small_config(), seed);
  oracle::jitter(w, seed + 100);
  return w;
}

// Hand-built joint sequence and reference forward over the first `depth` layers.
Mat reference_joint(const Weights<double>& w, const std::vector<TokenId>& q, const std::vector<TokenId>& d,
                    const std::string& step, std::size_t ell_star, std::size_t depth) {
  std::vector<std::size_t> tokens{kClsId}, positions;
  tokens.insert(tokens.end(), q.begin(), q.end());
  tokens.push_back(kSepId);
  tokens.insert(tokens.end(), d.begin(), d.end());
  tokens.push_back(kSepId);
  for (std::size_t i = 0; i < q.size() + 2; ++i) positions.push_back(i);
  for (std::size_t i = 0; i < d.size() + 1; ++i) positions.push_back(w.config.max_query + 2 + i);
  Mat x(tokens.size(), std::vector<double>(w.config.hidden));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t c = 0; c < w.config.hidden; ++c) {
      x[i][c] = w.token_embedding.at(tokens[i], c) + w.position_embedding.at(positions[i], c);
    }
  }
  for (std::size_t l = 1; l <= depth; ++l) {
    x = reference_layer(x, w.layers[l - 1], w.config.heads,
                        oracle::mask_matrix(step, q.size(), d.size(), l, ell_star));
  }
  return x;
}

double max_diff(const Mat& a, const Tensor<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b.at(i, j)));
  }
  return worst;
}

}  // namespace

TEST(Transformer, ConfigValidation) {
  auto cfg = small_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.heads = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.interaction_layers = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.first_interaction = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Transformer, EmbedIsTableRowSum) {
  const auto w = small_weights();
  Tape<double> tape(false);
  const std::vector<std::size_t> ids{5, 9, 5}, pos{0, 3, 7};
  const auto e = embed(tape, w, ids, pos).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 16; ++c) {
      EXPECT_EQ(e.at(i, c), w.token_embedding.at(ids[i], c) + w.position_embedding.at(pos[i], c));
    }
  }
  const std::vector<std::size_t> bad{40};
  const std::vector<std::size_t> p0{0};
  EXPECT_THROW(embed(tape, w, bad, p0), InputError);
}

TEST(Transformer, PairSequenceLayout) {
  const auto cfg = small_config();
  const std::vector<TokenId> q{7, 8}, d{9, 10, 11};
  const auto seq = make_pair_sequence(cfg, q, d);
  EXPECT_EQ(seq.tokens, (std::vector<std::size_t>{kClsId, 7, 8, kSepId, 9, 10, 11, kSepId}));
  EXPECT_EQ(seq.positions, (std::vector<std::size_t>{0, 1, 2, 3, 8, 9, 10, 11}));
  const std::vector<TokenId> empty;
  EXPECT_THROW(make_pair_sequence(cfg, empty, d), InputError);
}

TEST(Transformer, HeadTruncation) {
  const auto cfg = small_config();
  std::vector<TokenId> long_doc(20), long_query(10);
  for (std::size_t i = 0; i < 20; ++i) long_doc[i] = TokenId(4 + i);
  for (std::size_t i = 0; i < 10; ++i) long_query[i] = TokenId(4 + i);
  const auto d = truncate_doc(cfg, long_doc);
  ASSERT_EQ(d.size(), cfg.max_doc);
  EXPECT_EQ(d.front(), 4u);
  EXPECT_EQ(truncate_query(cfg, long_query).size(), cfg.max_query);
}

TEST(Transformer, UnmaskedLayerMatchesReference) {
  const auto w = small_weights();
  std::mt19937_64 rng(1);
  auto x = Tensor<double>({7, 16});
  for (auto& v : x.data) v = std::normal_distribution<double>()(rng);
  AttentionMask all(7, 7, true);
  Tape<double> tape(false);
  const auto out = encoder_layer(tape, tape.constant(x), all, w.layers[0], 4).value();
  const std::vector<std::vector<bool>> allow(7, std::vector<bool>(7, true));
  EXPECT_LT(max_diff(reference_layer(to_mat(x), w.layers[0], 4, allow), out), 1e-12);
}

TEST(Transformer, SelfOnlyRowCopiesValue) {
  std::mt19937_64 rng(2);
  Tensor<double> q({3, 8}), k({3, 8}), v({3, 8});
  for (auto* t : {&q, &k, &v}) {
    for (auto& x : t->data) x = std::normal_distribution<double>()(rng);
  }
  std::vector<std::uint8_t> allow{1, 1, 1, 0, 1, 0, 1, 0, 1};
  Tape<double> tape(false);
  const auto out = attention(tape.constant(q), tape.constant(k), tape.constant(v), allow, 2).value();
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(out.at(1, c), v.at(1, c));
}

TEST(Transformer, BlockDiagonalMaskIsolatesBlocks) {
  const auto w = small_weights();
  std::mt19937_64 rng(4);
  Tensor<double> x({6, 16});
  for (auto& v : x.data) v = std::normal_distribution<double>()(rng);
  AttentionMask mask(6, 6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) mask.set(i, j, (i < 2) == (j < 2));
  }
  auto y = x;
  for (std::size_t i = 2; i < 6; ++i) {
    for (std::size_t c = 0; c < 16; ++c) y.at(i, c) = 100.0 * std::normal_distribution<double>()(rng);
  }
  Tape<double> tape(false);
  const auto a = encoder_layer(tape, tape.constant(x), mask, w.layers[0], 4).value();
  const auto b = encoder_layer(tape, tape.constant(y), mask, w.layers[0], 4).value();
  for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(a[c], b[c]);
}

TEST(Transformer, MaskedForwardMatchesReferenceForEveryStep) {
  const auto w = small_weights();
  std::mt19937_64 rng(5);
  for (const auto& step : oracle::all_steps()) {
    const auto q = oracle::random_tokens(rng, oracle::random_len(rng, 1, 6), 40);
    const auto d = oracle::random_tokens(rng, oracle::random_len(rng, 1, 9), 40);
    MaskSpec spec{oracle::step_of(step), 2, 3};
    Tape<double> tape(false);
    const auto states = cross_encoder_states(tape, w, q, d, spec).value();
    EXPECT_LT(max_diff(reference_joint(w, q, d, step, 2, 3), states), 1e-12) << step;
  }
}

TEST(Transformer, BaselineScoreIsScorerOverCls) {
  const auto w = small_weights();
  const std::vector<TokenId> q{5, 6}, d{7, 8, 9, 10};
  const auto ref = reference_joint(w, q, d, "baseline", 1, 3);
  double want = w.scorer_b[0];
  for (std::size_t c = 0; c < 16; ++c) want += ref[0][c] * w.scorer_w[c];
  const double got = cross_encoder_forward(w, q, d, MaskSpec{MaskStep::Baseline, 1, 3});
  EXPECT_NEAR(got, want, 1e-12);
}

TEST(Transformer, Step3LowerLayersMatchIsolatedStreams) {
  const auto w = small_weights();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto q = oracle::random_tokens(rng, oracle::random_len(rng, 1, 6), 40);
    const auto d = oracle::random_tokens(rng, oracle::random_len(rng, 1, 9), 40);
    const MaskSpec spec{MaskStep::Step3, 2, 3};
    Tape<double> tape(false);
    const auto joint = cross_encoder_states(tape, w, q, d, spec, 2).value();
    // Perturbing the document leaves the query rows unchanged, and vice versa.
    auto d2 = oracle::random_tokens(rng, d.size(), 40);
    auto q2 = oracle::random_tokens(rng, q.size(), 40);
    const auto other_doc = cross_encoder_states(tape, w, q, d2, spec, 2).value();
    const auto other_query = cross_encoder_states(tape, w, q2, d, spec, 2).value();
    const std::size_t qrows = q.size() + 2;
    EXPECT_EQ(oracle::max_abs_diff(joint, other_doc, 0, 0, qrows), 0.0);
    EXPECT_EQ(oracle::max_abs_diff(joint, other_query, qrows, qrows, d.size() + 1), 0.0);
  }
}

TEST(Transformer, ScoresAreDeterministic) {
  const auto w = small_weights();
  const std::vector<TokenId> q{5, 6}, d{7, 8, 9};
  const MaskSpec spec{MaskStep::Step2, 1, 3};
  EXPECT_EQ(cross_encoder_forward(w, q, d, spec), cross_encoder_forward(w, q, d, spec));
  EXPECT_EQ(cross_encoder_forward(w.cast<float>(), q, d, spec),
            cross_encoder_forward(w.cast<float>(), q, d, spec));
}

TEST(Transformer, InitIsSeeded) {
  const auto a = Weights<float>::init(small_config(), 9);
  const auto b = Weights<float>::init(small_config(), 9);
  const auto c = Weights<float>::init(small_config(), 10);
  EXPECT_EQ(a.layers[1].w1.data, b.layers[1].w1.data);
  EXPECT_NE(a.layers[1].w1.data, c.layers[1].w1.data);
}

TEST(Transformer, CrossEncoderGradientsMatchFiniteDifferences) {
  auto cfg = small_config();
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 12;
  cfg.vocab = 12;
  cfg.max_query = 3;
  cfg.max_doc = 4;
  cfg.interaction_layers = 1;
  auto w = Weights<double>::init(cfg, 11);
  oracle::jitter(w, 12);
  const std::vector<TokenId> q{4, 5}, d{6, 7, 8};
  const MaskSpec spec{MaskStep::Step3, 1, 2};
  const auto res = oracle::check_gradients(oracle::named_params(w), [&](Tape<double>& t) {
    return cross_encoder_score(t, w, q, d, spec);
  });
  EXPECT_EQ(res.failed, 0u) << "worst " << res.worst_rel << " at " << res.worst_where;
}
