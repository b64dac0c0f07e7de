#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <random>

#include "mice/autograd.hpp"
#include "mice/kernels.hpp"
#include "oracles.hpp"

using namespace mice;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = nd(rng);
  t.requires_grad = true;
  return t;
}

std::vector<double> values(Var<double> v) { return {v.value().data.begin(), v.value().data.end()}; }

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FLOAT_EQ(t.at(1, 2), 1.5f);
  EXPECT_THROW(Tensor<float>({2, 0}), DimensionError);
  EXPECT_THROW((Tensor<float>({2, 2}, {1.f, 2.f, 3.f})), DimensionError);
}

TEST(Tensor, CastKeepsValues) {
  Tensor<double> t({2}, {0.25, -3.0});
  auto f = t.cast<float>();
  EXPECT_EQ(f.shape, t.shape);
  EXPECT_FLOAT_EQ(f[0], 0.25f);
  EXPECT_FLOAT_EQ(f[1], -3.0f);
}

TEST(Tensor, MemoryMeterTracksBuffers) {
  MemoryMeter::reset_peak();
  const auto before = MemoryMeter::current();
  {
    Tensor<double> t({1000});
    EXPECT_EQ(MemoryMeter::current(), before + 8000);
  }
  EXPECT_EQ(MemoryMeter::current(), before);
  EXPECT_GE(MemoryMeter::peak(), before + 8000);
}

TEST(Kernels, SerialAndParallelGemmAgree) {
  for (auto [r, k, n] : {std::tuple{3, 4, 2}, std::tuple{64, 48, 96}, std::tuple{130, 33, 70}}) {
    auto a = random_tensor({std::size_t(r), std::size_t(k)}, 1);
    auto b = random_tensor({std::size_t(k), std::size_t(n)}, 2);
    std::vector<double> c1(r * n), c2(r * n);
    kernels::serial::gemm_nn(a.data.data(), b.data.data(), c1.data(), r, k, n);
    kernels::gemm_nn(a.data.data(), b.data.data(), c2.data(), r, k, n);
    for (int i = 0; i < r * n; ++i) EXPECT_NEAR(c1[i], c2[i], 1e-12);
  }
}

TEST(Kernels, SerialAndParallelAttentionAgree) {
  const std::size_t t = 20, s = 37, d = 16, h = 4;
  auto q = random_tensor({t, d}, 3), k = random_tensor({s, d}, 4), v = random_tensor({s, d}, 5);
  std::vector<std::uint8_t> allow(t * s);
  std::mt19937_64 rng(6);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < s; ++j) allow[i * s + j] = (rng() % 3) != 0 || j == i;
  }
  std::vector<double> p1(h * t * s), p2(h * t * s), o1(t * d), o2(t * d);
  kernels::serial::attention_forward(q.data.data(), k.data.data(), v.data.data(), allow.data(), t, s, d, h,
                                     p1.data(), o1.data());
  kernels::attention_forward(q.data.data(), k.data.data(), v.data.data(), allow.data(), t, s, d, h,
                             p2.data(), o2.data());
  for (std::size_t i = 0; i < o1.size(); ++i) EXPECT_NEAR(o1[i], o2[i], 1e-12);
  for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_NEAR(p1[i], p2[i], 1e-12);
}

TEST(Kernels, ResultsDoNotDependOnThreadCount) {
  auto a = random_tensor({200, 100}, 7);
  auto b = random_tensor({100, 90}, 8);
  std::vector<double> c1(200 * 90), c2(200 * 90);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  kernels::gemm_nn(a.data.data(), b.data.data(), c1.data(), 200, 100, 90);
  omp_set_num_threads(4);
  kernels::gemm_nn(a.data.data(), b.data.data(), c2.data(), 200, 100, 90);
  omp_set_num_threads(saved);
  EXPECT_EQ(c1, c2);
}

TEST(Ops, MatmulIdentityAndZero) {
  Tape<double> tape;
  auto eye = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto z = tape.constant(Tensor<double>::zeros({2, 2}));
  EXPECT_EQ(values(matmul(eye, m)), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(values(matmul(m, z)), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Ops, MatmulMatchesScalarLoop) {
  auto a = random_tensor({3, 4}, 11), b = random_tensor({4, 2}, 12);
  Tape<double> tape;
  const auto c = matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-14);
    }
  }
}

TEST(Ops, MatmulRejectsMismatch) {
  Tape<double> tape;
  EXPECT_THROW(matmul(tape.constant(Tensor<double>({2, 3})), tape.constant(Tensor<double>({2, 3}))),
               DimensionError);
}

TEST(Ops, MaskedSoftmaxHandValues) {
  Tape<double> tape;
  const std::vector<std::uint8_t> first{1, 0, 0};
  EXPECT_EQ(values(masked_softmax(tape.constant(Tensor<double>({3}, {5, 9, 2})), first)),
            (std::vector<double>{1, 0, 0}));

  const std::vector<std::uint8_t> three{1, 1, 0, 1};
  for (double c : {-7.0, 0.0, 123.0}) {
    auto p = values(masked_softmax(tape.constant(Tensor<double>({4}, {c, c, c, c})), three));
    EXPECT_NEAR(p[0], 1.0 / 3, 1e-15);
    EXPECT_NEAR(p[1], 1.0 / 3, 1e-15);
    EXPECT_EQ(p[2], 0.0);
    EXPECT_NEAR(p[3], 1.0 / 3, 1e-15);
  }

  const std::vector<std::uint8_t> all{1, 1, 1};
  auto p = values(masked_softmax(tape.constant(Tensor<double>({3}, {0, std::log(2.0), std::log(4.0)})), all));
  EXPECT_NEAR(p[0], 1.0 / 7, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 7, 1e-15);
  EXPECT_NEAR(p[2], 4.0 / 7, 1e-15);
}

TEST(Ops, MaskedSoftmaxRejectsEmptyRow) {
  Tape<double> tape;
  const std::vector<std::uint8_t> none{0, 0};
  EXPECT_THROW(masked_softmax(tape.constant(Tensor<double>({2}, {1, 2})), none), ContractError);
}

TEST(Ops, LayernormOfConstantRowIsBias) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 4}, 3.0));
  auto g = tape.constant(Tensor<double>({4}, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor<double>({4}, {0.5, -1, 2, 0}));
  auto y = values(layernorm(x, g, b, 1e-5));
  EXPECT_EQ(y, (std::vector<double>{0.5, -1, 2, 0}));
}

TEST(Ops, GeluHandValues) {
  Tape<double> tape;
  auto y = values(gelu(tape.constant(Tensor<double>({3}, {0, 1, -1}))));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-15);
  EXPECT_NEAR(y[2], -0.5 * (1 - std::erf(1 / std::sqrt(2.0))), 1e-15);
}

TEST(Ops, LinearWithIdentityIsNoop) {
  Tape<double> tape;
  auto x = random_tensor({3, 2}, 13);
  auto y = linear(tape.constant(x), tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1})),
                  tape.constant(Tensor<double>::zeros({2})));
  EXPECT_EQ(values(y), std::vector<double>(x.data.begin(), x.data.end()));
}

TEST(Autograd, SumGradientIsOnes) {
  auto x = random_tensor({2, 3}, 14);
  Tape<double> tape;
  tape.backward(sum(tape.param(x)));
  const auto* g = tape.grad(x);
  ASSERT_NE(g, nullptr);
  for (double v : *g) EXPECT_EQ(v, 1.0);
}

TEST(Autograd, SquareGradientIsTwiceInput) {
  auto x = random_tensor({5}, 15);
  Tape<double> tape;
  auto v = tape.param(x);
  tape.backward(sum(mul(v, v)));
  const auto* g = tape.grad(x);
  ASSERT_NE(g, nullptr);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ((*g)[i], 2 * x[i]);
}

TEST(Autograd, ReusedParameterAccumulates) {
  auto x = random_tensor({3}, 16);
  Tape<double> tape;
  tape.backward(sum(add(tape.param(x), tape.param(x))));
  for (double v : *tape.grad(x)) EXPECT_EQ(v, 2.0);
}

TEST(Autograd, NoGradTapeRecordsNoGradients) {
  auto x = random_tensor({3}, 17);
  Tape<double> tape(false);
  auto v = tape.param(x);
  EXPECT_FALSE(tape.needs_grad(v));
}

// Every op inside one composite graph, checked against central differences.
TEST(Autograd, CompositeGraphMatchesFiniteDifferences) {
  auto x = random_tensor({4, 8}, 20);
  auto w = random_tensor({8, 8}, 21, 0.3);
  auto b = random_tensor({8}, 22);
  auto g = random_tensor({8}, 23);
  auto beta = random_tensor({8}, 24);
  auto kv = random_tensor({6, 8}, 25);
  auto table = random_tensor({10, 8}, 26);
  std::vector<std::uint8_t> allow(4 * 10);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 10; ++j) allow[i * 10 + j] = (i + j) % 3 != 0;
  }
  const std::vector<std::size_t> ids{1, 7, 7, 3};
  std::vector<std::pair<std::string, Tensor<double>*>> params{
      {"x", &x}, {"w", &w}, {"b", &b}, {"g", &g}, {"beta", &beta}, {"kv", &kv}, {"table", &table}};
  auto loss = [&](Tape<double>& t) {
    auto h = linear(t.param(x), t.param(w), t.param(b));
    h = add(h, gather_rows(t.param(table), ids));
    auto src = concat_rows(h, t.param(kv));
    auto a = attention(h, src, src, allow, 2);
    auto n = layernorm(add(a, h), t.param(g), t.param(beta), 1e-5);
    auto top = slice_rows(gelu(n), 1, 2);
    auto logits = matmul(top, t.param(w));
    auto p = masked_softmax(logits, std::span<const std::uint8_t>(allow.data(), 8));
    return sum(mul(scale(sub(p, slice_rows(h, 0, 2)), 1.5), p));
  };
  const auto res = oracle::check_gradients(params, loss);
  EXPECT_EQ(res.failed, 0u) << "worst " << res.worst_rel << " at " << res.worst_where;
  EXPECT_GT(res.checked, 200u);
}

TEST(Autograd, DeterministicAcrossRuns) {
  auto x = random_tensor({4, 8}, 30);
  auto w = random_tensor({8, 8}, 31);
  auto run = [&] {
    Tape<double> t;
    auto y = gelu(matmul(t.param(x), t.param(w)));
    t.backward(sum(y));
    return std::pair{std::vector<double>(y.value().data.begin(), y.value().data.end()),
                     std::vector<double>(t.grad(w)->begin(), t.grad(w)->end())};
  };
  EXPECT_EQ(run(), run());
}
