#include <gtest/gtest.h>

#include "mice/masking.hpp"
#include "oracles.hpp"

using namespace mice;

namespace {

MaskSpec spec_of(const std::string& step, std::size_t ell_star, std::size_t layers) {
  MaskSpec s;
  s.step = oracle::step_of(step);
  s.ell_star = ell_star;
  s.total_layers = layers;
  return s;
}

bool matches_oracle(const AttentionMask& mask, const std::vector<std::vector<bool>>& want) {
  if (mask.rows() != want.size() || mask.cols() != want.size()) return false;
  for (std::size_t i = 0; i < want.size(); ++i) {
    for (std::size_t j = 0; j < want.size(); ++j) {
      if (mask.allowed(i, j) != want[i][j]) return false;
    }
  }
  return true;
}

SegmentSet set_of(std::initializer_list<Segment> s) { return SegmentSet(s); }

}  // namespace

TEST(Masking, AllowedSourcesExamples) {
  EXPECT_EQ(allowed_sources(MaskStep::Step2, Segment::Doc, 1, 1), set_of({Segment::Doc, Segment::Sep2}));
  EXPECT_EQ(allowed_sources(MaskStep::Step2, Segment::Doc, 9, 3), set_of({Segment::Doc, Segment::Sep2}));
  EXPECT_EQ(allowed_sources(MaskStep::Baseline, Segment::Query, 1, 1), SegmentSet::all());
  EXPECT_EQ(allowed_sources(MaskStep::Step3, Segment::Query, 2, 4), set_of({Segment::Query, Segment::Sep1}));
  EXPECT_EQ(allowed_sources(MaskStep::Step3, Segment::Query, 5, 4),
            set_of({Segment::Query, Segment::Sep1, Segment::Doc}));
}

TEST(Masking, LayoutPositions) {
  auto l = SegmentLayout::make(2, 3);
  EXPECT_EQ(l.length(), 8u);
  EXPECT_EQ(l.sep1(), 3u);
  EXPECT_EQ(l.doc_begin(), 4u);
  EXPECT_EQ(l.sep2(), 7u);
  EXPECT_EQ(l.seg[0], Segment::Cls);
  EXPECT_EQ(l.seg[7], Segment::Sep2);
  EXPECT_THROW(SegmentLayout::make(0, 3), InputError);
  EXPECT_THROW(SegmentLayout::make(2, 0), InputError);
}

TEST(Masking, BuildMaskMatchesRuleInterpreter) {
  const std::size_t layers = 4, ell_star = 2;
  for (auto [n, m] : {std::pair{1, 1}, std::pair{2, 3}, std::pair{5, 7}}) {
    const auto layout = SegmentLayout::make(n, m);
    for (const auto& step : oracle::all_steps()) {
      for (std::size_t layer = 1; layer <= layers; ++layer) {
        const auto mask = build_mask(layout, spec_of(step, ell_star, layers), layer);
        EXPECT_TRUE(matches_oracle(mask, oracle::mask_matrix(step, n, m, layer, ell_star)))
            << step << " n=" << n << " m=" << m << " layer=" << layer;
      }
    }
  }
}

TEST(Masking, Step1ClsRowOnSmallLayout) {
  const auto mask = build_mask(SegmentLayout::make(2, 3), spec_of("step1", 1, 2), 2);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(mask.allowed(0, j), j <= 3) << j;
}

TEST(Masking, Step3LowerLayersAreBlockDiagonal) {
  for (auto [n, m] : {std::pair{1, 1}, std::pair{2, 3}, std::pair{5, 7}}) {
    const auto layout = SegmentLayout::make(n, m);
    for (std::size_t layer = 1; layer <= 3; ++layer) {
      const auto mask = build_mask(layout, spec_of("step3", 3, 4), layer);
      const std::size_t q_end = layout.doc_begin();
      for (std::size_t i = 0; i < layout.length(); ++i) {
        for (std::size_t j = 0; j < layout.length(); ++j) {
          if ((i < q_end) != (j < q_end)) EXPECT_FALSE(mask.allowed(i, j)) << i << "," << j;
        }
      }
    }
  }
}

TEST(Masking, BaselineIsAllTrue) {
  const auto mask = build_mask(SegmentLayout::make(3, 4), spec_of("baseline", 1, 2), 1);
  EXPECT_EQ(mask.count(), 10u * 10u);
}

TEST(Masking, StepsAreMonotone) {
  const auto layout = SegmentLayout::make(3, 5);
  for (std::size_t layer = 1; layer <= 4; ++layer) {
    AttentionMask prev;
    for (const auto& step : oracle::all_steps()) {
      const auto mask = build_mask(layout, spec_of(step, 2, 4), layer);
      if (prev.rows() != 0) {
        for (std::size_t i = 0; i < mask.rows(); ++i) {
          for (std::size_t j = 0; j < mask.cols(); ++j) {
            if (mask.allowed(i, j)) EXPECT_TRUE(prev.allowed(i, j)) << step << " " << i << "," << j;
          }
        }
      }
      prev = mask;
    }
  }
}

TEST(Masking, NoEmptyRows) {
  for (auto [n, m] : {std::pair{1, 1}, std::pair{4, 2}}) {
    const auto layout = SegmentLayout::make(n, m);
    for (const auto& step : oracle::all_steps()) {
      for (std::size_t layer = 1; layer <= 3; ++layer) {
        const auto mask = build_mask(layout, spec_of(step, 1, 3), layer);
        for (std::size_t i = 0; i < mask.rows(); ++i) {
          bool any = false;
          for (std::size_t j = 0; j < mask.cols(); ++j) any = any || mask.allowed(i, j);
          EXPECT_TRUE(any) << step << " row " << i;
        }
      }
    }
  }
}

TEST(Masking, PaddingKeepsRealBlockAndIsolatesPads) {
  const auto mask = build_mask(SegmentLayout::make(2, 2), spec_of("step2", 1, 2), 1);
  const auto padded = mask.padded(10);
  ASSERT_EQ(padded.rows(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      const bool want = (i < 7 && j < 7) ? mask.allowed(i, j) : (i >= 7 && i == j);
      EXPECT_EQ(padded.allowed(i, j), want) << i << "," << j;
    }
  }
}

TEST(Masking, InvalidLayerOrSplitIsRejected) {
  const auto layout = SegmentLayout::make(1, 1);
  EXPECT_THROW(build_mask(layout, spec_of("step0", 1, 2), 0), ConfigError);
  EXPECT_THROW(build_mask(layout, spec_of("step0", 1, 2), 3), ConfigError);
  EXPECT_THROW(spec_of("step3", 3, 2).validate(), ConfigError);
  EXPECT_THROW(spec_of("step3", 0, 2).validate(), ConfigError);
}

TEST(Masking, ParseStepNames) {
  EXPECT_EQ(parse_step("baseline"), MaskStep::Baseline);
  EXPECT_EQ(parse_step("2"), MaskStep::Step2);
  EXPECT_EQ(parse_step("step3"), MaskStep::Step3);
  EXPECT_THROW(parse_step("step4"), UsageError);
}

TEST(Masking, CacheReturnsSameMaskForSameKey) {
  MaskCache cache;
  const auto layout = SegmentLayout::make(2, 3);
  const auto spec = spec_of("step3", 2, 4);
  auto a = cache.get(layout, spec, 1);
  auto b = cache.get(layout, spec, 2);
  auto c = cache.get(layout, spec, 3);
  EXPECT_EQ(a.get(), b.get());
  EXPECT_NE(a.get(), c.get());
  EXPECT_EQ(*c, build_mask(layout, spec, 3));
}
