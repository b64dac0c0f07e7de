#pragma once

// Segment layout of a query-document pair and the block attention masks of
// the cumulative masking steps.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mice/common.hpp"

namespace mice {

enum class Segment : std::uint8_t { Cls = 0, Query = 1, Sep1 = 2, Doc = 3, Sep2 = 4 };

inline constexpr std::size_t kSegmentCount = 5;

const char* segment_name(Segment s);

/// Small set of segment labels.
class SegmentSet {
 public:
  constexpr SegmentSet() = default;
  constexpr SegmentSet(std::initializer_list<Segment> segs) {
    for (Segment s : segs) insert(s);
  }
  static constexpr SegmentSet all() {
    return {Segment::Cls, Segment::Query, Segment::Sep1, Segment::Doc, Segment::Sep2};
  }

  constexpr void insert(Segment s) { bits_ |= bit(s); }
  constexpr void erase(Segment s) { bits_ &= static_cast<std::uint8_t>(~bit(s)); }
  constexpr bool contains(Segment s) const { return (bits_ & bit(s)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr bool operator==(const SegmentSet&) const = default;
  std::string str() const;

 private:
  static constexpr std::uint8_t bit(Segment s) {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(s));
  }
  std::uint8_t bits_ = 0;
};

/// Positions of [CLS, Q×n, SEP1, D×m, SEP2].
struct SegmentLayout {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<Segment> seg;

  /// Throws InputError unless n ≥ 1 and m ≥ 1.
  static SegmentLayout make(std::size_t n, std::size_t m);

  std::size_t length() const noexcept { return n + m + 3; }
  std::size_t sep1() const noexcept { return n + 1; }
  std::size_t doc_begin() const noexcept { return n + 2; }
  std::size_t sep2() const noexcept { return n + m + 2; }
};

enum class MaskStep { Baseline, Step0, Step1, Step2, Step3 };

const char* step_name(MaskStep s);
/// Parses "baseline", "0".."3" or "step0".."step3".
MaskStep parse_step(const std::string& text);

struct MaskSpec {
  MaskStep step = MaskStep::Baseline;
  /// Last layer of independent contextualization; read only by Step3.
  std::size_t ell_star = 1;
  std::size_t total_layers = 1;

  /// Throws ConfigError when Step3 has ell_star outside 1..total_layers.
  void validate() const;
};

/// Row = attending (target) position, column = attended (source) position.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), allow_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool allowed(std::size_t i, std::size_t j) const { return allow_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { allow_[i * cols_ + j] = v ? 1 : 0; }
  std::span<const std::uint8_t> data() const noexcept { return allow_; }
  std::size_t count() const;

  /// Extends to `total` rows and columns for a padded batch: pad columns are
  /// never attended, pad rows attend only to themselves.
  AttentionMask padded(std::size_t total) const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> allow_;
};

/// Segment-level allow set for a target segment at a 1-based layer.
SegmentSet allowed_sources(MaskStep step, Segment target, std::size_t layer, std::size_t ell_star);

/// Expands the segment rules over arbitrary target and source segment
/// sequences. Used for the joint layout and for the single-stream and
/// interaction layers of the mid-fusion model.
AttentionMask build_stream_mask(std::span<const Segment> targets, std::span<const Segment> sources,
                                MaskStep step, std::size_t layer, std::size_t ell_star);

/// Throws ConfigError when layer is outside 1..total_layers.
AttentionMask build_mask(const SegmentLayout& layout, const MaskSpec& spec, std::size_t layer);

/// Memoizes build_mask by (n, m, step, layer bucket). Thread-safe.
class MaskCache {
 public:
  std::shared_ptr<const AttentionMask> get(const SegmentLayout& layout, const MaskSpec& spec,
                                           std::size_t layer);
  std::size_t size() const;

 private:
  using Key = std::tuple<std::size_t, std::size_t, int, std::size_t>;
  mutable std::mutex mu_;
  std::map<Key, std::shared_ptr<const AttentionMask>> masks_;
};

}  // namespace mice
