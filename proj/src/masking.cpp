#include "mice/masking.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace mice {

const char* segment_name(Segment s) {
  switch (s) {
    case Segment::Cls: return "CLS";
    case Segment::Query: return "Q";
    case Segment::Sep1: return "SEP1";
    case Segment::Doc: return "D";
    case Segment::Sep2: return "SEP2";
  }
  return "?";
}

std::string SegmentSet::str() const {
  std::string out = "{";
  bool first = true;
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    const auto s = static_cast<Segment>(i);
    if (!contains(s)) continue;
    if (!first) out += ",";
    out += segment_name(s);
    first = false;
  }
  return out + "}";
}

SegmentLayout SegmentLayout::make(std::size_t n, std::size_t m) {
  if (n == 0 || m == 0) {
    throw InputError("segment layout needs at least one query and one document token (n=" +
                     std::to_string(n) + ", m=" + std::to_string(m) + ")");
  }
  SegmentLayout l;
  l.n = n;
  l.m = m;
  l.seg.reserve(n + m + 3);
  l.seg.push_back(Segment::Cls);
  l.seg.insert(l.seg.end(), n, Segment::Query);
  l.seg.push_back(Segment::Sep1);
  l.seg.insert(l.seg.end(), m, Segment::Doc);
  l.seg.push_back(Segment::Sep2);
  return l;
}

const char* step_name(MaskStep s) {
  switch (s) {
    case MaskStep::Baseline: return "baseline";
    case MaskStep::Step0: return "step0";
    case MaskStep::Step1: return "step1";
    case MaskStep::Step2: return "step2";
    case MaskStep::Step3: return "step3";
  }
  return "?";
}

MaskStep parse_step(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "baseline" || t == "none") return MaskStep::Baseline;
  if (t.rfind("step", 0) == 0) t = t.substr(4);
  if (t == "0") return MaskStep::Step0;
  if (t == "1") return MaskStep::Step1;
  if (t == "2") return MaskStep::Step2;
  if (t == "3") return MaskStep::Step3;
  throw UsageError("unknown masking step '" + text + "' (expected baseline or 0..3)");
}

void MaskSpec::validate() const {
  if (total_layers == 0) throw ConfigError("mask spec: total_layers must be positive");
  if (step == MaskStep::Step3 && (ell_star < 1 || ell_star > total_layers)) {
    throw ConfigError("mask spec: ell_star=" + std::to_string(ell_star) + " outside 1.." +
                      std::to_string(total_layers));
  }
}

std::size_t AttentionMask::count() const {
  return static_cast<std::size_t>(std::count(allow_.begin(), allow_.end(), std::uint8_t{1}));
}

AttentionMask AttentionMask::padded(std::size_t total) const {
  if (total < rows_ || total < cols_ || rows_ != cols_) {
    throw DimensionError("padded: cannot pad a " + std::to_string(rows_) + "x" +
                         std::to_string(cols_) + " mask to " + std::to_string(total));
  }
  AttentionMask out(total, total);
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) out.set(i, j, allowed(i, j));
  }
  for (std::size_t i = rows_; i < total; ++i) out.set(i, i, true);
  return out;
}

SegmentSet allowed_sources(MaskStep step, Segment target, std::size_t layer, std::size_t ell_star) {
  using S = Segment;
  if (step == MaskStep::Baseline) return SegmentSet::all();

  // Step 0: SEP tokens only keep themselves, nothing reads from CLS except CLS,
  // and each stream keeps its own sink.
  SegmentSet allow;
  switch (target) {
    case S::Cls: allow = SegmentSet::all(); break;
    case S::Query: allow = {S::Query, S::Sep1, S::Doc}; break;
    case S::Doc: allow = {S::Doc, S::Sep2, S::Query}; break;
    case S::Sep1: allow = {S::Sep1}; break;
    case S::Sep2: allow = {S::Sep2}; break;
  }
  if (step == MaskStep::Step0) return allow;

  if (target == S::Cls) {
    allow.erase(S::Doc);
    allow.erase(S::Sep2);
  }
  if (step == MaskStep::Step1) return allow;

  if (target == S::Doc) allow.erase(S::Query);
  if (step == MaskStep::Step2) return allow;

  if (target == S::Query && layer <= ell_star) allow.erase(S::Doc);
  return allow;
}

AttentionMask build_stream_mask(std::span<const Segment> targets, std::span<const Segment> sources,
                                MaskStep step, std::size_t layer, std::size_t ell_star) {
  std::array<SegmentSet, kSegmentCount> rules;
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    rules[s] = allowed_sources(step, static_cast<Segment>(s), layer, ell_star);
  }
  AttentionMask mask(targets.size(), sources.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const SegmentSet& rule = rules[static_cast<std::size_t>(targets[i])];
    for (std::size_t j = 0; j < sources.size(); ++j) mask.set(i, j, rule.contains(sources[j]));
  }
  return mask;
}

AttentionMask build_mask(const SegmentLayout& layout, const MaskSpec& spec, std::size_t layer) {
  spec.validate();
  if (layer < 1 || layer > spec.total_layers) {
    throw ConfigError("build_mask: layer " + std::to_string(layer) + " outside 1.." +
                      std::to_string(spec.total_layers));
  }
  return build_stream_mask(layout.seg, layout.seg, spec.step, layer, spec.ell_star);
}

std::shared_ptr<const AttentionMask> MaskCache::get(const SegmentLayout& layout,
                                                    const MaskSpec& spec, std::size_t layer) {
  // Only Step3 distinguishes layers, and only by which side of ell_star they fall.
  const std::size_t bucket = spec.step == MaskStep::Step3 && layer > spec.ell_star ? 1 : 0;
  const Key key{layout.n, layout.m, static_cast<int>(spec.step), bucket};
  std::lock_guard lock(mu_);
  auto it = masks_.find(key);
  if (it != masks_.end()) return it->second;
  auto mask = std::make_shared<const AttentionMask>(build_mask(layout, spec, layer));
  masks_.emplace(key, mask);
  return mask;
}

std::size_t MaskCache::size() const {
  std::lock_guard lock(mu_);
  return masks_.size();
}

}  // namespace mice
