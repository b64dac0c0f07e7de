#pragma once

// Analytic FLOP model for one (query, document) pair.
//
// A multiply-add counts as 2 FLOPs. For a layer whose t target rows attend
// over s source rows:
//   projections  Q,O over targets and K,V over sources: (2t + 2s)·d² MACs
//   attention    scores and mixing: 2·t·s·d MACs
//   softmax      3 FLOPs per score (max/exp/normalize): 3·h·t·s
//   FFN          2·t·d·d_ff MACs
//   layer norm   5 FLOPs per element, two per layer: 10·t·d
// GELU, residual adds, embeddings and the scoring head are not counted.

#include <cstdint>
#include <string>

#include "mice/transformer.hpp"

namespace mice {

enum class BenchMode { CrossEncoder, Mice, MicePrecomp };

/// "ce", "mice", "mice-precomp".
BenchMode parse_mode(const std::string& text);
std::string mode_name(BenchMode mode);

struct FlopBreakdown {
  std::uint64_t projections = 0;
  std::uint64_t attention = 0;
  std::uint64_t softmax = 0;
  std::uint64_t ffn = 0;
  std::uint64_t layernorm = 0;

  std::uint64_t total() const noexcept { return projections + attention + softmax + ffn + layernorm; }
  FlopBreakdown& operator+=(const FlopBreakdown& o);
};

/// One encoder layer with t target rows over s source rows.
FlopBreakdown layer_flops(const ModelConfig& cfg, std::uint64_t t, std::uint64_t s);

/// CE: all L layers over n+m+3 rows. MICE: ℓ* layers over the query stream
/// (n+2 rows) and the document stream (m+1 rows), then k interaction layers
/// with n+2 targets over n+m+3 sources. MICE-precomp: MICE without the
/// document stream.
FlopBreakdown flop_breakdown(const ModelConfig& cfg, std::uint64_t n, std::uint64_t m, BenchMode mode);
std::uint64_t count_flops(const ModelConfig& cfg, std::uint64_t n, std::uint64_t m, BenchMode mode);

}  // namespace mice
