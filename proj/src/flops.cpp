#include "mice/flops.hpp"

namespace mice {

BenchMode parse_mode(const std::string& text) {
  if (text == "ce") return BenchMode::CrossEncoder;
  if (text == "mice") return BenchMode::Mice;
  if (text == "mice-precomp") return BenchMode::MicePrecomp;
  throw UsageError("unknown mode '" + text + "' (expected ce, mice or mice-precomp)");
}

std::string mode_name(BenchMode mode) {
  switch (mode) {
    case BenchMode::CrossEncoder: return "ce";
    case BenchMode::Mice: return "mice";
    case BenchMode::MicePrecomp: return "mice-precomp";
  }
  return "?";
}

FlopBreakdown& FlopBreakdown::operator+=(const FlopBreakdown& o) {
  projections += o.projections;
  attention += o.attention;
  softmax += o.softmax;
  ffn += o.ffn;
  layernorm += o.layernorm;
  return *this;
}

FlopBreakdown layer_flops(const ModelConfig& cfg, std::uint64_t t, std::uint64_t s) {
  const std::uint64_t d = cfg.hidden;
  FlopBreakdown f;
  f.projections = 2 * (2 * t + 2 * s) * d * d;
  f.attention = 2 * (2 * t * s * d);
  f.softmax = 3 * std::uint64_t{cfg.heads} * t * s;
  f.ffn = 2 * (2 * t * d * cfg.ffn);
  f.layernorm = 2 * 5 * t * d;
  return f;
}

FlopBreakdown flop_breakdown(const ModelConfig& cfg, std::uint64_t n, std::uint64_t m, BenchMode mode) {
  cfg.validate();
  if (n == 0 || m == 0) throw InputError("count_flops: n and m must be positive");
  FlopBreakdown total;
  if (mode == BenchMode::CrossEncoder) {
    const std::uint64_t s = n + m + 3;
    for (std::size_t l = 0; l < cfg.layers; ++l) total += layer_flops(cfg, s, s);
    return total;
  }
  const std::uint64_t q_rows = n + 2;
  const std::uint64_t d_rows = m + 1;
  for (std::size_t l = 0; l < cfg.first_interaction; ++l) {
    total += layer_flops(cfg, q_rows, q_rows);
    if (mode == BenchMode::Mice) total += layer_flops(cfg, d_rows, d_rows);
  }
  for (std::size_t j = 0; j < cfg.interaction_layers; ++j) {
    total += layer_flops(cfg, q_rows, q_rows + d_rows);
  }
  return total;
}

std::uint64_t count_flops(const ModelConfig& cfg, std::uint64_t n, std::uint64_t m, BenchMode mode) {
  return flop_breakdown(cfg, n, m, mode).total();
}

}  // namespace mice
