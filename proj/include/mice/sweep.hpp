#pragma once

// Layer-dropping sweep: how many interaction layers a mid-fusion model needs.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "mice/training.hpp"

namespace mice {

struct SweepRow {
  std::size_t k_inter = 0;
  /// ℓ* + k_inter of the source model's layers.
  std::size_t retained_layers = 0;
  std::size_t parameters = 0;
  double rr10 = 0;
  double ndcg10 = 0;

  bool operator==(const SweepRow&) const = default;
};

/// For each valid k (descending, duplicates removed) builds a mid-fusion
/// model from `base` with split (ell_star, k), fine-tunes it with `finetune`
/// (steps = 0 skips training) and evaluates RR@10 / nDCG@10 on the task's
/// held-out queries. Invalid k values are skipped with a warning on stderr.
template <typename T>
std::vector<SweepRow> layer_drop_sweep(const Weights<T>& base, std::size_t ell_star,
                                       std::span<const std::size_t> k_values, const RankingTask& task,
                                       const Vocab& vocab, const TrainConfig& finetune,
                                       bool verbose = false);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(std::istream& in);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

}  // namespace mice
