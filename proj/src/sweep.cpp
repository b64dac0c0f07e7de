#include "mice/sweep.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mice/metrics.hpp"

namespace mice {

namespace {

constexpr const char* kSweepHeader = "k_inter,retained_layers,parameters,rr10,ndcg10";

}  // namespace

template <typename T>
std::vector<SweepRow> layer_drop_sweep(const Weights<T>& base, std::size_t ell_star,
                                       std::span<const std::size_t> k_values, const RankingTask& task,
                                       const Vocab& vocab, const TrainConfig& finetune, bool verbose) {
  const std::size_t depth = base.layers.size();
  std::vector<std::size_t> ks;
  for (std::size_t k : k_values) {
    if (k == 0 || ell_star == 0 || ell_star + k > depth) {
      std::cerr << "warning: sweep skips k_inter=" << k << " (ell_star=" << ell_star << ", "
                << depth << " layers)\n";
      continue;
    }
    ks.push_back(k);
  }
  std::sort(ks.begin(), ks.end(), std::greater<>());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  const auto candidates = dev_candidates(task, finetune.dev_negatives, finetune.seed);
  std::vector<SweepRow> rows;
  for (std::size_t k : ks) {
    MiceRanker<T> ranker(from_cross_encoder(base, ell_star, k));
    if (finetune.steps > 0) train<T>(ranker, task, vocab, finetune);
    SweepRow row;
    row.k_inter = k;
    row.retained_layers = ell_star + k;
    row.parameters = ranker.model().weights().parameter_count();
    const auto lists = dev_rankings(ranker, task, vocab, candidates);
    static const std::map<std::string, int> kNone;
    for (const auto& list : lists) {
      auto rel = task.qrels.find(list.query_id);
      const auto& rels = rel == task.qrels.end() ? kNone : rel->second;
      row.rr10 += rr_at_k(list, rels, 10);
      row.ndcg10 += ndcg_at_k(list, rels, 10);
    }
    if (!lists.empty()) {
      row.rr10 /= static_cast<double>(lists.size());
      row.ndcg10 /= static_cast<double>(lists.size());
    }
    if (verbose) {
      std::cout << "k_inter " << k << "  layers " << row.retained_layers << "  rr@10 " << row.rr10
                << "  ndcg@10 " << row.ndcg10 << "\n";
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepHeader << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    out << r.k_inter << ',' << r.retained_layers << ',' << r.parameters << ',' << r.rr10 << ','
        << r.ndcg10 << '\n';
  }
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_sweep_csv(out, rows);
}

std::vector<SweepRow> read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSweepHeader) throw FormatError("sweep csv: bad header");
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 5) throw FormatError("sweep csv line " + std::to_string(lineno) + ": expected 5 columns");
    try {
      SweepRow r;
      r.k_inter = std::stoull(cols[0]);
      r.retained_layers = std::stoull(cols[1]);
      r.parameters = std::stoull(cols[2]);
      r.rr10 = std::stod(cols[3]);
      r.ndcg10 = std::stod(cols[4]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw FormatError("sweep csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_sweep_csv(in);
}

template std::vector<SweepRow> layer_drop_sweep(const Weights<float>&, std::size_t, std::span<const std::size_t>,
                                                const RankingTask&, const Vocab&, const TrainConfig&, bool);
template std::vector<SweepRow> layer_drop_sweep(const Weights<double>&, std::size_t, std::span<const std::size_t>,
                                                const RankingTask&, const Vocab&, const TrainConfig&, bool);

}  // namespace mice
