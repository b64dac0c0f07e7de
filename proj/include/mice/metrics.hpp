#pragma once

// Ranking quality metrics.

#include <map>
#include <string>
#include <vector>

#include "mice/ranking.hpp"

namespace mice {

/// DCG with gain 2^rel − 1 and discount log2(rank + 1), normalized by the
/// ideal ordering of all judged documents. 0 when nothing is relevant.
/// Throws InputError when a doc id repeats within the list.
double ndcg_at_k(const RankedList& ranking, const std::map<std::string, int>& rels, std::size_t k);

/// 1 / rank of the first document with rel > 0 within the top k, else 0.
double rr_at_k(const RankedList& ranking, const std::map<std::string, int>& rels, std::size_t k);

enum class MetricKind { Ndcg, ReciprocalRank };

struct MetricSpec {
  MetricKind kind = MetricKind::Ndcg;
  std::size_t k = 10;

  /// "ndcg@10", "rr@10" or "mrr@10".
  static MetricSpec parse(const std::string& text);
  std::string name() const;
  double operator()(const RankedList& ranking, const std::map<std::string, int>& rels) const;
};

struct EvalReport {
  MetricSpec metric;
  std::map<std::string, double> per_query;
  double mean = 0;
  /// Run queries without judgments; they are left out of the mean.
  std::vector<std::string> unjudged;
};

/// Averages over every judged query; a judged query absent from the run scores 0.
EvalReport evaluate(const std::vector<RankedList>& runs, const Qrels& qrels, const MetricSpec& metric);

}  // namespace mice
