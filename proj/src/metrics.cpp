#include "mice/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_set>

#include "mice/common.hpp"

namespace mice {

namespace {

void check_unique(const RankedList& ranking) {
  std::unordered_set<std::string> seen;
  for (const auto& item : ranking.items) {
    if (!seen.insert(item.doc_id).second) {
      throw InputError("ranking for query '" + ranking.query_id + "' lists doc '" + item.doc_id +
                       "' twice");
    }
  }
}

int grade(const std::map<std::string, int>& rels, const std::string& doc) {
  auto it = rels.find(doc);
  return it == rels.end() ? 0 : it->second;
}

double gain(int rel) { return rel > 0 ? std::exp2(rel) - 1.0 : 0.0; }

}  // namespace

double ndcg_at_k(const RankedList& ranking, const std::map<std::string, int>& rels, std::size_t k) {
  check_unique(ranking);
  double dcg = 0;
  const std::size_t depth = std::min(k, ranking.items.size());
  for (std::size_t i = 0; i < depth; ++i) {
    dcg += gain(grade(rels, ranking.items[i].doc_id)) / std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<int> ideal;
  for (const auto& [doc, rel] : rels) {
    if (rel > 0) ideal.push_back(rel);
  }
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0;
  for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
    idcg += gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
  }
  return idcg > 0 ? dcg / idcg : 0.0;
}

double rr_at_k(const RankedList& ranking, const std::map<std::string, int>& rels, std::size_t k) {
  check_unique(ranking);
  const std::size_t depth = std::min(k, ranking.items.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (grade(rels, ranking.items[i].doc_id) > 0) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

MetricSpec MetricSpec::parse(const std::string& text) {
  const auto at = text.find('@');
  if (at == std::string::npos) throw UsageError("metric '" + text + "': expected name@k");
  const std::string name = text.substr(0, at);
  MetricSpec m;
  if (name == "ndcg") {
    m.kind = MetricKind::Ndcg;
  } else if (name == "rr" || name == "mrr") {
    m.kind = MetricKind::ReciprocalRank;
  } else {
    throw UsageError("unknown metric '" + name + "'");
  }
  try {
    std::size_t used = 0;
    const long k = std::stol(text.substr(at + 1), &used);
    if (k <= 0 || used != text.size() - at - 1) throw std::invalid_argument("k");
    m.k = static_cast<std::size_t>(k);
  } catch (const std::exception&) {
    throw UsageError("metric '" + text + "': cutoff must be a positive integer");
  }
  return m;
}

std::string MetricSpec::name() const {
  return std::string(kind == MetricKind::Ndcg ? "ndcg" : "rr") + "@" + std::to_string(k);
}

double MetricSpec::operator()(const RankedList& ranking, const std::map<std::string, int>& rels) const {
  return kind == MetricKind::Ndcg ? ndcg_at_k(ranking, rels, k) : rr_at_k(ranking, rels, k);
}

EvalReport evaluate(const std::vector<RankedList>& runs, const Qrels& qrels, const MetricSpec& metric) {
  EvalReport report;
  report.metric = metric;
  std::map<std::string, const RankedList*> by_query;
  for (const auto& r : runs) {
    if (!by_query.emplace(r.query_id, &r).second) {
      throw InputError("run lists query '" + r.query_id + "' more than once");
    }
    if (!qrels.count(r.query_id)) report.unjudged.push_back(r.query_id);
  }
  double total = 0;
  for (const auto& [qid, rels] : qrels) {
    auto it = by_query.find(qid);
    const double v = it == by_query.end() ? 0.0 : metric(*it->second, rels);
    report.per_query[qid] = v;
    total += v;
  }
  report.mean = qrels.empty() ? 0.0 : total / static_cast<double>(qrels.size());
  return report;
}

}  // namespace mice
