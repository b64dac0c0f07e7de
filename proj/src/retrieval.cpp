#include "mice/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace mice {

void sort_ranking(std::vector<ScoredDoc>& items) {
  std::stable_sort(items.begin(), items.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
}

void write_run(std::ostream& out, const std::vector<RankedList>& runs, const std::string& tag) {
  out << std::setprecision(9);
  for (const auto& list : runs) {
    for (std::size_t i = 0; i < list.items.size(); ++i) {
      out << list.query_id << " Q0 " << list.items[i].doc_id << ' ' << (i + 1) << ' '
          << list.items[i].score << ' ' << tag << '\n';
    }
  }
}

void write_run(const std::filesystem::path& path, const std::vector<RankedList>& runs,
               const std::string& tag) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write run file " + path.string());
  write_run(out, runs, tag);
}

std::vector<RankedList> read_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open run file " + path.string());
  std::vector<RankedList> lists;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::pair<long, ScoredDoc>>> ranked;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> cols;
    for (std::string c; ss >> c;) cols.push_back(c);
    if (cols.empty()) continue;
    if (cols.size() != 6) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns, got " +
                        std::to_string(cols.size()));
    }
    long rank = 0;
    double score = 0;
    try {
      rank = std::stol(cols[3]);
      score = std::stod(cols[4]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad rank or score");
    }
    auto [it, fresh] = index.emplace(cols[0], lists.size());
    if (fresh) {
      lists.push_back({cols[0], {}});
      ranked.emplace_back();
    }
    ranked[it->second].push_back({rank, ScoredDoc{cols[2], score}});
  }
  for (std::size_t i = 0; i < lists.size(); ++i) {
    auto& r = ranked[i];
    std::stable_sort(r.begin(), r.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [rank, doc] : r) lists[i].items.push_back(std::move(doc));
  }
  return lists;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write qrels " + path.string());
  for (const auto& [qid, docs] : qrels) {
    for (const auto& [doc, rel] : docs) out << qid << " 0 " << doc << ' ' << rel << '\n';
  }
}

Qrels read_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open qrels " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<std::string> cols;
    for (std::string c; ss >> c;) cols.push_back(c);
    if (cols.empty()) continue;
    if (cols.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 columns, got " +
                        std::to_string(cols.size()));
    }
    try {
      qrels[cols[0]][cols[2]] = std::stoi(cols[3]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad relevance grade");
    }
  }
  return qrels;
}

std::vector<TextRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<TextRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      TextRecord r;
      const auto& id = j.at("id");
      r.id = id.is_string() ? id.get<std::string>() : id.dump();
      r.text = j.at("text").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const TextRecord> records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) out << nlohmann::json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
}

std::vector<std::string> split_terms(std::string_view text) {
  std::vector<std::string> terms;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      terms.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) terms.push_back(std::move(cur));
  return terms;
}

Vocab::Vocab() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(s);
}

void Vocab::add(std::string term) {
  const auto id = static_cast<TokenId>(terms_.size());
  if (!ids_.emplace(term, id).second) throw FormatError("vocab: duplicate term '" + term + "'");
  terms_.push_back(std::move(term));
}

Vocab Vocab::build(std::span<const TextRecord> texts, std::size_t max_words, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& r : texts) {
    for (auto& t : split_terms(r.text)) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (auto& [term, count] : sorted) {
    if (count < min_count) break;
    if (max_words != 0 && v.size() - kFirstWordId >= max_words) break;
    if (v.ids_.count(term)) continue;
    v.add(term);
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocab " + path.string());
  Vocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno < kFirstWordId) {
      if (line != v.terms_[lineno]) {
        throw FormatError("vocab " + path.string() + ": line " + std::to_string(lineno + 1) +
                          " should be " + v.terms_[lineno]);
      }
    } else {
      v.add(line);
    }
    ++lineno;
  }
  if (lineno < kFirstWordId) throw FormatError("vocab " + path.string() + ": missing special tokens");
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write vocab " + path.string());
  for (const auto& t : terms_) out << t << '\n';
}

TokenId Vocab::id(std::string_view term) const {
  auto it = ids_.find(std::string(term));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::term(TokenId id) const {
  if (id >= terms_.size()) throw InputError("vocab: id " + std::to_string(id) + " out of range");
  return terms_[id];
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& t : split_terms(text)) ids.push_back(vocab.id(t));
  return ids;
}

std::vector<TokenId> tokenize_nonempty(std::string_view text, const Vocab& vocab) {
  auto ids = tokenize(text, vocab);
  if (ids.empty()) ids.push_back(kUnkId);
  return ids;
}

CorpusStats CorpusStats::build(std::span<const TextRecord> corpus) {
  CorpusStats s;
  std::uint64_t total = 0;
  for (const auto& r : corpus) {
    if (!s.index_.emplace(r.id, s.doc_ids_.size()).second) {
      throw InputError("corpus: duplicate doc id '" + r.id + "'");
    }
    const std::size_t di = s.doc_ids_.size();
    s.doc_ids_.push_back(r.id);
    auto terms = split_terms(r.text);
    std::unordered_map<std::string, std::uint32_t> tf;
    for (auto& t : terms) ++tf[t];
    for (const auto& [t, c] : tf) s.postings_[t].push_back({di, c});
    s.doc_len_.push_back(static_cast<std::uint32_t>(terms.size()));
    s.tf_.push_back(std::move(tf));
    total += terms.size();
  }
  s.avgdl_ = s.doc_ids_.empty() ? 0.0 : static_cast<double>(total) / s.doc_ids_.size();
  return s;
}

std::size_t CorpusStats::df(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

double CorpusStats::idf(std::size_t df) const {
  const double n = static_cast<double>(size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double CorpusStats::term_weight(std::uint32_t tf, std::uint32_t dl, double idf,
                                const Bm25Params& p) const {
  const double norm = avgdl_ > 0 ? dl / avgdl_ : 0.0;
  return idf * tf * (p.k1 + 1) / (tf + p.k1 * (1 - p.b + p.b * norm));
}

double CorpusStats::score(std::span<const std::string> query_terms, const std::string& doc_id,
                          const Bm25Params& params) const {
  auto it = index_.find(doc_id);
  if (it == index_.end()) throw InputError("bm25: unknown doc id '" + doc_id + "'");
  const auto& tf = tf_[it->second];
  double s = 0;
  // Each query occurrence contributes, so repeated query terms weigh more.
  for (const auto& t : query_terms) {
    auto f = tf.find(t);
    if (f == tf.end()) continue;
    s += term_weight(f->second, doc_len_[it->second], idf(df(t)), params);
  }
  return s;
}

RankedList CorpusStats::retrieve(const std::string& query_id, std::span<const std::string> query_terms,
                                 std::size_t k, const Bm25Params& params) const {
  std::vector<double> acc(size(), 0.0);
  std::vector<char> touched(size(), 0);
  for (const auto& t : query_terms) {
    auto p = postings_.find(t);
    if (p == postings_.end()) continue;
    const double w = idf(p->second.size());
    for (const auto& [di, tf] : p->second) {
      acc[di] += term_weight(tf, doc_len_[di], w, params);
      touched[di] = 1;
    }
  }
  RankedList out{query_id, {}};
  for (std::size_t i = 0; i < size(); ++i) {
    if (touched[i]) out.items.push_back({doc_ids_[i], acc[i]});
  }
  sort_ranking(out.items);
  if (k != 0 && out.items.size() > k) out.items.resize(k);
  return out;
}

double bm25_score(std::span<const std::string> query_terms, const std::string& doc_id,
                  const CorpusStats& stats, const Bm25Params& params) {
  return stats.score(query_terms, doc_id, params);
}

RankedList retrieve(const TextRecord& query, const CorpusStats& stats, std::size_t k,
                    const Bm25Params& params) {
  const auto terms = split_terms(query.text);
  return stats.retrieve(query.id, terms, k, params);
}

RerankResult rerank(const TextRecord& query, std::span<const std::string> candidates, Scorer& scorer,
                    std::size_t k_out) {
  std::unordered_set<std::string> seen;
  std::vector<std::string> unique;
  for (const auto& c : candidates) {
    if (seen.insert(c).second) unique.push_back(c);
  }
  auto scores = scorer.score(query, unique);
  if (scores.size() != unique.size()) {
    throw ContractError("scorer " + scorer.name() + " returned " + std::to_string(scores.size()) +
                        " scores for " + std::to_string(unique.size()) + " candidates");
  }
  RerankResult out;
  out.ranking.query_id = query.id;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    if (scores[i].error) {
      out.errors.emplace_back(unique[i], *scores[i].error);
    } else {
      out.ranking.items.push_back({unique[i], scores[i].score});
    }
  }
  sort_ranking(out.ranking.items);
  if (k_out != 0 && out.ranking.items.size() > k_out) out.ranking.items.resize(k_out);
  return out;
}

std::vector<CandidateScore> Bm25Scorer::score(const TextRecord& query,
                                              std::span<const std::string> doc_ids) {
  const auto terms = split_terms(query.text);
  std::vector<CandidateScore> out(doc_ids.size());
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    if (!stats_.contains(doc_ids[i])) {
      out[i].error = "unknown doc id";
      continue;
    }
    out[i].score = stats_.score(terms, doc_ids[i], params_);
  }
  return out;
}

DocTexts index_texts(std::span<const TextRecord> corpus) {
  DocTexts m;
  for (const auto& r : corpus) {
    if (!m.emplace(r.id, r.text).second) throw InputError("corpus: duplicate doc id '" + r.id + "'");
  }
  return m;
}

}  // namespace mice
