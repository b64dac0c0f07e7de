#pragma once

// Ranked lists, relevance judgments and their TREC text formats.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace mice {

struct ScoredDoc {
  std::string doc_id;
  double score = 0;
};

struct RankedList {
  std::string query_id;
  std::vector<ScoredDoc> items;
};

/// Stable sort by score descending, ties by doc_id ascending.
void sort_ranking(std::vector<ScoredDoc>& items);

/// qid → (docid → graded relevance).
using Qrels = std::map<std::string, std::map<std::string, int>>;

/// `qid Q0 docid rank score tag`, ranks from 1.
void write_run(std::ostream& out, const std::vector<RankedList>& runs, const std::string& tag);
void write_run(const std::filesystem::path& path, const std::vector<RankedList>& runs,
               const std::string& tag);
/// Lists come back in file order of first appearance, items ordered by rank.
std::vector<RankedList> read_run(const std::filesystem::path& path);

/// `qid 0 docid rel`.
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);
Qrels read_qrels(const std::filesystem::path& path);

}  // namespace mice
