#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semfilter/table.hpp"
#include "semfilter/util.hpp"

namespace semfilter {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Lowercased runs of ASCII alphanumerics; bytes >= 0x80 are kept inside
/// tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

/// BM25 statistics over a corpus of per-record documents.
class LexicalIndex {
 public:
  LexicalIndex() = default;
  LexicalIndex(const std::vector<std::pair<RecordId, std::string>>& documents,
               Bm25Params params = {});
  /// Documents are the fused text of `columns` for every record.
  static LexicalIndex from_table(const Table& table, const std::vector<std::string>& columns,
                                 Bm25Params params = {});

  bool empty() const { return docs_.empty(); }
  std::size_t size() const { return docs_.size(); }
  bool contains(RecordId id) const { return index_.count(id) != 0; }

  /// BM25 of document `query` (as a bag of distinct terms) against `doc`.
  double score(RecordId query, RecordId doc) const;
  /// Mean of both query/document directions.
  double symmetric_score(RecordId a, RecordId b) const;
  /// True when both documents have the same token multiset.
  bool same_terms(RecordId a, RecordId b) const;

  double idf(std::size_t term) const;

  /// Dense position of a record's document, for the *_at accessors.
  std::size_t position(RecordId id) const;
  double symmetric_score_at(std::size_t a, std::size_t b) const;
  bool same_terms_at(std::size_t a, std::size_t b) const;

 private:
  struct Doc {
    std::vector<std::pair<std::size_t, std::uint32_t>> terms;  // sorted by term id
    double length = 0.0;
    double length_factor = 0.0;  // k1 * (1 - b + b * length / avg_length)
  };
  const Doc& doc(RecordId id) const;
  double score(const Doc& query, const Doc& target) const;

  Bm25Params params_;
  std::vector<Doc> docs_;
  std::unordered_map<RecordId, std::size_t> index_;
  std::vector<std::uint32_t> doc_freq_;
  std::vector<double> idf_;
  double avg_length_ = 0.0;
};

}  // namespace semfilter
