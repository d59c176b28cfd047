#include "semfilter/lexical.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

namespace semfilter {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) != 0 || c >= 0x80) {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

LexicalIndex::LexicalIndex(const std::vector<std::pair<RecordId, std::string>>& documents,
                           Bm25Params params)
    : params_(params) {
  std::unordered_map<std::string, std::size_t> vocabulary;
  double total_length = 0.0;
  for (const auto& [id, text] : documents) {
    if (!index_.emplace(id, docs_.size()).second) {
      throw Error(ErrorKind::kDuplicateId, "duplicate lexical document " + std::to_string(id));
    }
    std::map<std::size_t, std::uint32_t> counts;
    const auto tokens = tokenize(text);
    for (const auto& token : tokens) {
      auto [it, inserted] = vocabulary.emplace(token, vocabulary.size());
      if (inserted) doc_freq_.push_back(0);
      ++counts[it->second];
    }
    Doc doc;
    doc.length = static_cast<double>(tokens.size());
    doc.terms.assign(counts.begin(), counts.end());
    for (const auto& [term, tf] : doc.terms) ++doc_freq_[term];
    total_length += doc.length;
    docs_.push_back(std::move(doc));
  }
  avg_length_ = docs_.empty() ? 0.0 : total_length / static_cast<double>(docs_.size());
  for (auto& doc : docs_) {
    const double norm = avg_length_ > 0.0 ? doc.length / avg_length_ : 0.0;
    doc.length_factor = params_.k1 * (1.0 - params_.b + params_.b * norm);
  }
  // Non-negative variant: ln(1 + (N - df + 0.5) / (df + 0.5)).
  const double n = static_cast<double>(docs_.size());
  idf_.reserve(doc_freq_.size());
  for (std::uint32_t freq : doc_freq_) {
    const double df = static_cast<double>(freq);
    idf_.push_back(std::log(1.0 + (n - df + 0.5) / (df + 0.5)));
  }
}

LexicalIndex LexicalIndex::from_table(const Table& table, const std::vector<std::string>& columns,
                                      Bm25Params params) {
  std::vector<std::pair<RecordId, std::string>> documents;
  documents.reserve(table.size());
  for (const auto& record : table.records()) {
    documents.emplace_back(record.id, fused_column_text(record, columns));
  }
  return LexicalIndex(documents, params);
}

std::size_t LexicalIndex::position(RecordId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw Error(ErrorKind::kInvalidArgument, "no lexical document for record " + std::to_string(id));
  }
  return it->second;
}

const LexicalIndex::Doc& LexicalIndex::doc(RecordId id) const { return docs_[position(id)]; }

double LexicalIndex::idf(std::size_t term) const { return idf_.at(term); }

double LexicalIndex::score(const Doc& q, const Doc& d) const {
  double total = 0.0;
  auto qi = q.terms.begin();
  auto di = d.terms.begin();
  while (qi != q.terms.end() && di != d.terms.end()) {
    if (qi->first < di->first) {
      ++qi;
    } else if (di->first < qi->first) {
      ++di;
    } else {
      const double tf = di->second;
      total += idf_[qi->first] * tf * (params_.k1 + 1.0) / (tf + d.length_factor);
      ++qi;
      ++di;
    }
  }
  return total;
}

double LexicalIndex::score(RecordId query, RecordId target) const {
  return score(doc(query), doc(target));
}

double LexicalIndex::symmetric_score(RecordId a, RecordId b) const {
  return symmetric_score_at(position(a), position(b));
}

bool LexicalIndex::same_terms(RecordId a, RecordId b) const {
  return doc(a).terms == doc(b).terms;
}

double LexicalIndex::symmetric_score_at(std::size_t a, std::size_t b) const {
  const Doc& da = docs_[a];
  const Doc& db = docs_[b];
  double forward = 0.0, backward = 0.0;
  auto ai = da.terms.begin();
  auto bi = db.terms.begin();
  while (ai != da.terms.end() && bi != db.terms.end()) {
    if (ai->first < bi->first) {
      ++ai;
    } else if (bi->first < ai->first) {
      ++bi;
    } else {
      const double idf = idf_[ai->first];
      const double tf_a = ai->second, tf_b = bi->second;
      forward += idf * tf_b * (params_.k1 + 1.0) / (tf_b + db.length_factor);
      backward += idf * tf_a * (params_.k1 + 1.0) / (tf_a + da.length_factor);
      ++ai;
      ++bi;
    }
  }
  return 0.5 * (forward + backward);
}

bool LexicalIndex::same_terms_at(std::size_t a, std::size_t b) const {
  return docs_[a].terms == docs_[b].terms;
}

}  // namespace semfilter
