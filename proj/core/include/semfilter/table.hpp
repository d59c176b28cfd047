#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semfilter/util.hpp"

namespace semfilter {

enum class TableFormat { kJsonl, kCsv };

TableFormat parse_table_format(std::string_view name);
/// Guesses the format from a file extension; ".csv" is CSV, anything else JSONL.
TableFormat table_format_for_path(std::string_view path);

struct Record {
  RecordId id = 0;
  std::map<std::string, std::string> columns;

  /// Column text, or nullptr when the column is absent (null).
  const std::string* find(std::string_view column) const;
};

/// Ordered collection of records with pairwise distinct ids. Iteration order
/// is the ingestion order and never changes.
class Table {
 public:
  Table() = default;
  explicit Table(std::vector<std::string> column_schema);

  /// Appends a record; throws kDuplicateId if the id already exists.
  void add(Record record);

  const std::vector<Record>& records() const { return records_; }
  const std::vector<std::string>& column_schema() const { return schema_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const Record* find(RecordId id) const;
  const Record& at(RecordId id) const;
  std::vector<RecordId> ids() const;
  bool has_column(std::string_view column) const;

 private:
  std::vector<Record> records_;
  std::vector<std::string> schema_;
  std::unordered_map<RecordId, std::size_t> index_;
};

/// Loads a table. When `id_column` is empty, ids are the 0-based row index
/// and every field becomes a column; otherwise the named field supplies the
/// id and is not kept as a text column.
Table load_table(const std::string& path, TableFormat format,
                 const std::string& id_column = "");
Table parse_table(std::string_view content, TableFormat format,
                  const std::string& id_column = "");

/// Writes the table with ids in the field named `id_column`.
std::string serialize_table(const Table& table, TableFormat format,
                            const std::string& id_column = "id");
void write_table(const Table& table, const std::string& path, TableFormat format,
                 const std::string& id_column = "id");

/// RFC 4180 record splitting. Exposed for tests.
std::vector<std::vector<std::string>> parse_csv_rows(std::string_view content);
std::string csv_escape(std::string_view field);

/// A natural-language filter condition such as "The {review} is positive."
class Predicate {
 public:
  Predicate() = default;
  explicit Predicate(std::string text_template, std::string instruction = "");

  const std::string& text_template() const { return template_; }
  const std::string& instruction() const { return instruction_; }
  /// Distinct placeholder names, in order of first appearance.
  const std::vector<std::string>& referenced_columns() const { return columns_; }

  /// Throws kMissingColumn if a placeholder is not in the schema.
  void validate(const std::vector<std::string>& column_schema) const;

  /// Canonical bytes identifying the predicate (instruction + template).
  std::string canonical_text() const;
  std::uint64_t hash() const;

  /// Template with placeholders substituted from the record.
  std::string fill(const Record& record) const;

 private:
  std::string template_;
  std::string instruction_;
  std::vector<std::string> columns_;
};

inline constexpr std::string_view kAnswerFormatSuffix =
    "Answer with exactly one word: True or False.";

/// Full oracle prompt for one record. Pure: identical inputs give identical
/// bytes.
std::string render_prompt(const Predicate& predicate, const Record& record);

/// "col: value" lines for the given columns, used as embedding input.
std::string fused_column_text(const Record& record, const std::vector<std::string>& columns);

}  // namespace semfilter
