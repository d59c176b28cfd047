#include "semfilter/table.hpp"

#include <algorithm>
#include <charconv>
#include <json.hpp>

namespace semfilter {

using json = nlohmann::json;

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

RecordId parse_id_text(std::string_view text, std::size_t line) {
  RecordId id = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw Error(ErrorKind::kParse,
                "line " + std::to_string(line) + ": id '" + std::string(text) +
                    "' is not an unsigned 64-bit integer");
  }
  return id;
}

RecordId parse_id_json(const json& value, std::size_t line) {
  if (value.is_number_unsigned()) return value.get<RecordId>();
  if (value.is_number_integer() && value.get<std::int64_t>() >= 0) {
    return static_cast<RecordId>(value.get<std::int64_t>());
  }
  if (value.is_string()) return parse_id_text(value.get<std::string>(), line);
  throw Error(ErrorKind::kParse, "line " + std::to_string(line) +
                                     ": id must be a non-negative integer");
}

std::string json_field_text(const json& value) {
  if (value.is_string()) return value.get<std::string>();
  return value.dump();
}

void add_with_line(Table& table, Record record, std::size_t line) {
  if (table.find(record.id) != nullptr) {
    throw Error(ErrorKind::kDuplicateId, "line " + std::to_string(line) + ": duplicate id " +
                                             std::to_string(record.id));
  }
  table.add(std::move(record));
}

Table parse_jsonl(std::string_view content, const std::string& id_column) {
  std::vector<json> rows;
  std::vector<std::size_t> lines;
  std::vector<std::string> schema;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!row.is_object()) {
      throw Error(ErrorKind::kParse,
                  "line " + std::to_string(line_no) + ": expected a JSON object");
    }
    for (const auto& [key, value] : row.items()) {
      if (key == id_column) continue;
      if (std::find(schema.begin(), schema.end(), key) == schema.end()) schema.push_back(key);
    }
    rows.push_back(std::move(row));
    lines.push_back(line_no);
  }

  Table table(schema);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Record record;
    if (id_column.empty()) {
      record.id = i;
    } else {
      auto it = rows[i].find(id_column);
      if (it == rows[i].end()) {
        throw Error(ErrorKind::kParse, "line " + std::to_string(lines[i]) + ": missing id field '" +
                                           id_column + "'");
      }
      record.id = parse_id_json(*it, lines[i]);
    }
    for (const auto& [key, value] : rows[i].items()) {
      if (key == id_column || value.is_null()) continue;
      record.columns.emplace(key, json_field_text(value));
    }
    add_with_line(table, std::move(record), lines[i]);
  }
  return table;
}

Table parse_csv(std::string_view content, const std::string& id_column) {
  auto rows = parse_csv_rows(content);
  if (rows.empty()) return Table{};
  const auto& header = rows.front();
  std::ptrdiff_t id_index = -1;
  std::vector<std::string> schema;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!id_column.empty() && header[c] == id_column) {
      id_index = static_cast<std::ptrdiff_t>(c);
    } else {
      schema.push_back(header[c]);
    }
  }
  if (!id_column.empty() && id_index < 0) {
    throw Error(ErrorKind::kParse, "line 1: header has no id column '" + id_column + "'");
  }
  Table table(schema);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t line = r + 1;  // header is line 1; records are one per row
    const auto& row = rows[r];
    if (row.size() != header.size()) {
      throw Error(ErrorKind::kParse, "row " + std::to_string(line) + ": expected " +
                                         std::to_string(header.size()) + " fields, got " +
                                         std::to_string(row.size()));
    }
    Record record;
    record.id = id_index < 0 ? r - 1 : parse_id_text(row[static_cast<std::size_t>(id_index)], line);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (static_cast<std::ptrdiff_t>(c) == id_index) continue;
      record.columns.emplace(header[c], row[c]);
    }
    add_with_line(table, std::move(record), line);
  }
  return table;
}

}  // namespace

TableFormat parse_table_format(std::string_view name) {
  if (name == "jsonl") return TableFormat::kJsonl;
  if (name == "csv") return TableFormat::kCsv;
  throw Error(ErrorKind::kInvalidArgument, "unknown table format '" + std::string(name) + "'");
}

TableFormat table_format_for_path(std::string_view path) {
  return ends_with(path, ".csv") ? TableFormat::kCsv : TableFormat::kJsonl;
}

const std::string* Record::find(std::string_view column) const {
  auto it = columns.find(std::string(column));
  return it == columns.end() ? nullptr : &it->second;
}

Table::Table(std::vector<std::string> column_schema) : schema_(std::move(column_schema)) {}

void Table::add(Record record) {
  auto [it, inserted] = index_.emplace(record.id, records_.size());
  if (!inserted) {
    throw Error(ErrorKind::kDuplicateId, "duplicate id " + std::to_string(record.id));
  }
  for (const auto& [name, value] : record.columns) {
    if (!has_column(name)) schema_.push_back(name);
  }
  records_.push_back(std::move(record));
}

const Record* Table::find(RecordId id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

const Record& Table::at(RecordId id) const {
  const Record* record = find(id);
  if (record == nullptr) {
    throw Error(ErrorKind::kInvalidArgument, "unknown record id " + std::to_string(id));
  }
  return *record;
}

std::vector<RecordId> Table::ids() const {
  std::vector<RecordId> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.id);
  return out;
}

bool Table::has_column(std::string_view column) const {
  return std::find(schema_.begin(), schema_.end(), column) != schema_.end();
}

std::vector<std::vector<std::string>> parse_csv_rows(std::string_view content) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
          if (i + 1 < content.size() && content[i + 1] != ',' && content[i + 1] != '\n' &&
              content[i + 1] != '\r') {
            throw Error(ErrorKind::kParse,
                        "line " + std::to_string(line) + ": unexpected text after closing quote");
          }
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started) {
          throw Error(ErrorKind::kParse,
                      "line " + std::to_string(line) + ": quote inside unquoted field");
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        field_started = false;
        break;
      case '\r':
        if (i + 1 < content.size() && content[i + 1] == '\n') break;
        end_row();
        ++line;
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) {
    throw Error(ErrorKind::kParse, "line " + std::to_string(line) + ": unterminated quoted field");
  }
  if (field_started || !row.empty()) end_row();
  // Blank lines carry no record.
  std::erase_if(rows, [](const auto& r) { return r.size() == 1 && r.front().empty(); });
  return rows;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

Table parse_table(std::string_view content, TableFormat format, const std::string& id_column) {
  return format == TableFormat::kCsv ? parse_csv(content, id_column)
                                     : parse_jsonl(content, id_column);
}

Table load_table(const std::string& path, TableFormat format, const std::string& id_column) {
  return parse_table(read_file(path), format, id_column);
}

std::string serialize_table(const Table& table, TableFormat format, const std::string& id_column) {
  std::string out;
  if (format == TableFormat::kJsonl) {
    for (const auto& record : table.records()) {
      json row = json::object();
      row[id_column] = record.id;
      for (const auto& [name, value] : record.columns) row[name] = value;
      out += row.dump();
      out.push_back('\n');
    }
    return out;
  }
  out += csv_escape(id_column);
  for (const auto& name : table.column_schema()) {
    out.push_back(',');
    out += csv_escape(name);
  }
  out += "\r\n";
  for (const auto& record : table.records()) {
    out += std::to_string(record.id);
    for (const auto& name : table.column_schema()) {
      out.push_back(',');
      if (const std::string* value = record.find(name)) out += csv_escape(*value);
    }
    out += "\r\n";
  }
  return out;
}

void write_table(const Table& table, const std::string& path, TableFormat format,
                 const std::string& id_column) {
  write_file(path, serialize_table(table, format, id_column));
}

namespace {

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_' || c == '-' || c == '.';
}

// Calls on_text for literal runs and on_column for each {name} placeholder.
template <typename OnText, typename OnColumn>
void scan_template(std::string_view tpl, OnText on_text, OnColumn on_column) {
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      std::size_t j = i + 1;
      while (j < tpl.size() && is_name_char(tpl[j])) ++j;
      if (j < tpl.size() && tpl[j] == '}' && j > i + 1) {
        on_column(tpl.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    on_text(tpl[i]);
    ++i;
  }
}

}  // namespace

Predicate::Predicate(std::string text_template, std::string instruction)
    : template_(std::move(text_template)), instruction_(std::move(instruction)) {
  scan_template(
      template_, [](char) {},
      [this](std::string_view name) {
        if (std::find(columns_.begin(), columns_.end(), name) == columns_.end()) {
          columns_.emplace_back(name);
        }
      });
}

void Predicate::validate(const std::vector<std::string>& column_schema) const {
  for (const auto& name : columns_) {
    if (std::find(column_schema.begin(), column_schema.end(), name) == column_schema.end()) {
      throw Error(ErrorKind::kMissingColumn, "placeholder {" + name + "} names no table column");
    }
  }
}

std::string Predicate::canonical_text() const { return instruction_ + '\x1f' + template_; }

std::uint64_t Predicate::hash() const { return fnv1a64(canonical_text()); }

std::string Predicate::fill(const Record& record) const {
  std::string out;
  out.reserve(template_.size() + 64);
  scan_template(
      template_, [&](char c) { out.push_back(c); },
      [&](std::string_view name) {
        const std::string* value = record.find(name);
        if (value == nullptr) {
          throw Error(ErrorKind::kMissingColumn, "record " + std::to_string(record.id) +
                                                     " has no value for {" + std::string(name) +
                                                     "}");
        }
        out += *value;
      });
  return out;
}

std::string render_prompt(const Predicate& predicate, const Record& record) {
  std::string prompt;
  if (!predicate.instruction().empty()) {
    prompt += predicate.instruction();
    prompt += "\n\n";
  }
  prompt += "Determine whether the following statement is true.\nStatement: ";
  prompt += predicate.fill(record);
  prompt += '\n';
  prompt += kAnswerFormatSuffix;
  return prompt;
}

std::string fused_column_text(const Record& record, const std::vector<std::string>& columns) {
  std::string out;
  for (const auto& name : columns) {
    const std::string* value = record.find(name);
    if (value == nullptr) {
      throw Error(ErrorKind::kMissingColumn,
                  "record " + std::to_string(record.id) + " has no column '" + name + "'");
    }
    if (!out.empty()) out.push_back('\n');
    out += name;
    out += ": ";
    out += *value;
  }
  return out;
}

}  // namespace semfilter
