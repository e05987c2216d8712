#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "prefquery/core.hpp"
#include "prefquery/error.hpp"

namespace prefquery {

struct IngestConfig {
  std::filesystem::path path;
  char delimiter = ',';
  bool header = true;
  std::optional<std::string> id_column;
  std::optional<std::string> label_column;
  std::map<std::string, AttributeKind> kind_overrides;
  std::map<std::string, Direction> direction_overrides;
};

struct LoadedTable {
  Dataset dataset;
  std::optional<std::vector<double>> labels;
  std::string label_name;
};

namespace csv {

// RFC 4180 records: quoted fields may hold delimiters, doubled quotes and
// newlines. Each record remembers its starting line for error messages.
struct Record {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

inline std::vector<Record> parse(std::string_view text, char delimiter) {
  std::vector<Record> records;
  Record current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  current.line = 1;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = current.fields.size() == 1 && current.fields[0].empty();
    if (!blank) records.push_back(std::move(current));
    current = Record{};
    current.line = line;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == delimiter) {
      end_field();
    } else if (c == '\r') {
      continue;
    } else if (c == '\n') {
      ++line;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  require(!in_quotes, ErrorKind::validation,
          "unterminated quoted field starting near line " + std::to_string(current.line));
  if (!field.empty() || !current.fields.empty()) end_record();
  return records;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_number(std::string_view cell) {
  cell = trim(cell);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

inline std::string format_number(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::string quote(std::string_view s, char delimiter) {
  const bool needs = s.find(delimiter) != std::string_view::npos ||
                     s.find_first_of("\"\n\r") != std::string_view::npos ||
                     (!s.empty() && (s.front() == ' ' || s.back() == ' '));
  if (!needs) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace csv

// Zero-padded ids so lexicographic order matches row order.
inline std::string row_id(std::string_view prefix, std::size_t index, std::size_t count) {
  std::string digits = std::to_string(index);
  const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
  return std::string(prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

// A column is numerical iff every non-empty cell parses as a finite decimal
// (and at least one cell is non-empty); overrides win over inference.
inline LoadedTable parse_table(std::string_view text, const IngestConfig& cfg,
                               const std::string& source = "<memory>") {
  auto records = csv::parse(text, cfg.delimiter);
  require(!records.empty(), ErrorKind::validation, source + ": file is empty");

  std::vector<std::string> names;
  std::size_t first_data = 0;
  if (cfg.header) {
    for (const auto& f : records[0].fields) names.emplace_back(csv::trim(f));
    first_data = 1;
  } else {
    for (std::size_t c = 0; c < records[0].fields.size(); ++c) names.push_back("col" + std::to_string(c + 1));
  }
  require(records.size() > first_data, ErrorKind::validation, source + ": no data rows");
  const std::size_t width = names.size();
  for (std::size_t r = first_data; r < records.size(); ++r) {
    require(records[r].fields.size() == width, ErrorKind::validation,
            source + ":" + std::to_string(records[r].line) + ": expected " + std::to_string(width) +
                " fields, found " + std::to_string(records[r].fields.size()));
  }

  auto column_index = [&](const std::string& name) {
    for (std::size_t c = 0; c < width; ++c) {
      if (names[c] == name) return c;
    }
    fail(ErrorKind::validation, source + ": no column named '" + name + "'");
  };
  for (const auto& [name, _] : cfg.kind_overrides) column_index(name);
  for (const auto& [name, _] : cfg.direction_overrides) column_index(name);
  std::optional<std::size_t> id_col, label_col;
  if (cfg.id_column) id_col = column_index(*cfg.id_column);
  if (cfg.label_column) label_col = column_index(*cfg.label_column);

  const std::size_t rows = records.size() - first_data;
  auto cell = [&](std::size_t row, std::size_t col) -> const std::string& {
    return records[first_data + row].fields[col];
  };
  auto where = [&](std::size_t row, std::size_t col) {
    return source + ":" + std::to_string(records[first_data + row].line) + ": column '" +
           names[col] + "'";
  };
  auto numeric_column = [&](std::size_t col) {
    std::vector<double> values(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      auto v = csv::parse_number(cell(r, col));
      if (!v) {
        const bool empty = csv::trim(cell(r, col)).empty();
        fail(ErrorKind::validation,
             where(r, col) + (empty ? ": empty numerical cell"
                                    : ": cannot parse '" + cell(r, col) + "' as a number"));
      }
      values[r] = *v;
    }
    return values;
  };

  LoadedTable out;
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < rows; ++r) {
    ids.push_back(id_col ? std::string(csv::trim(cell(r, *id_col))) : row_id("r", r, rows));
  }
  if (label_col) {
    out.labels = numeric_column(*label_col);
    out.label_name = names[*label_col];
  }

  std::vector<AttributeSchema> schema;
  std::vector<Column> columns;
  for (std::size_t c = 0; c < width; ++c) {
    if (c == id_col || c == label_col) continue;
    AttributeKind kind = AttributeKind::textual;
    if (auto it = cfg.kind_overrides.find(names[c]); it != cfg.kind_overrides.end()) {
      kind = it->second;
    } else {
      bool any = false, all = true;
      for (std::size_t r = 0; r < rows && all; ++r) {
        if (csv::trim(cell(r, c)).empty()) continue;
        any = true;
        all = csv::parse_number(cell(r, c)).has_value();
      }
      if (any && all) kind = AttributeKind::numerical;
    }
    Direction dir = Direction::higher_is_better;
    if (auto it = cfg.direction_overrides.find(names[c]); it != cfg.direction_overrides.end()) {
      dir = it->second;
    }
    schema.push_back({names[c], kind, dir});
    if (kind == AttributeKind::numerical) {
      columns.emplace_back(numeric_column(c));
    } else {
      std::vector<std::string> values(rows);
      for (std::size_t r = 0; r < rows; ++r) values[r] = cell(r, c);
      columns.emplace_back(std::move(values));
    }
  }
  out.dataset = Dataset::from_columns(std::move(schema), std::move(ids), std::move(columns));
  return out;
}

inline LoadedTable load_csv(const IngestConfig& cfg) {
  std::ifstream in(cfg.path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + cfg.path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str(), cfg, cfg.path.string());
}

// Writes an "id" column, then every attribute in schema order, then an
// optional label column. Numbers use the shortest round-trip form.
inline std::string format_csv(const Dataset& dataset, const std::vector<double>* labels = nullptr,
                              const std::string& label_name = "label", char delimiter = ',') {
  std::string out = "id";
  for (const auto& a : dataset.schema()) out += delimiter + csv::quote(a.name, delimiter);
  if (labels) out += delimiter + csv::quote(label_name, delimiter);
  out += '\n';
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    out += csv::quote(dataset.ids()[r], delimiter);
    for (std::size_t c = 0; c < dataset.attribute_count(); ++c) {
      out += delimiter;
      const auto& col = dataset.column(c);
      if (const auto* nums = std::get_if<std::vector<double>>(&col)) {
        out += csv::format_number((*nums)[r]);
      } else {
        out += csv::quote(std::get<std::vector<std::string>>(col)[r], delimiter);
      }
    }
    if (labels) out += delimiter + csv::format_number(labels->at(r));
    out += '\n';
  }
  return out;
}

inline void write_csv(const Dataset& dataset, const std::filesystem::path& path,
                      const std::vector<double>* labels = nullptr,
                      const std::string& label_name = "label") {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << format_csv(dataset, labels, label_name);
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

// Ingest settings that reproduce `schema` exactly from a format_csv file.
inline IngestConfig ingest_config_for(const std::vector<AttributeSchema>& schema,
                                      std::filesystem::path path) {
  IngestConfig cfg;
  cfg.path = std::move(path);
  cfg.id_column = "id";
  for (const auto& a : schema) {
    cfg.kind_overrides[a.name] = a.kind;
    cfg.direction_overrides[a.name] = a.direction;
  }
  return cfg;
}

}  // namespace prefquery
