/*
 * Copyright 2026 The relml Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "relml/catalog.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace relml {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kCategorical: return "categorical";
    case ColumnKind::kNumerical: return "numerical";
    case ColumnKind::kText: return "text";
    case ColumnKind::kTimestamp: return "timestamp";
  }
  return "categorical";
}

ColumnKind parse_column_kind(std::string_view text) {
  if (text == "categorical") return ColumnKind::kCategorical;
  if (text == "numerical") return ColumnKind::kNumerical;
  if (text == "text") return ColumnKind::kText;
  if (text == "timestamp") return ColumnKind::kTimestamp;
  throw Error(ErrorKind::kLoad, "unknown column kind '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Timestamps

namespace {

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  const char* b = s.data() + pos;
  auto [ptr, ec] = std::from_chars(b, b + len, out);
  return ec == std::errc() && ptr == b + len;
}

}  // namespace

Timestamp from_civil(const CivilTime& c) {
  using namespace std::chrono;
  const year_month_day ymd{year{c.year}, month{c.month}, day{c.day}};
  if (!ymd.ok()) throw Error(ErrorKind::kInput, "invalid calendar date");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return Timestamp{static_cast<std::int64_t>(days) * 86400 + c.hour * 3600 + c.minute * 60 + c.second};
}

CivilTime to_civil(Timestamp ts) {
  using namespace std::chrono;
  std::int64_t days = ts.seconds / 86400;
  std::int64_t rem = ts.seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  CivilTime c;
  c.year = static_cast<int>(ymd.year());
  c.month = static_cast<unsigned>(ymd.month());
  c.day = static_cast<unsigned>(ymd.day());
  c.hour = static_cast<unsigned>(rem / 3600);
  c.minute = static_cast<unsigned>((rem % 3600) / 60);
  c.second = static_cast<unsigned>(rem % 60);
  return c;
}

Timestamp parse_timestamp(std::string_view text) {
  auto fail = [&] { return Error(ErrorKind::kInput, "unparseable timestamp '" + std::string(text) + "'"); };
  std::string_view s = text;
  if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.remove_suffix(1);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw fail();
  if (!read_int(s, 0, 4, y) || !read_int(s, 5, 2, mo) || !read_int(s, 8, 2, d)) throw fail();
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':') throw fail();
    if (!read_int(s, 11, 2, h) || !read_int(s, 14, 2, mi)) throw fail();
    if (s.size() > 16) {
      if (s.size() != 19 || s[16] != ':' || !read_int(s, 17, 2, se)) throw fail();
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 59 || h < 0 || mi < 0 || se < 0) throw fail();
  try {
    return from_civil({y, static_cast<unsigned>(mo), static_cast<unsigned>(d), static_cast<unsigned>(h),
                       static_cast<unsigned>(mi), static_cast<unsigned>(se)});
  } catch (const Error&) {
    throw fail();
  }
}

std::string format_timestamp(Timestamp ts) {
  const auto c = to_civil(ts);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02u:%02u:%02u", c.year, c.month, c.day, c.hour,
                c.minute, c.second);
  return buf;
}

// ---------------------------------------------------------------------------
// Values

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string value_text(const Value& v) {
  struct Visitor {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(double d) const { return format_number(d); }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(Timestamp t) const { return format_timestamp(t); }
  };
  return std::visit(Visitor{}, v);
}

Value parse_value(std::string_view text, ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kCategorical:
    case ColumnKind::kText:
      return std::string(text);
    case ColumnKind::kNumerical: {
      double d = 0.0;
      std::string_view s = text;
      while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
      while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
      if (!s.empty() && s.front() == '+') s.remove_prefix(1);
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error(ErrorKind::kInput, "not a number: '" + std::string(text) + "'");
      }
      return d;
    }
    case ColumnKind::kTimestamp:
      return parse_timestamp(text);
  }
  return std::monostate{};
}

// ---------------------------------------------------------------------------
// Schema

std::optional<std::size_t> TableMeta::column_index(std::string_view column) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == column) return i;
  return std::nullopt;
}

std::optional<std::size_t> TableMeta::primary_key_index() const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].primary_key) return i;
  return std::nullopt;
}

std::optional<std::size_t> TableMeta::time_index() const {
  std::optional<std::size_t> only;
  std::size_t count = 0;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].kind != ColumnKind::kTimestamp) continue;
    if (columns[i].timestamp_role) return i;
    only = i;
    ++count;
  }
  return count == 1 ? only : std::nullopt;
}

const TableMeta* Catalog::find_table(std::string_view name) const {
  for (const auto& t : tables)
    if (t.name == name) return &t;
  return nullptr;
}

const TableMeta& Catalog::table(std::string_view name) const {
  if (auto* t = find_table(name)) return *t;
  throw Error(ErrorKind::kLoad, "unknown table '" + std::string(name) + "'");
}

const Table* Database::find_table(std::string_view name) const {
  for (const auto& t : tables)
    if (t.meta.name == name) return &t;
  return nullptr;
}

const Table& Database::table(std::string_view name) const {
  if (auto* t = find_table(name)) return *t;
  throw Error(ErrorKind::kLoad, "unknown table '" + std::string(name) + "'");
}

Catalog parse_schema(const json& doc) {
  auto load_error = [](const std::string& msg) { return Error(ErrorKind::kLoad, "schema: " + msg); };
  if (!doc.is_object() || !doc.contains("tables") || !doc["tables"].is_array()) {
    throw load_error("expected an object with a 'tables' array");
  }
  Catalog cat;
  std::set<std::string> table_names;
  for (const auto& t : doc["tables"]) {
    TableMeta meta;
    meta.name = t.at("name").get<std::string>();
    meta.file = t.value("file", meta.name + ".csv");
    if (!table_names.insert(meta.name).second) throw load_error("duplicate table '" + meta.name + "'");
    std::set<std::string> column_names;
    int pk_count = 0;
    for (const auto& c : t.at("columns")) {
      ColumnMeta col;
      col.name = c.at("name").get<std::string>();
      col.kind = parse_column_kind(c.at("kind").get<std::string>());
      col.primary_key = c.value("pk", false);
      if (c.contains("fk") && !c["fk"].is_null()) {
        col.foreign_key = ForeignKey{c["fk"].at("table").get<std::string>(), c["fk"].at("column").get<std::string>()};
      }
      if (c.contains("timestamp_role") && !c["timestamp_role"].is_null()) {
        col.timestamp_role = c["timestamp_role"].get<std::string>();
        if (col.kind != ColumnKind::kTimestamp) {
          throw load_error("column '" + meta.name + "." + col.name + "' has timestamp_role but is not a timestamp");
        }
      }
      if (!column_names.insert(col.name).second) {
        throw load_error("duplicate column '" + col.name + "' in table '" + meta.name + "'");
      }
      pk_count += col.primary_key ? 1 : 0;
      meta.columns.push_back(std::move(col));
    }
    if (pk_count > 1) throw load_error("table '" + meta.name + "' declares more than one primary key");
    cat.tables.push_back(std::move(meta));
  }
  for (const auto& t : cat.tables) {
    for (const auto& c : t.columns) {
      if (!c.foreign_key) continue;
      Relation rel{t.name, c.name, c.foreign_key->table, c.foreign_key->column};
      const TableMeta* parent = cat.find_table(rel.parent_table);
      if (!parent) throw load_error("relation " + rel.name() + " references nonexistent table '" + rel.parent_table + "'");
      auto pk = parent->primary_key_index();
      if (!pk || parent->columns[*pk].name != rel.pk_column) {
        throw load_error("relation " + rel.name() + " must reference the primary key of '" + rel.parent_table + "'");
      }
      cat.relations.push_back(std::move(rel));
    }
  }
  return cat;
}

json schema_to_json(const Catalog& catalog) {
  json tables = json::array();
  for (const auto& t : catalog.tables) {
    json cols = json::array();
    for (const auto& c : t.columns) {
      json col = {{"name", c.name}, {"kind", to_string(c.kind)}};
      if (c.primary_key) col["pk"] = true;
      if (c.foreign_key) col["fk"] = {{"table", c.foreign_key->table}, {"column", c.foreign_key->column}};
      if (c.timestamp_role) col["timestamp_role"] = *c.timestamp_role;
      cols.push_back(std::move(col));
    }
    tables.push_back({{"name", t.name}, {"file", t.file}, {"columns", std::move(cols)}});
  }
  return {{"tables", std::move(tables)}};
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::vector<std::optional<std::string>>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::optional<std::string>>> records;
  std::vector<std::optional<std::string>> record;
  std::string field;
  bool quoted = false, in_quotes = false, field_started = false;
  auto end_field = [&] {
    if (!quoted && field.empty()) {
      record.emplace_back(std::nullopt);
    } else {
      record.emplace_back(field);
    }
    field.clear();
    quoted = false;
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      in_quotes = quoted = field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\r') {
      if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else if (ch == '\n') {
      end_record();
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (in_quotes) throw Error(ErrorKind::kLoad, "csv: unterminated quoted field");
  if (field_started || !record.empty()) end_record();
  return records;
}

std::string csv_escape(std::string_view field) {
  const bool needs = field.empty() || field.find_first_of(",\"\r\n") != std::string_view::npos ||
                     field.front() == ' ' || field.back() == ' ';
  if (!needs) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

// ---------------------------------------------------------------------------
// Load / write

std::vector<FkIntegrity> check_foreign_keys(const Database& db) {
  std::vector<FkIntegrity> out;
  for (const auto& rel : db.catalog.relations) {
    const Table* child = db.find_table(rel.child_table);
    const Table* parent = db.find_table(rel.parent_table);
    if (!child || !parent) continue;
    const auto fk = child->meta.column_index(rel.fk_column);
    const auto pk = parent->meta.column_index(rel.pk_column);
    if (!fk || !pk) continue;
    std::unordered_set<std::string> keys;
    for (const auto& r : parent->rows)
      if (!is_null(r[*pk])) keys.insert(value_text(r[*pk]));
    FkIntegrity fi{rel, 0, 0};
    for (const auto& r : child->rows) {
      if (is_null(r[*fk])) continue;
      ++fi.references;
      if (!keys.count(value_text(r[*fk]))) ++fi.dangling;
    }
    out.push_back(std::move(fi));
  }
  return out;
}

LoadResult load_catalog(const fs::path& dir) {
  const fs::path schema_path = dir / "schema.json";
  std::ifstream schema_in(schema_path);
  if (!schema_in) throw Error(ErrorKind::kLoad, "missing schema.json in " + dir.string());
  json doc;
  try {
    doc = json::parse(schema_in);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kLoad, std::string("schema.json is not valid JSON: ") + ex.what());
  }
  LoadResult result;
  Database& db = result.database;
  try {
    db.catalog = parse_schema(doc);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kLoad, std::string("schema.json malformed: ") + ex.what());
  }

  for (auto& meta : db.catalog.tables) {
    const fs::path file = dir / meta.file;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorKind::kLoad, "missing table file '" + meta.file + "' for table '" + meta.name + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    auto records = parse_csv(ss.str());
    if (records.empty()) throw Error(ErrorKind::kLoad, "table file '" + meta.file + "' has no header");

    // Header may order columns differently from the schema.
    const auto& header = records[0];
    std::vector<std::size_t> source(meta.columns.size());
    for (std::size_t c = 0; c < meta.columns.size(); ++c) {
      bool found = false;
      for (std::size_t h = 0; h < header.size(); ++h) {
        if (header[h] && *header[h] == meta.columns[c].name) {
          source[c] = h;
          found = true;
          break;
        }
      }
      if (!found) {
        throw Error(ErrorKind::kLoad, "table '" + meta.name + "': column '" + meta.columns[c].name + "' missing from header");
      }
    }

    Table table;
    table.meta = meta;
    const auto pk = meta.primary_key_index();
    std::unordered_set<std::string> seen_keys;
    for (std::size_t r = 1; r < records.size(); ++r) {
      const auto& rec = records[r];
      if (rec.size() == 1 && !rec[0] && header.size() > 1) continue;  // blank line
      if (rec.size() != header.size()) {
        throw Error(ErrorKind::kLoad, "table '" + meta.name + "' row " + std::to_string(r) + ": expected " +
                                          std::to_string(header.size()) + " fields, got " + std::to_string(rec.size()));
      }
      Row row(meta.columns.size());
      for (std::size_t c = 0; c < meta.columns.size(); ++c) {
        const auto& field = rec[source[c]];
        if (!field) continue;
        try {
          row[c] = parse_value(*field, meta.columns[c].kind);
        } catch (const Error& ex) {
          throw Error(ErrorKind::kLoad, "kind violation in table '" + meta.name + "' row " + std::to_string(r) +
                                            " column '" + meta.columns[c].name + "': " + ex.what());
        }
      }
      if (pk) {
        if (is_null(row[*pk])) {
          throw Error(ErrorKind::kLoad, "table '" + meta.name + "' row " + std::to_string(r) + ": null primary key");
        }
        if (!seen_keys.insert(value_text(row[*pk])).second) {
          throw Error(ErrorKind::kLoad, "duplicate primary key '" + value_text(row[*pk]) + "' in table '" + meta.name + "'");
        }
      }
      table.rows.push_back(std::move(row));
    }
    meta.row_count = table.rows.size();
    table.meta.row_count = meta.row_count;
    db.tables.push_back(std::move(table));
  }
  result.integrity = check_foreign_keys(db);
  return result;
}

void write_dataset(const fs::path& dir, const Database& db) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "schema.json");
    if (!out) throw Error(ErrorKind::kIo, "cannot write schema.json in " + dir.string());
    out << schema_to_json(db.catalog).dump(2) << "\n";
  }
  for (const auto& table : db.tables) {
    std::ofstream out(dir / table.meta.file, std::ios::binary);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + table.meta.file);
    for (std::size_t c = 0; c < table.meta.columns.size(); ++c) {
      if (c) out << ',';
      out << csv_escape(table.meta.columns[c].name);
    }
    out << '\n';
    for (const auto& row : table.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out << ',';
        if (!is_null(row[c])) out << csv_escape(value_text(row[c]));
      }
      out << '\n';
    }
  }
}

json catalog_summary(const Database& db) {
  json tables = json::array();
  for (const auto& t : db.tables) {
    json cols = json::array();
    for (const auto& c : t.meta.columns) {
      json col = {{"name", c.name}, {"kind", to_string(c.kind)}};
      if (c.primary_key) col["pk"] = true;
      if (c.foreign_key) col["fk"] = c.foreign_key->table + "." + c.foreign_key->column;
      cols.push_back(std::move(col));
    }
    tables.push_back({{"name", t.meta.name}, {"rows", t.rows.size()}, {"columns", std::move(cols)}});
  }
  json rels = json::array();
  for (const auto& r : db.catalog.relations) rels.push_back(r.name());
  return {{"tables", std::move(tables)}, {"relations", std::move(rels)}};
}

}  // namespace relml
