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

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "relml/error.hpp"

namespace relml {

enum class ColumnKind { kCategorical, kNumerical, kText, kTimestamp };

std::string_view to_string(ColumnKind kind);
ColumnKind parse_column_kind(std::string_view text);

/// Seconds since the Unix epoch, UTC.
struct Timestamp {
  std::int64_t seconds = 0;
  auto operator<=>(const Timestamp&) const = default;
};

struct CivilTime {
  int year = 1970;
  unsigned month = 1, day = 1, hour = 0, minute = 0, second = 0;
};

/// Accepts `YYYY-MM-DD`, optionally followed by `T` or a space and
/// `HH:MM[:SS]`, and an optional trailing `Z`.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp ts);
CivilTime to_civil(Timestamp ts);
Timestamp from_civil(const CivilTime& civil);

/// monostate = null; categorical and text values are strings.
using Value = std::variant<std::monostate, double, std::string, Timestamp>;

inline bool is_null(const Value& v) { return std::holds_alternative<std::monostate>(v); }
/// Canonical text used for key matching and for SQL/CSV output.
std::string value_text(const Value& v);
/// Parses one field according to the column kind; throws kInput on mismatch.
Value parse_value(std::string_view text, ColumnKind kind);
std::string format_number(double v);

struct ForeignKey {
  std::string table;
  std::string column;
};

struct ColumnMeta {
  std::string name;
  ColumnKind kind = ColumnKind::kCategorical;
  bool primary_key = false;
  std::optional<ForeignKey> foreign_key;
  std::optional<std::string> timestamp_role;
};

struct TableMeta {
  std::string name;
  std::string file;
  std::vector<ColumnMeta> columns;
  std::size_t row_count = 0;

  std::optional<std::size_t> column_index(std::string_view column) const;
  std::optional<std::size_t> primary_key_index() const;
  /// Event-time column: the one carrying a timestamp_role, else the only timestamp column.
  std::optional<std::size_t> time_index() const;
};

struct Relation {
  std::string child_table;
  std::string fk_column;
  std::string parent_table;
  std::string pk_column;

  std::string name() const { return child_table + "." + fk_column + "->" + parent_table; }
  bool operator==(const Relation&) const = default;
};

struct Catalog {
  std::vector<TableMeta> tables;
  std::vector<Relation> relations;  // schema order: tables, then columns

  const TableMeta* find_table(std::string_view name) const;
  const TableMeta& table(std::string_view name) const;
};

/// Parses and checks schema.json: unique names, at most one PK, FKs hit a PK column.
Catalog parse_schema(const nlohmann::json& doc);
nlohmann::json schema_to_json(const Catalog& catalog);

using Row = std::vector<Value>;

struct Table {
  TableMeta meta;
  std::vector<Row> rows;
};

struct Database {
  Catalog catalog;
  std::vector<Table> tables;  // same order as catalog.tables

  const Table* find_table(std::string_view name) const;
  const Table& table(std::string_view name) const;
};

struct FkIntegrity {
  Relation relation;
  std::size_t references = 0;  // non-null FK values
  std::size_t dangling = 0;
};

struct LoadResult {
  Database database;
  std::vector<FkIntegrity> integrity;
};

/// Loads `schema.json` plus one CSV per table from `dir`.
LoadResult load_catalog(const std::filesystem::path& dir);
std::vector<FkIntegrity> check_foreign_keys(const Database& db);

/// Writes schema.json and table files; inverse of load_catalog.
void write_dataset(const std::filesystem::path& dir, const Database& db);

/// RFC-4180 reader. A field is null (nullopt) when empty and unquoted.
std::vector<std::vector<std::optional<std::string>>> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

nlohmann::json catalog_summary(const Database& db);

}  // namespace relml
