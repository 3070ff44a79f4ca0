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

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "relml/catalog.hpp"

namespace relml {

enum class TaskType { kClassification, kRegression };

std::string_view to_string(TaskType type);

struct TaskProfile {
  std::string task_name;
  TaskType task_type = TaskType::kClassification;
  std::string target_table;
  std::string target_column;
  std::optional<std::string> prediction_horizon;
  std::optional<std::string> label_rule;

  bool operator==(const TaskProfile&) const = default;
};

/// Schema-aligns a task profile document. Throws ValidationError listing
/// every violation with its field path.
TaskProfile validate_task_profile(const nlohmann::json& doc, const Database& db);
/// Same, from raw text; malformed JSON is reported as a kInput error.
TaskProfile validate_task_profile_text(std::string_view text, const Database& db);
nlohmann::json task_profile_to_json(const TaskProfile& task);

bool is_valid_horizon(std::string_view horizon);

/// Per-row label of the target table (nullopt for unlabeled rows). Binary
/// categorical labels map their two sorted distinct values to 0 and 1.
std::vector<std::optional<double>> extract_labels(const Table& target, const TaskProfile& task);

// ---------------------------------------------------------------------------
// Filter predicates

enum class CompareOp { kEq, kNe, kLt, kLe, kGt, kGe, kIn };

std::string_view to_string(CompareOp op);
CompareOp parse_compare_op(std::string_view text);

struct Predicate {
  std::string column;
  CompareOp op = CompareOp::kEq;
  std::vector<Value> literals;  // exactly one unless op == kIn

  bool operator==(const Predicate&) const = default;
};

/// Nulls fail every comparison.
bool evaluate_predicate(const Predicate& pred, const Value& value);

// ---------------------------------------------------------------------------
// Data profile

struct DataProfile {
  std::string target_table;
  std::vector<std::string> related_tables;
  /// Retained columns per table; a table absent from the map keeps every column.
  std::map<std::string, std::vector<std::string>> columns;
  std::vector<Relation> join_paths;
  std::map<std::string, std::vector<Predicate>> filters;

  std::vector<std::string> tables() const;
  bool operator==(const DataProfile&) const = default;
};

/// Parses and checks a data profile against the catalog (tables, columns,
/// join edges, reachability, literal kinds). Throws ValidationError.
DataProfile parse_data_profile(const nlohmann::json& doc, const Catalog& catalog);
nlohmann::json data_profile_to_json(const DataProfile& profile);

struct DeriveOptions {
  int max_hops = 2;
  std::size_t text_length_limit = 256;
};

struct DerivedProfile {
  DataProfile profile;
  std::vector<std::string> warnings;
};

/// Deterministic profiler: target plus all tables within `max_hops` FK edges;
/// drops text columns whose longest value exceeds the length limit.
DerivedProfile derive_data_profile(const TaskProfile& task, const Database& db,
                                   const DeriveOptions& options = {});

/// Columns materialized for `table`: retained ones plus forced keys, in catalog order.
std::vector<std::string> materialized_columns(const DataProfile& profile, const TableMeta& meta);

struct SqlFragment {
  std::string table;
  std::string sql;
  std::vector<std::string> join_comments;
};

std::vector<SqlFragment> emit_sql_fragments(const DataProfile& profile, const Catalog& catalog);
std::string sql_literal(const Value& v);

// ---------------------------------------------------------------------------
// Optional remote agent for natural-language questions

class AgentClient {
 public:
  virtual ~AgentClient() = default;
  /// Sends the request document, returns the raw response body.
  virtual std::string complete(const nlohmann::json& request) = 0;
};

struct HttpClientConfig {
  std::string endpoint;          // e.g. http://host:port/path
  std::string credential_env;    // environment variable holding a bearer token
  int timeout_seconds = 30;

  /// Reads `<prefix>_ENDPOINT` and uses `<prefix>_API_KEY` as the credential variable.
  static HttpClientConfig from_environment(const std::string& prefix);
};

/// Plain-HTTP POST client (JSON body, optional bearer token).
class HttpJsonClient : public AgentClient {
 public:
  explicit HttpJsonClient(HttpClientConfig config);
  std::string complete(const nlohmann::json& request) override;

 private:
  HttpClientConfig config_;
};

/// Posts {nlq, catalog_summary}; the reply must be a task profile document.
TaskProfile agent_parse_nlq(std::string_view nlq, const Database& db, AgentClient& client);

}  // namespace relml
