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

#include "relml/profiles.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <regex>
#include <set>

#include <httplib.h>

namespace relml {

using nlohmann::json;

std::string_view to_string(TaskType type) {
  return type == TaskType::kClassification ? "classification" : "regression";
}

// ---------------------------------------------------------------------------
// Task profile

bool is_valid_horizon(std::string_view horizon) {
  static const std::regex kShort(R"(^[0-9]+[smhdw]$)");
  static const std::regex kIso(R"(^P(?:[0-9]+W|(?:[0-9]+Y)?(?:[0-9]+M)?(?:[0-9]+D)?(?:T(?:[0-9]+H)?(?:[0-9]+M)?(?:[0-9]+S)?)?)$)");
  const std::string s(horizon);
  if (std::regex_match(s, kShort)) return true;
  // ISO form needs at least one component and no dangling 'T'.
  return std::regex_match(s, kIso) && s != "P" && s.back() != 'T';
}

namespace {

std::vector<std::string> distinct_strings(const Table& t, std::size_t col) {
  std::set<std::string> values;
  for (const auto& r : t.rows)
    if (!is_null(r[col])) values.insert(value_text(r[col]));
  return {values.begin(), values.end()};
}

}  // namespace

TaskProfile validate_task_profile(const json& doc, const Database& db) {
  std::vector<Violation> v;
  if (!doc.is_object()) throw ValidationError(std::vector<Violation>{{"/", "task profile must be a JSON object"}});

  auto get_string = [&](const char* key, bool required) -> std::optional<std::string> {
    if (!doc.contains(key) || doc[key].is_null()) {
      if (required) v.push_back({std::string("/") + key, "missing field"});
      return std::nullopt;
    }
    if (!doc[key].is_string()) {
      v.push_back({std::string("/") + key, "must be a string"});
      return std::nullopt;
    }
    return doc[key].get<std::string>();
  };

  TaskProfile task;
  auto name = get_string("task_name", true);
  auto type = get_string("task_type", true);
  auto table = get_string("target_table", true);
  auto column = get_string("target_column", true);
  task.prediction_horizon = get_string("prediction_horizon", false);
  task.label_rule = get_string("label_rule", false);

  if (name) {
    if (name->empty()) v.push_back({"/task_name", "must not be empty"});
    task.task_name = *name;
  }
  if (type) {
    if (*type == "classification") {
      task.task_type = TaskType::kClassification;
    } else if (*type == "regression") {
      task.task_type = TaskType::kRegression;
    } else {
      v.push_back({"/task_type", "unknown task type '" + *type + "'"});
      type.reset();
    }
  }
  if (task.prediction_horizon && !is_valid_horizon(*task.prediction_horizon)) {
    v.push_back({"/prediction_horizon", "malformed horizon '" + *task.prediction_horizon + "'"});
  }

  const Table* target = nullptr;
  if (table) {
    task.target_table = *table;
    target = db.find_table(*table);
    if (!target) v.push_back({"/target_table", "unknown table '" + *table + "'"});
  }
  if (column && target) {
    task.target_column = *column;
    const auto idx = target->meta.column_index(*column);
    if (!idx) {
      v.push_back({"/target_column", "unknown column '" + *column + "' in table '" + *table + "'"});
    } else if (type) {
      const auto& col = target->meta.columns[*idx];
      if (task.task_type == TaskType::kRegression && col.kind != ColumnKind::kNumerical) {
        v.push_back({"/target_column", "kind mismatch: regression needs a numerical label, '" + *column + "' is " +
                                           std::string(to_string(col.kind))});
      } else if (task.task_type == TaskType::kClassification) {
        if (col.kind == ColumnKind::kNumerical) {
          for (const auto& r : target->rows) {
            if (is_null(r[*idx])) continue;
            const double y = std::get<double>(r[*idx]);
            if (y != 0.0 && y != 1.0) {
              v.push_back({"/target_column", "kind mismatch: classification label must be binary (0/1)"});
              break;
            }
          }
        } else if (col.kind == ColumnKind::kCategorical) {
          if (distinct_strings(*target, *idx).size() > 2) {
            v.push_back({"/target_column", "kind mismatch: classification label has more than two classes"});
          }
        } else {
          v.push_back({"/target_column", "kind mismatch: classification label cannot be " +
                                             std::string(to_string(col.kind))});
        }
      }
    }
  } else if (column) {
    task.target_column = *column;
  }
  if (!v.empty()) throw ValidationError(std::move(v));
  return task;
}

TaskProfile validate_task_profile_text(std::string_view text, const Database& db) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& ex) {
    throw Error(ErrorKind::kInput, std::string("task profile syntax error: ") + ex.what());
  }
  return validate_task_profile(doc, db);
}

json task_profile_to_json(const TaskProfile& task) {
  json doc = {{"task_name", task.task_name},
              {"task_type", to_string(task.task_type)},
              {"target_table", task.target_table},
              {"target_column", task.target_column}};
  if (task.prediction_horizon) doc["prediction_horizon"] = *task.prediction_horizon;
  if (task.label_rule) doc["label_rule"] = *task.label_rule;
  return doc;
}

std::vector<std::optional<double>> extract_labels(const Table& target, const TaskProfile& task) {
  const auto idx = target.meta.column_index(task.target_column);
  if (!idx) throw Error(ErrorKind::kConfig, "label column '" + task.target_column + "' not in slice");
  const auto kind = target.meta.columns[*idx].kind;
  std::vector<std::optional<double>> out(target.rows.size());
  std::vector<std::string> classes;
  if (kind == ColumnKind::kCategorical) classes = distinct_strings(target, *idx);
  for (std::size_t r = 0; r < target.rows.size(); ++r) {
    const auto& value = target.rows[r][*idx];
    if (is_null(value)) continue;
    if (kind == ColumnKind::kNumerical) {
      out[r] = std::get<double>(value);
    } else if (kind == ColumnKind::kCategorical) {
      const auto& s = std::get<std::string>(value);
      out[r] = static_cast<double>(std::find(classes.begin(), classes.end(), s) - classes.begin());
    } else {
      throw Error(ErrorKind::kConfig, "label column must be numerical or categorical");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predicates

std::string_view to_string(CompareOp op) {
  switch (op) {
    case CompareOp::kEq: return "=";
    case CompareOp::kNe: return "<>";
    case CompareOp::kLt: return "<";
    case CompareOp::kLe: return "<=";
    case CompareOp::kGt: return ">";
    case CompareOp::kGe: return ">=";
    case CompareOp::kIn: return "IN";
  }
  return "=";
}

CompareOp parse_compare_op(std::string_view text) {
  if (text == "=" || text == "==") return CompareOp::kEq;
  if (text == "!=" || text == "<>" || text == "≠") return CompareOp::kNe;
  if (text == "<") return CompareOp::kLt;
  if (text == "<=" || text == "≤") return CompareOp::kLe;
  if (text == ">") return CompareOp::kGt;
  if (text == ">=" || text == "≥") return CompareOp::kGe;
  if (text == "IN" || text == "in") return CompareOp::kIn;
  throw Error(ErrorKind::kProfile, "unknown comparison operator '" + std::string(text) + "'");
}

namespace {

// Three-way comparison of two non-null values of the same alternative.
int compare_values(const Value& a, const Value& b) {
  if (a.index() != b.index()) throw Error(ErrorKind::kProfile, "predicate literal kind differs from column kind");
  if (auto* x = std::get_if<double>(&a)) {
    const double y = std::get<double>(b);
    return *x < y ? -1 : (*x > y ? 1 : 0);
  }
  if (auto* x = std::get_if<std::string>(&a)) {
    const int c = x->compare(std::get<std::string>(b));
    return c < 0 ? -1 : (c > 0 ? 1 : 0);
  }
  if (auto* x = std::get_if<Timestamp>(&a)) {
    const auto y = std::get<Timestamp>(b);
    return *x < y ? -1 : (*x > y ? 1 : 0);
  }
  return 0;
}

Value literal_from_json(const json& j, ColumnKind kind) {
  if (j.is_null()) throw Error(ErrorKind::kProfile, "null literal not allowed");
  if (j.is_number()) {
    if (kind != ColumnKind::kNumerical) throw Error(ErrorKind::kProfile, "numeric literal on non-numerical column");
    return j.get<double>();
  }
  if (j.is_string()) return parse_value(j.get<std::string>(), kind);
  throw Error(ErrorKind::kProfile, "literal must be a number or string");
}

json literal_to_json(const Value& v) {
  if (auto* d = std::get_if<double>(&v)) return *d;
  return value_text(v);
}

}  // namespace

bool evaluate_predicate(const Predicate& pred, const Value& value) {
  if (is_null(value)) return false;
  if (pred.op == CompareOp::kIn) {
    return std::any_of(pred.literals.begin(), pred.literals.end(),
                       [&](const Value& lit) { return compare_values(value, lit) == 0; });
  }
  const int c = compare_values(value, pred.literals.at(0));
  switch (pred.op) {
    case CompareOp::kEq: return c == 0;
    case CompareOp::kNe: return c != 0;
    case CompareOp::kLt: return c < 0;
    case CompareOp::kLe: return c <= 0;
    case CompareOp::kGt: return c > 0;
    case CompareOp::kGe: return c >= 0;
    case CompareOp::kIn: break;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Data profile

std::vector<std::string> DataProfile::tables() const {
  std::vector<std::string> out{target_table};
  out.insert(out.end(), related_tables.begin(), related_tables.end());
  return out;
}

namespace {

std::string relation_path(std::size_t i) { return "/join_paths/" + std::to_string(i); }

}  // namespace

DataProfile parse_data_profile(const json& doc, const Catalog& catalog) {
  std::vector<Violation> v;
  if (!doc.is_object()) throw ValidationError(std::vector<Violation>{{"/", "data profile must be a JSON object"}});
  DataProfile p;
  try {
    p.target_table = doc.at("target_table").get<std::string>();
  } catch (const json::exception&) {
    throw ValidationError(std::vector<Violation>{{"/target_table", "missing or not a string"}});
  }
  if (!catalog.find_table(p.target_table)) v.push_back({"/target_table", "unknown table '" + p.target_table + "'"});

  std::set<std::string> in_profile{p.target_table};
  if (doc.contains("related_tables")) {
    std::size_t i = 0;
    for (const auto& t : doc["related_tables"]) {
      const auto name = t.get<std::string>();
      const std::string path = "/related_tables/" + std::to_string(i++);
      if (!catalog.find_table(name)) {
        v.push_back({path, "unknown table '" + name + "'"});
      } else if (!in_profile.insert(name).second) {
        v.push_back({path, "duplicate table '" + name + "'"});
      }
      p.related_tables.push_back(name);
    }
  }
  if (doc.contains("columns")) {
    for (const auto& [table, cols] : doc["columns"].items()) {
      const TableMeta* meta = catalog.find_table(table);
      if (!meta || !in_profile.count(table)) {
        v.push_back({"/columns/" + table, "table not part of the profile"});
        continue;
      }
      auto& list = p.columns[table];
      for (const auto& c : cols) {
        const auto name = c.get<std::string>();
        if (!meta->column_index(name)) v.push_back({"/columns/" + table, "unknown column '" + name + "'"});
        list.push_back(name);
      }
    }
  }
  if (doc.contains("join_paths")) {
    std::size_t i = 0;
    for (const auto& j : doc["join_paths"]) {
      Relation rel;
      try {
        rel = {j.at("child_table").get<std::string>(), j.at("fk_column").get<std::string>(),
               j.at("parent_table").get<std::string>(), j.at("pk_column").get<std::string>()};
      } catch (const json::exception&) {
        v.push_back({relation_path(i++), "join path needs child_table, fk_column, parent_table, pk_column"});
        continue;
      }
      if (std::find(catalog.relations.begin(), catalog.relations.end(), rel) == catalog.relations.end()) {
        v.push_back({relation_path(i), "no catalog relation " + rel.name()});
      } else if (!in_profile.count(rel.child_table) || !in_profile.count(rel.parent_table)) {
        v.push_back({relation_path(i), "join path " + rel.name() + " leaves the profile tables"});
      }
      p.join_paths.push_back(std::move(rel));
      ++i;
    }
  }
  // Reachability of related tables through the join paths.
  {
    std::set<std::string> reached{p.target_table};
    std::deque<std::string> queue{p.target_table};
    while (!queue.empty()) {
      const auto cur = queue.front();
      queue.pop_front();
      for (const auto& rel : p.join_paths) {
        const std::string* other = nullptr;
        if (rel.child_table == cur) other = &rel.parent_table;
        if (rel.parent_table == cur) other = &rel.child_table;
        if (other && reached.insert(*other).second) queue.push_back(*other);
      }
    }
    for (std::size_t i = 0; i < p.related_tables.size(); ++i) {
      if (!reached.count(p.related_tables[i])) {
        v.push_back({"/related_tables/" + std::to_string(i),
                     "table '" + p.related_tables[i] + "' not reachable from the target via join paths"});
      }
    }
  }
  if (doc.contains("filters")) {
    for (const auto& [table, preds] : doc["filters"].items()) {
      const TableMeta* meta = catalog.find_table(table);
      if (!meta || !in_profile.count(table)) {
        v.push_back({"/filters/" + table, "table not part of the profile"});
        continue;
      }
      std::size_t i = 0;
      for (const auto& pj : preds) {
        const std::string path = "/filters/" + table + "/" + std::to_string(i++);
        try {
          Predicate pred;
          pred.column = pj.at("column").get<std::string>();
          pred.op = parse_compare_op(pj.at("op").get<std::string>());
          const auto col = meta->column_index(pred.column);
          if (!col) {
            v.push_back({path, "unknown column '" + pred.column + "'"});
            continue;
          }
          const auto kind = meta->columns[*col].kind;
          if (pred.op == CompareOp::kIn) {
            for (const auto& lit : pj.at("values")) pred.literals.push_back(literal_from_json(lit, kind));
            if (pred.literals.empty()) v.push_back({path, "IN needs at least one value"});
          } else {
            pred.literals.push_back(literal_from_json(pj.at("value"), kind));
          }
          p.filters[table].push_back(std::move(pred));
        } catch (const Error& ex) {
          v.push_back({path, ex.what()});
        } catch (const json::exception& ex) {
          v.push_back({path, std::string("malformed predicate: ") + ex.what()});
        }
      }
    }
  }
  if (!v.empty()) throw ValidationError(std::move(v));
  return p;
}

json data_profile_to_json(const DataProfile& profile) {
  json joins = json::array();
  for (const auto& r : profile.join_paths) {
    joins.push_back({{"child_table", r.child_table},
                     {"fk_column", r.fk_column},
                     {"parent_table", r.parent_table},
                     {"pk_column", r.pk_column}});
  }
  json filters = json::object();
  for (const auto& [table, preds] : profile.filters) {
    json list = json::array();
    for (const auto& p : preds) {
      json pj = {{"column", p.column}, {"op", to_string(p.op)}};
      if (p.op == CompareOp::kIn) {
        json values = json::array();
        for (const auto& lit : p.literals) values.push_back(literal_to_json(lit));
        pj["values"] = std::move(values);
      } else {
        pj["value"] = literal_to_json(p.literals.at(0));
      }
      list.push_back(std::move(pj));
    }
    filters[table] = std::move(list);
  }
  return {{"target_table", profile.target_table},
          {"related_tables", profile.related_tables},
          {"columns", profile.columns},
          {"join_paths", std::move(joins)},
          {"filters", std::move(filters)}};
}

DerivedProfile derive_data_profile(const TaskProfile& task, const Database& db, const DeriveOptions& options) {
  const Catalog& cat = db.catalog;
  cat.table(task.target_table);
  DerivedProfile out;
  DataProfile& p = out.profile;
  p.target_table = task.target_table;

  // BFS over the undirected table graph; neighbours visited in name order so
  // the result does not depend on catalog ordering.
  std::map<std::string, int> dist{{task.target_table, 0}};
  std::deque<std::string> queue{task.target_table};
  bool has_edges = false;
  while (!queue.empty()) {
    const auto cur = queue.front();
    queue.pop_front();
    std::set<std::string> next;
    for (const auto& rel : cat.relations) {
      if (rel.child_table == cur) next.insert(rel.parent_table);
      if (rel.parent_table == cur) next.insert(rel.child_table);
    }
    if (cur == task.target_table) has_edges = !next.empty();
    if (dist[cur] >= options.max_hops) continue;
    for (const auto& n : next) {
      if (dist.emplace(n, dist[cur] + 1).second) queue.push_back(n);
    }
  }
  if (options.max_hops > 0 && !has_edges) {
    out.warnings.push_back("target table '" + task.target_table + "' has no relations; profile contains the target only");
  }
  std::vector<std::pair<int, std::string>> ordered;
  for (const auto& [name, d] : dist)
    if (name != task.target_table) ordered.emplace_back(d, name);
  std::sort(ordered.begin(), ordered.end());
  for (const auto& [_, name] : ordered) p.related_tables.push_back(name);

  for (const auto& rel : cat.relations) {
    if (dist.count(rel.child_table) && dist.count(rel.parent_table)) p.join_paths.push_back(rel);
  }
  std::sort(p.join_paths.begin(), p.join_paths.end(),
            [](const Relation& a, const Relation& b) { return a.name() < b.name(); });

  for (const auto& name : p.tables()) {
    const Table& t = db.table(name);
    auto& cols = p.columns[name];
    for (std::size_t c = 0; c < t.meta.columns.size(); ++c) {
      const auto& col = t.meta.columns[c];
      if (col.kind == ColumnKind::kText) {
        std::size_t longest = 0;
        for (const auto& r : t.rows)
          if (auto* s = std::get_if<std::string>(&r[c])) longest = std::max(longest, s->size());
        if (longest > options.text_length_limit) continue;
      }
      cols.push_back(col.name);
    }
  }
  return out;
}

std::vector<std::string> materialized_columns(const DataProfile& profile, const TableMeta& meta) {
  std::set<std::string> keep;
  auto it = profile.columns.find(meta.name);
  if (it == profile.columns.end()) {
    for (const auto& c : meta.columns) keep.insert(c.name);
  } else {
    keep.insert(it->second.begin(), it->second.end());
  }
  if (auto pk = meta.primary_key_index()) keep.insert(meta.columns[*pk].name);
  if (auto ts = meta.time_index()) keep.insert(meta.columns[*ts].name);
  for (const auto& rel : profile.join_paths) {
    if (rel.child_table == meta.name) keep.insert(rel.fk_column);
    if (rel.parent_table == meta.name) keep.insert(rel.pk_column);
  }
  std::vector<std::string> out;
  for (const auto& c : meta.columns)
    if (keep.count(c.name)) out.push_back(c.name);
  return out;
}

namespace {

std::string sql_identifier(const std::string& name) {
  static const std::regex kBare(R"(^[A-Za-z_][A-Za-z0-9_]*$)");
  if (std::regex_match(name, kBare)) return name;
  std::string out = "\"";
  for (char ch : name) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string sql_literal(const Value& v) {
  if (is_null(v)) return "NULL";
  if (auto* d = std::get_if<double>(&v)) return format_number(*d);
  std::string out = "'";
  for (char ch : value_text(v)) {
    if (ch == '\'') out += '\'';
    out += ch;
  }
  return out + "'";
}

std::vector<SqlFragment> emit_sql_fragments(const DataProfile& profile, const Catalog& catalog) {
  std::vector<SqlFragment> out;
  for (const auto& name : profile.tables()) {
    const TableMeta& meta = catalog.table(name);
    SqlFragment frag;
    frag.table = name;
    std::string sql = "SELECT ";
    const auto cols = materialized_columns(profile, meta);
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) sql += ",";
      sql += sql_identifier(cols[i]);
    }
    sql += " FROM " + sql_identifier(name);
    if (auto it = profile.filters.find(name); it != profile.filters.end() && !it->second.empty()) {
      sql += " WHERE ";
      for (std::size_t i = 0; i < it->second.size(); ++i) {
        const auto& p = it->second[i];
        if (i) sql += " AND ";
        sql += sql_identifier(p.column) + " " + std::string(to_string(p.op)) + " ";
        if (p.op == CompareOp::kIn) {
          sql += "(";
          for (std::size_t k = 0; k < p.literals.size(); ++k) {
            if (k) sql += ", ";
            sql += sql_literal(p.literals[k]);
          }
          sql += ")";
        } else {
          sql += sql_literal(p.literals.at(0));
        }
      }
    }
    frag.sql = std::move(sql);
    for (const auto& rel : profile.join_paths) {
      if (rel.child_table == name || rel.parent_table == name) {
        frag.join_comments.push_back("-- join: " + rel.child_table + "." + rel.fk_column + " = " +
                                     rel.parent_table + "." + rel.pk_column);
      }
    }
    out.push_back(std::move(frag));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Agent client

HttpClientConfig HttpClientConfig::from_environment(const std::string& prefix) {
  HttpClientConfig cfg;
  if (const char* e = std::getenv((prefix + "_ENDPOINT").c_str())) cfg.endpoint = e;
  cfg.credential_env = prefix + "_API_KEY";
  return cfg;
}

HttpJsonClient::HttpJsonClient(HttpClientConfig config) : config_(std::move(config)) {}

std::string HttpJsonClient::complete(const json& request) {
  static const std::regex kUrl(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, kUrl)) {
    throw Error(ErrorKind::kConfig, "endpoint must be an http:// URL, got '" + config_.endpoint + "'");
  }
  httplib::Client client(m[1].str());
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.credential_env.empty()) {
    if (const char* token = std::getenv(config_.credential_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const std::string path = m[2].matched ? m[2].str() : "/";
  auto res = client.Post(path, headers, request.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::kNetwork, "request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorKind::kNetwork, "request to " + config_.endpoint + " returned HTTP " + std::to_string(res->status));
  }
  return res->body;
}

TaskProfile agent_parse_nlq(std::string_view nlq, const Database& db, AgentClient& client) {
  const json request = {{"nlq", std::string(nlq)}, {"catalog_summary", catalog_summary(db)}};
  const std::string body = client.complete(request);
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& ex) {
    throw Error(ErrorKind::kInput, std::string("agent returned malformed JSON: ") + ex.what());
  }
  return validate_task_profile(doc, db);
}

}  // namespace relml
