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

#include <deque>
#include <set>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "relml/profiles.hpp"
#include "test_util.hpp"

namespace relml {
namespace {

using nlohmann::json;
using testing::toy_database;

json churn_doc() {
  return {{"task_name", "churn"},
          {"task_type", "classification"},
          {"target_table", "users"},
          {"target_column", "churned"},
          {"prediction_horizon", "P30D"}};
}

std::vector<Violation> violations_of(const json& doc, const Database& db) {
  try {
    validate_task_profile(doc, db);
  } catch (const ValidationError& ex) {
    return ex.violations();
  }
  return {};
}

bool has_violation(const std::vector<Violation>& v, const std::string& path, const std::string& text) {
  for (const auto& x : v)
    if (x.path == path && x.message.find(text) != std::string::npos) return true;
  return false;
}

TEST(TaskProfile, AcceptsWellFormedChurn) {
  auto db = toy_database();
  auto task = validate_task_profile(churn_doc(), db);
  EXPECT_EQ(task.task_type, TaskType::kClassification);
  EXPECT_EQ(task.target_column, "churned");
  EXPECT_EQ(*task.prediction_horizon, "P30D");
}

TEST(TaskProfile, UnknownColumn) {
  auto db = toy_database();
  auto doc = churn_doc();
  doc["target_column"] = "nope";
  EXPECT_TRUE(has_violation(violations_of(doc, db), "/target_column", "unknown column"));
}

TEST(TaskProfile, RegressionOnCategoricalIsKindMismatch) {
  auto db = toy_database();
  auto doc = churn_doc();
  doc["task_type"] = "regression";
  doc["target_column"] = "country";
  EXPECT_TRUE(has_violation(violations_of(doc, db), "/target_column", "kind mismatch"));
}

TEST(TaskProfile, ClassificationNeedsBinaryLabel) {
  auto db = toy_database();
  auto doc = churn_doc();
  doc["target_column"] = "age";
  EXPECT_TRUE(has_violation(violations_of(doc, db), "/target_column", "kind mismatch"));
  doc["target_column"] = "country";  // three classes
  EXPECT_TRUE(has_violation(violations_of(doc, db), "/target_column", "kind mismatch"));
}

TEST(TaskProfile, CollectsMultipleViolations) {
  auto db = toy_database();
  json doc = {{"task_type", "ranking"}, {"target_table", "ghosts"}, {"target_column", "x"},
              {"prediction_horizon", "soon"}};
  auto v = violations_of(doc, db);
  EXPECT_TRUE(has_violation(v, "/task_name", "missing"));
  EXPECT_TRUE(has_violation(v, "/task_type", "unknown task type"));
  EXPECT_TRUE(has_violation(v, "/target_table", "unknown table"));
  EXPECT_TRUE(has_violation(v, "/prediction_horizon", "malformed"));
}

TEST(TaskProfile, SyntaxErrorIsInputError) {
  auto db = toy_database();
  try {
    validate_task_profile_text("{\"task_name\": ", db);
    FAIL();
  } catch (const ValidationError&) {
    FAIL() << "syntax errors are not validation errors";
  } catch (const Error& ex) {
    EXPECT_EQ(ex.kind(), ErrorKind::kInput);
  }
}

TEST(TaskProfile, ValidationIsIdempotent) {
  auto db = toy_database();
  auto once = validate_task_profile(churn_doc(), db);
  auto twice = validate_task_profile(task_profile_to_json(once), db);
  EXPECT_EQ(once, twice);
  EXPECT_EQ(task_profile_to_json(once), task_profile_to_json(twice));
}

TEST(TaskProfile, Horizons) {
  for (auto h : {"30d", "12h", "P1Y", "P1M2D", "PT6H", "P2W", "P1DT12H"}) EXPECT_TRUE(is_valid_horizon(h)) << h;
  for (auto h : {"", "P", "PT", "30", "d30", "P1H", "1 day"}) EXPECT_FALSE(is_valid_horizon(h)) << h;
}

TEST(TaskProfile, CategoricalLabelsMapToSortedClasses) {
  auto db = toy_database();
  auto& users = testing::mutable_table(db, "users");
  users.rows[0][2] = std::string("yes");
  for (std::size_t i = 1; i < users.rows.size(); ++i) users.rows[i][2] = std::string(i % 2 ? "no" : "yes");
  users.rows[3][2] = std::monostate{};
  TaskProfile task{"t", TaskType::kClassification, "users", "country", std::nullopt, std::nullopt};
  auto labels = extract_labels(users, task);
  EXPECT_EQ(*labels[0], 1.0);
  EXPECT_EQ(*labels[1], 0.0);
  EXPECT_FALSE(labels[3].has_value());
}

// ---------------------------------------------------------------------------

Database chain_database(bool shuffled = false) {
  json a = {{"name", "A"}, {"columns", {{{"name", "id"}, {"kind", "categorical"}, {"pk", true}},
                                        {{"name", "b_id"}, {"kind", "categorical"}, {"fk", {{"table", "B"}, {"column", "id"}}}}}}};
  json b = {{"name", "B"}, {"columns", {{{"name", "id"}, {"kind", "categorical"}, {"pk", true}},
                                        {{"name", "c_id"}, {"kind", "categorical"}, {"fk", {{"table", "C"}, {"column", "id"}}}}}}};
  json c = {{"name", "C"}, {"columns", {{{"name", "id"}, {"kind", "categorical"}, {"pk", true}},
                                        {{"name", "y"}, {"kind", "numerical"}}}}};
  json tables = shuffled ? json{c, a, b} : json{a, b, c};
  return testing::make_database({{"tables", tables}});
}

TEST(DeriveProfile, MaxHopsZeroIsTargetOnly) {
  auto db = toy_database();
  TaskProfile task{"churn", TaskType::kClassification, "users", "churned", std::nullopt, std::nullopt};
  auto d = derive_data_profile(task, db, {0, 256});
  EXPECT_EQ(d.profile.tables(), std::vector<std::string>{"users"});
  EXPECT_TRUE(d.profile.join_paths.empty());
  EXPECT_TRUE(d.warnings.empty());
}

TEST(DeriveProfile, ChainOneHop) {
  auto db = chain_database();
  TaskProfile task{"t", TaskType::kRegression, "A", "id", std::nullopt, std::nullopt};
  auto d = derive_data_profile(task, db, {1, 256});
  EXPECT_EQ(d.profile.tables(), (std::vector<std::string>{"A", "B"}));
  ASSERT_EQ(d.profile.join_paths.size(), 1u);
  EXPECT_EQ(d.profile.join_paths[0].name(), "A.b_id->B");
  auto d2 = derive_data_profile(task, db, {2, 256});
  EXPECT_EQ(d2.profile.tables(), (std::vector<std::string>{"A", "B", "C"}));
}

TEST(DeriveProfile, InvariantToTableOrder) {
  TaskProfile task{"t", TaskType::kRegression, "C", "y", std::nullopt, std::nullopt};
  auto a = derive_data_profile(task, chain_database(false)).profile;
  auto b = derive_data_profile(task, chain_database(true)).profile;
  EXPECT_EQ(data_profile_to_json(a), data_profile_to_json(b));
}

TEST(DeriveProfile, IsolatedTargetWarns) {
  json schema = {{"tables", {{{"name", "solo"}, {"columns", {{{"name", "id"}, {"kind", "categorical"}, {"pk", true}}}}}}}};
  auto db = testing::make_database(schema);
  TaskProfile task{"t", TaskType::kRegression, "solo", "id", std::nullopt, std::nullopt};
  auto d = derive_data_profile(task, db);
  EXPECT_EQ(d.profile.tables(), std::vector<std::string>{"solo"});
  ASSERT_EQ(d.warnings.size(), 1u);
}

TEST(DeriveProfile, DropsLongTextColumns) {
  auto db = toy_database();
  testing::mutable_table(db, "orders").rows[4][3] = std::string(300, 'x');
  TaskProfile task{"churn", TaskType::kClassification, "users", "churned", std::nullopt, std::nullopt};
  auto d = derive_data_profile(task, db);
  const auto& cols = d.profile.columns.at("orders");
  EXPECT_EQ(std::find(cols.begin(), cols.end(), "note"), cols.end());
  EXPECT_EQ(cols.size(), 4u);
}

std::set<std::string> bfs_oracle(const Catalog& cat, const std::string& start, int hops) {
  std::map<std::string, int> dist{{start, 0}};
  std::deque<std::string> q{start};
  while (!q.empty()) {
    auto cur = q.front();
    q.pop_front();
    if (dist[cur] == hops) continue;
    for (const auto& r : cat.relations) {
      for (auto [from, to] : {std::pair{r.child_table, r.parent_table}, std::pair{r.parent_table, r.child_table}}) {
        if (from == cur && !dist.count(to)) {
          dist[to] = dist[cur] + 1;
          q.push_back(to);
        }
      }
    }
  }
  std::set<std::string> out;
  for (const auto& [k, _] : dist) out.insert(k);
  return out;
}

TEST(DeriveProfile, RandomSchemasMatchBfsOracle) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto db = testing::random_database(rng, 5, 3);
    const auto& target = db.catalog.tables[rng() % 5].name;
    const int hops = static_cast<int>(rng() % 4);
    TaskProfile task{"t", TaskType::kRegression, target, "num", std::nullopt, std::nullopt};
    auto d = derive_data_profile(task, db, {hops, 256});
    auto tables = d.profile.tables();
    EXPECT_EQ(std::set<std::string>(tables.begin(), tables.end()), bfs_oracle(db.catalog, target, hops));
    // The derived profile always passes its own validation.
    EXPECT_EQ(parse_data_profile(data_profile_to_json(d.profile), db.catalog), d.profile);
  }
}

TEST(DataProfile, RejectsBadDocuments) {
  auto db = toy_database();
  TaskProfile task{"churn", TaskType::kClassification, "users", "churned", std::nullopt, std::nullopt};
  auto good = data_profile_to_json(derive_data_profile(task, db).profile);

  auto bad = good;
  bad["join_paths"] = json::array();
  try {
    parse_data_profile(bad, db.catalog);
    FAIL();
  } catch (const ValidationError& ex) {
    EXPECT_NE(ex.violations()[0].message.find("not reachable"), std::string::npos);
  }
  bad = good;
  bad["join_paths"][0]["fk_column"] = "amount";
  EXPECT_THROW(parse_data_profile(bad, db.catalog), ValidationError);
  bad = good;
  bad["columns"]["users"].push_back("ghost");
  EXPECT_THROW(parse_data_profile(bad, db.catalog), ValidationError);
  bad = good;
  bad["filters"]["users"] = {{{"column", "age"}, {"op", "~"}, {"value", 3}}};
  EXPECT_THROW(parse_data_profile(bad, db.catalog), ValidationError);
  bad = good;
  bad["filters"]["users"] = {{{"column", "age"}, {"op", ">"}, {"value", "old"}}};
  EXPECT_THROW(parse_data_profile(bad, db.catalog), ValidationError);
}

TEST(DataProfile, FilterRoundTrip) {
  auto db = toy_database();
  json doc = json::parse(R"({"target_table":"users","related_tables":["orders"],
    "join_paths":[{"child_table":"orders","fk_column":"user_id","parent_table":"users","pk_column":"user_id"}],
    "filters":{"users":[{"column":"age","op":">=","value":30},
                        {"column":"country","op":"IN","values":["de","fr"]},
                        {"column":"signup","op":"<","value":"2020-06-01"}]}})");
  auto p = parse_data_profile(doc, db.catalog);
  ASSERT_EQ(p.filters.at("users").size(), 3u);
  EXPECT_EQ(std::get<Timestamp>(p.filters.at("users")[2].literals[0]), parse_timestamp("2020-06-01"));
  EXPECT_EQ(parse_data_profile(data_profile_to_json(p), db.catalog), p);
}

// ---------------------------------------------------------------------------

TEST(SqlFragments, NoFilters) {
  json schema = {{"tables", {{{"name", "t"}, {"columns", {{{"name", "a"}, {"kind", "numerical"}},
                                                         {{"name", "b"}, {"kind", "categorical"}}}}}}}};
  auto cat = parse_schema(schema);
  DataProfile p;
  p.target_table = "t";
  auto frags = emit_sql_fragments(p, cat);
  ASSERT_EQ(frags.size(), 1u);
  EXPECT_EQ(frags[0].sql, "SELECT a,b FROM t");
}

TEST(SqlFragments, OnePredicate) {
  json schema = {{"tables", {{{"name", "t"}, {"columns", {{{"name", "a"}, {"kind", "numerical"}},
                                                         {{"name", "age"}, {"kind", "numerical"}}}}}}}};
  auto cat = parse_schema(schema);
  DataProfile p;
  p.target_table = "t";
  p.columns["t"] = {"a"};
  p.filters["t"] = {Predicate{"age", CompareOp::kGt, {30.0}}};
  EXPECT_EQ(emit_sql_fragments(p, cat)[0].sql, "SELECT a FROM t WHERE age > 30");
}

TEST(SqlFragments, JoinPathsAsComments) {
  auto db = toy_database();
  TaskProfile task{"churn", TaskType::kClassification, "users", "churned", std::nullopt, std::nullopt};
  auto frags = emit_sql_fragments(derive_data_profile(task, db).profile, db.catalog);
  ASSERT_EQ(frags.size(), 2u);
  ASSERT_EQ(frags[1].join_comments.size(), 1u);
  EXPECT_EQ(frags[1].join_comments[0], "-- join: orders.user_id = users.user_id");
  EXPECT_EQ(sql_literal(Value{std::string("O'Brien")}), "'O''Brien'");
}

// ---------------------------------------------------------------------------

class StubAgent : public AgentClient {
 public:
  explicit StubAgent(std::string reply) : reply_(std::move(reply)) {}
  std::string complete(const json& request) override {
    last_request = request;
    return reply_;
  }
  json last_request;

 private:
  std::string reply_;
};

TEST(Agent, CannedValidProfile) {
  auto db = toy_database();
  StubAgent stub(churn_doc().dump());
  auto task = agent_parse_nlq("which users will churn?", db, stub);
  EXPECT_EQ(task.target_table, "users");
  EXPECT_EQ(stub.last_request["nlq"], "which users will churn?");
  EXPECT_TRUE(stub.last_request["catalog_summary"].is_object() || stub.last_request["catalog_summary"].is_array());
}

TEST(Agent, MalformedJsonSurfaces) {
  auto db = toy_database();
  StubAgent stub("{not json");
  try {
    agent_parse_nlq("q", db, stub);
    FAIL();
  } catch (const ValidationError&) {
    FAIL();
  } catch (const Error& ex) {
    EXPECT_EQ(ex.kind(), ErrorKind::kInput);
  }
}

TEST(Agent, UnknownTableSurfaces) {
  auto db = toy_database();
  auto doc = churn_doc();
  doc["target_table"] = "customers";
  StubAgent stub(doc.dump());
  try {
    agent_parse_nlq("q", db, stub);
    FAIL();
  } catch (const ValidationError& ex) {
    EXPECT_TRUE(has_violation(ex.violations(), "/target_table", "unknown table"));
  }
}

TEST(Agent, HttpClientRoundTrip) {
  httplib::Server server;
  std::string auth;
  server.Post("/agent", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    auto body = json::parse(req.body);
    EXPECT_EQ(body["nlq"], "churn?");
    res.set_content(churn_doc().dump(), "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("RELML_TEST_AGENT_API_KEY", "secret", 1);
  HttpClientConfig cfg{"http://127.0.0.1:" + std::to_string(port) + "/agent", "RELML_TEST_AGENT_API_KEY", 5};
  HttpJsonClient client(cfg);
  auto db = toy_database();
  EXPECT_EQ(agent_parse_nlq("churn?", db, client).task_name, "churn");
  EXPECT_EQ(auth, "Bearer secret");

  HttpJsonClient broken({"http://127.0.0.1:" + std::to_string(port) + "/broken", "", 5});
  try {
    agent_parse_nlq("churn?", db, broken);
    FAIL();
  } catch (const Error& ex) {
    EXPECT_EQ(ex.kind(), ErrorKind::kNetwork);
  }
  server.stop();
  th.join();

  HttpJsonClient down({"http://127.0.0.1:" + std::to_string(port) + "/agent", "", 1});
  try {
    agent_parse_nlq("churn?", db, down);
    FAIL();
  } catch (const Error& ex) {
    EXPECT_EQ(ex.kind(), ErrorKind::kNetwork);
  }
}

}  // namespace
}  // namespace relml
