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

#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "relml/relgraph.hpp"
#include "relml/slice.hpp"
#include "test_util.hpp"

namespace relml {
namespace {

using nlohmann::json;

Database users_orders(int users, const std::vector<std::string>& order_user,
                      const std::vector<std::optional<std::int64_t>>& order_time = {}) {
  json schema = json::parse(R"({"tables":[
    {"name":"users","columns":[{"name":"id","kind":"categorical","pk":true}]},
    {"name":"orders","columns":[{"name":"id","kind":"categorical","pk":true},
      {"name":"uid","kind":"categorical","fk":{"table":"users","column":"id"}},
      {"name":"ts","kind":"timestamp"}]}]})");
  Database db = testing::make_database(schema);
  for (int i = 0; i < users; ++i) db.tables[0].rows.push_back({std::string("u") + std::to_string(i)});
  for (std::size_t i = 0; i < order_user.size(); ++i) {
    Value ts;
    if (i < order_time.size() && order_time[i]) ts = Timestamp{*order_time[i]};
    db.tables[1].rows.push_back({std::string("o") + std::to_string(i), order_user[i], ts});
  }
  testing::finalize(db);
  return db;
}

TEST(BuildGraph, UsersAndOrders) {
  auto db = users_orders(2, {"u1", "u1", "u1"});
  auto g = build_graph(db);
  EXPECT_EQ(g.num_nodes(), 5u);
  EXPECT_EQ(g.num_edges(), 3u);
  ASSERT_EQ(g.relations.size(), 1u);
  EXPECT_EQ(neighbors(g, 1, 0), (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_TRUE(neighbors(g, 0, 0).empty());
  EXPECT_EQ(neighbors(g, 3, 0), (std::vector<std::size_t>{1}));
  EXPECT_TRUE(neighbors(g, 3, 7).empty());
}

TEST(BuildGraph, FilteredParentIsDangling) {
  auto db = users_orders(2, {"u0", "u1"});
  DataProfile p;
  p.target_table = "orders";
  p.related_tables = {"users"};
  p.join_paths = db.catalog.relations;
  p.filters["users"] = {Predicate{"id", CompareOp::kEq, {std::string("u0")}}};
  auto slice = extract_slice(db, p);
  auto g = build_graph(slice.database);
  EXPECT_EQ(g.num_edges(), 1u);
  EXPECT_EQ(g.dangling[0], 1u);
}

TEST(BuildGraph, RandomSliceMatchesNestedLoopJoin) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto db = testing::random_database(rng);
    auto g = build_graph(db);
    std::size_t rows = 0;
    for (const auto& t : db.tables) rows += t.rows.size();
    EXPECT_EQ(g.num_nodes(), rows);
    for (std::size_t r = 0; r < db.catalog.relations.size(); ++r) {
      const auto& rel = db.catalog.relations[r];
      const auto ct = *g.type_index(rel.child_table), pt = *g.type_index(rel.parent_table);
      const auto& child = db.tables[ct];
      const auto& parent = db.tables[pt];
      const auto fk = *child.meta.column_index(rel.fk_column);
      const auto pk = *parent.meta.column_index(rel.pk_column);
      std::multiset<std::pair<std::size_t, std::size_t>> expected;
      for (std::size_t i = 0; i < child.rows.size(); ++i)
        for (std::size_t j = 0; j < parent.rows.size(); ++j)
          if (!is_null(child.rows[i][fk]) && child.rows[i][fk] == parent.rows[j][pk])
            expected.emplace(g.node_id(ct, i), g.node_id(pt, j));
      std::multiset<std::pair<std::size_t, std::size_t>> got(g.edges[r].begin(), g.edges[r].end());
      EXPECT_EQ(got, expected);
      // Edge-scan oracle for neighbors and symmetry.
      for (std::size_t v = 0; v < g.num_nodes(); ++v) {
        std::vector<std::size_t> scan;
        for (const auto& [a, b] : g.edges[r]) {
          if (a == v) scan.push_back(b);
          if (b == v) scan.push_back(a);
        }
        std::sort(scan.begin(), scan.end());
        EXPECT_EQ(neighbors(g, v, r), scan);
      }
    }
  }
}

TEST(BuildGraph, StarCenter) {
  auto db = users_orders(1, {"u0", "u0", "u0", "u0"});
  auto g = build_graph(db);
  EXPECT_EQ(neighbors(g, 0, 0).size(), 4u);
}

TEST(BuildGraph, EdgeListDump) {
  auto db = users_orders(1, {"u0"});
  std::ostringstream out;
  write_edge_list(out, build_graph(db), db);
  EXPECT_EQ(out.str(), "src_table,src_pk,relation,dst_table,dst_pk\norders,o0,orders.uid->users,users,u0\n");
}

TEST(Sampling, FullNeighborhoodWhenFanoutCoversDegree) {
  auto db = users_orders(1, {"u0", "u0", "u0"}, {1, 5, 3});
  auto g = build_graph(db);
  const std::size_t seed = 0;
  for (auto strategy : {SamplingStrategy::kUniform, SamplingStrategy::kLatest}) {
    std::mt19937_64 rng(1);
    auto sg = sample_subgraph(g, {&seed, 1}, {{3}, strategy}, rng);
    EXPECT_EQ(sg.num_nodes(), 4u);
    EXPECT_EQ(sg.edges.size(), 3u);
  }
}

TEST(Sampling, LatestKeepsMostRecent) {
  auto db = users_orders(1, {"u0", "u0", "u0"}, {1, 5, 3});
  auto g = build_graph(db);
  const std::size_t seed = 0;
  std::mt19937_64 rng(1);
  auto sg = sample_subgraph(g, {&seed, 1}, {{2}, SamplingStrategy::kLatest}, rng);
  std::set<std::int64_t> times;
  for (std::size_t i = 1; i < sg.num_nodes(); ++i) times.insert(g.node_time[sg.global[i]]->seconds);
  EXPECT_EQ(times, (std::set<std::int64_t>{5, 3}));
}

TEST(Sampling, FanoutZeroIsSeedsOnly) {
  auto db = users_orders(2, {"u0", "u1"});
  auto g = build_graph(db);
  std::vector<std::size_t> seeds{0, 1};
  std::mt19937_64 rng(1);
  auto sg = sample_subgraph(g, seeds, {{0, 4}, SamplingStrategy::kUniform}, rng);
  EXPECT_EQ(sg.num_nodes(), 2u);
  EXPECT_TRUE(sg.edges.empty());
}

TEST(Sampling, UniformInclusionFrequency) {
  std::vector<std::string> owners(10, "u0");
  auto g = build_graph(users_orders(1, owners));
  const std::size_t seed = 0;
  std::mt19937_64 rng(42);
  std::map<std::size_t, int> hits;
  for (int i = 0; i < 1000; ++i) {
    auto sg = sample_subgraph(g, {&seed, 1}, {{5}, SamplingStrategy::kUniform}, rng);
    ASSERT_EQ(sg.num_nodes(), 6u);
    for (std::size_t j = 1; j < sg.num_nodes(); ++j) ++hits[sg.global[j]];
  }
  ASSERT_EQ(hits.size(), 10u);
  for (const auto& [node, n] : hits) EXPECT_NEAR(n / 1000.0, 0.5, 0.05) << node;
}

TEST(Sampling, LeakageGuardAndLocalMapping) {
  // Users carry no time; orders do. Seed orders, so their own times are references.
  std::mt19937_64 data_rng(8);
  std::vector<std::string> owners;
  std::vector<std::optional<std::int64_t>> times;
  for (int i = 0; i < 60; ++i) {
    owners.push_back("u" + std::to_string(data_rng() % 5));
    times.push_back(static_cast<std::int64_t>(data_rng() % 100));
  }
  auto g = build_graph(users_orders(5, owners, times));
  std::vector<std::size_t> seeds;
  for (std::size_t v = 5; v < 65; v += 3) seeds.push_back(v);
  std::mt19937_64 rng(1);
  auto sg = sample_subgraph(g, seeds, {{4, 4}, SamplingStrategy::kUniform}, rng);
  for (std::size_t i = 0; i < sg.num_nodes(); ++i) {
    const auto ref = sg.reference_time[sg.owner[i]];
    const auto& t = g.node_time[sg.global[i]];
    if (t) EXPECT_LE(*t, *ref);
  }
  // Per-owner local ids map injectively onto global ids.
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < sg.num_nodes(); ++i) EXPECT_TRUE(pairs.emplace(sg.owner[i], sg.global[i]).second);
  for (const auto& e : sg.edges) EXPECT_EQ(sg.owner[e.u], sg.owner[e.v]);
}

TEST(Sampling, WholeGraph) {
  auto g = build_graph(users_orders(2, {"u0", "u1", "u1"}));
  auto sg = whole_graph(g);
  EXPECT_EQ(sg.num_nodes(), 5u);
  auto adj = sg.local_adjacency();
  EXPECT_EQ(adj[0].of(1).size(), 2u);
}

}  // namespace
}  // namespace relml
