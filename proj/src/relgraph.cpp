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

#include "relml/relgraph.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <unordered_map>

namespace relml {

std::size_t RelGraph::num_edges() const {
  std::size_t n = 0;
  for (const auto& e : edges) n += e.size();
  return n;
}

std::optional<std::size_t> RelGraph::type_index(std::string_view table) const {
  for (std::size_t i = 0; i < node_types.size(); ++i)
    if (node_types[i] == table) return i;
  return std::nullopt;
}

namespace {

Adjacency make_adjacency(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  Adjacency adj;
  adj.offsets.assign(n + 1, 0);
  for (const auto& [a, b] : pairs) {
    ++adj.offsets[a + 1];
    ++adj.offsets[b + 1];
  }
  std::partial_sum(adj.offsets.begin(), adj.offsets.end(), adj.offsets.begin());
  adj.targets.resize(adj.offsets[n]);
  auto fill = adj.offsets;
  for (const auto& [a, b] : pairs) {
    adj.targets[fill[a]++] = b;
    adj.targets[fill[b]++] = a;
  }
  for (std::size_t v = 0; v < n; ++v) {
    std::sort(adj.targets.begin() + static_cast<std::ptrdiff_t>(adj.offsets[v]),
              adj.targets.begin() + static_cast<std::ptrdiff_t>(adj.offsets[v + 1]));
  }
  return adj;
}

}  // namespace

RelGraph build_graph(const Database& slice) {
  RelGraph g;
  g.type_offset.push_back(0);
  for (std::size_t t = 0; t < slice.tables.size(); ++t) {
    const Table& table = slice.tables[t];
    g.node_types.push_back(table.meta.name);
    const auto time_col = table.meta.time_index();
    for (const auto& row : table.rows) {
      g.node_type.push_back(t);
      std::optional<Timestamp> ts;
      if (time_col)
        if (auto* p = std::get_if<Timestamp>(&row[*time_col])) ts = *p;
      g.node_time.push_back(ts);
    }
    g.type_offset.push_back(g.node_type.size());
  }
  for (const auto& rel : slice.catalog.relations) {
    const auto ct = g.type_index(rel.child_table);
    const auto pt = g.type_index(rel.parent_table);
    if (!ct || !pt) continue;
    const Table& child = slice.tables[*ct];
    const Table& parent = slice.tables[*pt];
    const auto fk = child.meta.column_index(rel.fk_column);
    const auto pk = parent.meta.column_index(rel.pk_column);
    if (!fk || !pk) continue;
    std::unordered_map<std::string, std::size_t> by_key;
    for (std::size_t r = 0; r < parent.rows.size(); ++r) by_key.emplace(value_text(parent.rows[r][*pk]), r);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t dangling = 0;
    for (std::size_t r = 0; r < child.rows.size(); ++r) {
      const auto& v = child.rows[r][*fk];
      if (is_null(v)) continue;
      auto it = by_key.find(value_text(v));
      if (it == by_key.end()) {
        ++dangling;
        continue;
      }
      pairs.emplace_back(g.node_id(*ct, r), g.node_id(*pt, it->second));
    }
    g.relations.push_back(rel);
    g.adjacency.push_back(make_adjacency(g.num_nodes(), pairs));
    g.edges.push_back(std::move(pairs));
    g.dangling.push_back(dangling);
  }
  return g;
}

std::vector<std::size_t> neighbors(const RelGraph& graph, std::size_t v, std::size_t r) {
  if (v >= graph.num_nodes()) throw Error(ErrorKind::kIndex, "node id out of range");
  if (r >= graph.relations.size()) return {};
  auto span = graph.adjacency[r].of(v);
  return {span.begin(), span.end()};
}

void write_edge_list(std::ostream& out, const RelGraph& graph, const Database& slice) {
  auto key = [&](std::size_t v) {
    const Table& t = slice.tables[graph.node_type[v]];
    const auto pk = t.meta.primary_key_index();
    return pk ? value_text(t.rows[graph.row_of(v)][*pk]) : std::to_string(graph.row_of(v));
  };
  out << "src_table,src_pk,relation,dst_table,dst_pk\n";
  for (std::size_t r = 0; r < graph.relations.size(); ++r) {
    for (const auto& [a, b] : graph.edges[r]) {
      out << csv_escape(graph.node_types[graph.node_type[a]]) << ',' << csv_escape(key(a)) << ','
          << csv_escape(graph.relations[r].name()) << ',' << csv_escape(graph.node_types[graph.node_type[b]]) << ','
          << csv_escape(key(b)) << '\n';
    }
  }
}

std::string_view to_string(SamplingStrategy s) { return s == SamplingStrategy::kUniform ? "uniform" : "latest"; }

SamplingStrategy parse_sampling_strategy(std::string_view text) {
  if (text == "uniform") return SamplingStrategy::kUniform;
  if (text == "latest") return SamplingStrategy::kLatest;
  throw Error(ErrorKind::kConfig, "unknown sampling strategy '" + std::string(text) + "'");
}

std::vector<Adjacency> Subgraph::local_adjacency() const {
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pairs(num_relations);
  for (const auto& e : edges) pairs[e.relation].emplace_back(e.u, e.v);
  std::vector<Adjacency> out;
  out.reserve(num_relations);
  for (const auto& p : pairs) out.push_back(make_adjacency(num_nodes(), p));
  return out;
}

Subgraph sample_subgraph(const RelGraph& graph, std::span<const std::size_t> seeds, const SamplingConfig& config,
                         std::mt19937_64& rng, std::optional<Timestamp> default_reference) {
  Subgraph sg;
  sg.num_relations = graph.relations.size();
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    if (seeds[s] >= graph.num_nodes()) throw Error(ErrorKind::kIndex, "seed node out of range");
    sg.global.push_back(seeds[s]);
    sg.owner.push_back(s);
    sg.hop.push_back(0);
    const auto& own = graph.node_time[seeds[s]];
    sg.reference_time.push_back(own ? own : default_reference);
  }

  std::vector<std::size_t> candidates;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const auto ref = sg.reference_time[s];
    auto eligible = [&](std::size_t w) {
      const auto& t = graph.node_time[w];
      return !ref || !t || *t <= *ref;
    };
    std::unordered_map<std::size_t, std::size_t> local{{seeds[s], s}};
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen_edges;
    std::vector<std::size_t> frontier{s};
    for (std::size_t h = 0; h < config.fanout.size() && !frontier.empty(); ++h) {
      const std::size_t k = config.fanout[h];
      std::vector<std::size_t> next;
      if (k == 0) break;
      for (const std::size_t lu : frontier) {
        const std::size_t u = sg.global[lu];
        for (std::size_t r = 0; r < graph.relations.size(); ++r) {
          candidates.clear();
          for (std::size_t w : graph.adjacency[r].of(u))
            if (eligible(w)) candidates.push_back(w);
          if (candidates.size() > k) {
            if (config.strategy == SamplingStrategy::kLatest) {
              std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
                const auto& ta = graph.node_time[a];
                const auto& tb = graph.node_time[b];
                if (ta.has_value() != tb.has_value()) return ta.has_value();
                if (ta && *ta != *tb) return *ta > *tb;
                return a < b;
              });
            } else {
              for (std::size_t i = 0; i < k; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
                std::swap(candidates[i], candidates[pick(rng)]);
              }
            }
            candidates.resize(k);
          }
          for (std::size_t w : candidates) {
            auto [it, inserted] = local.emplace(w, sg.global.size());
            if (inserted) {
              sg.global.push_back(w);
              sg.owner.push_back(s);
              sg.hop.push_back(h + 1);
              next.push_back(it->second);
            }
            const std::size_t lw = it->second;
            if (seen_edges.emplace(std::min(lu, lw), std::max(lu, lw), r).second) {
              sg.edges.push_back({lu, lw, r});
            }
          }
        }
      }
      frontier = std::move(next);
    }
  }
  return sg;
}

Subgraph whole_graph(const RelGraph& graph) {
  Subgraph sg;
  sg.num_relations = graph.relations.size();
  for (std::size_t v = 0; v < graph.num_nodes(); ++v) {
    sg.global.push_back(v);
    sg.owner.push_back(v);
    sg.hop.push_back(0);
    sg.reference_time.push_back(std::nullopt);
  }
  for (std::size_t r = 0; r < graph.relations.size(); ++r)
    for (const auto& [a, b] : graph.edges[r]) sg.edges.push_back({a, b, r});
  return sg;
}

}  // namespace relml
