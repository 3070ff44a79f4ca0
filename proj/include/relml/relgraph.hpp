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

#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "relml/catalog.hpp"

namespace relml {

/// Compressed adjacency over all nodes for one relation type.
struct Adjacency {
  std::vector<std::size_t> offsets;  // size num_nodes + 1
  std::vector<std::size_t> targets;

  std::span<const std::size_t> of(std::size_t v) const {
    return {targets.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }
};

/// Heterogeneous tuple graph. Node ids are global: type_offset[t] + row.
struct RelGraph {
  std::vector<std::string> node_types;
  std::vector<std::size_t> type_offset;  // size node_types + 1
  std::vector<Relation> relations;
  std::vector<std::size_t> node_type;
  std::vector<std::optional<Timestamp>> node_time;
  /// Undirected edges (child node, parent node) per relation.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> edges;
  std::vector<Adjacency> adjacency;
  std::vector<std::size_t> dangling;  // per relation

  std::size_t num_nodes() const { return node_type.size(); }
  std::size_t num_edges() const;
  std::size_t node_id(std::size_t type, std::size_t row) const { return type_offset[type] + row; }
  std::size_t row_of(std::size_t v) const { return v - type_offset[node_type[v]]; }
  std::optional<std::size_t> type_index(std::string_view table) const;
};

RelGraph build_graph(const Database& slice);

/// Neighbors of v under relation r in ascending id order; empty for unknown r.
std::vector<std::size_t> neighbors(const RelGraph& graph, std::size_t v, std::size_t r);

/// Writes `src_table,src_pk,relation,dst_table,dst_pk` lines (child to parent).
void write_edge_list(std::ostream& out, const RelGraph& graph, const Database& slice);

enum class SamplingStrategy { kUniform, kLatest };

std::string_view to_string(SamplingStrategy s);
SamplingStrategy parse_sampling_strategy(std::string_view text);

struct SamplingConfig {
  std::vector<std::size_t> fanout{32, 32};
  SamplingStrategy strategy = SamplingStrategy::kUniform;
};

/// Disjoint per-seed neighborhoods. Local node i is a copy of global node
/// `global[i]` owned by seed `owner[i]`; local ids 0..seeds-1 are the seeds.
struct Subgraph {
  struct Edge {
    std::size_t u, v, relation;
  };

  std::vector<std::size_t> global;
  std::vector<std::size_t> owner;
  std::vector<std::size_t> hop;
  std::vector<std::optional<Timestamp>> reference_time;  // per seed
  std::vector<Edge> edges;
  std::size_t num_relations = 0;

  std::size_t num_nodes() const { return global.size(); }
  std::size_t num_seeds() const { return reference_time.size(); }
  /// Per-relation local adjacency built from `edges` (both directions).
  std::vector<Adjacency> local_adjacency() const;
};

/// `default_reference` is used for seeds that carry no timestamp.
Subgraph sample_subgraph(const RelGraph& graph, std::span<const std::size_t> seeds, const SamplingConfig& config,
                         std::mt19937_64& rng, std::optional<Timestamp> default_reference = std::nullopt);

/// The whole graph as one subgraph (single owner, no sampling or time filter).
Subgraph whole_graph(const RelGraph& graph);

}  // namespace relml
