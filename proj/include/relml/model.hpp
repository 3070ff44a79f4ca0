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

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/base_models.hpp"
#include "relml/features.hpp"
#include "relml/profiles.hpp"
#include "relml/relgraph.hpp"

namespace relml {

struct ModelConfig {
  std::size_t dim = 128;
  std::size_t encoder_depth = 2;
  std::size_t heads = 2;
  std::size_t mp_layers = 2;
  Aggregator aggregator = Aggregator::kSum;
  Activation activation = Activation::kRelu;
  bool mp_layer_norm = true;
  bool use_fusion = true;
  TaskType task_type = TaskType::kClassification;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
};

/// One message-passing layer: a (W_h, W_s) pair per relation plus a self weight.
struct RelationLayer {
  std::vector<Tensor> wh;  // [d, d] per relation
  std::vector<Tensor> ws;  // [d, d] per relation
  Tensor self;             // [d, d]
  LayerNormParams norm;

  static RelationLayer create(ParamStore& store, const std::string& prefix, std::size_t relations, std::size_t dim,
                              Rng& rng);
};

/// h_v <- LN(phi(mean_{r in R_v} (h_v W_r^h + AGG_r(h_u) W_r^s))); R_v empty uses W_self.
/// `adjacency` holds one local adjacency per relation.
Tensor message_pass_layer(const RelationLayer& layer, const Tensor& h, std::span<const Adjacency> adjacency,
                          Aggregator agg, Activation act, bool layer_norm);

inline constexpr Aggregator kFusionAggregators[4] = {Aggregator::kMax, Aggregator::kMin, Aggregator::kSum,
                                                     Aggregator::kMean};

struct FusionResult {
  Tensor z;                                      // [targets, d]
  std::vector<std::vector<double>> alpha;        // per target, length |S_v|
  std::vector<std::vector<std::size_t>> relations;  // R_v in catalog order
};

/// Builds S_v = [h_v, s_{v,r}^{max,min,sum,mean} for r in R_v] and reads row 0 of MSA(S_v).
FusionResult fuse_context(const AttentionParams& params, const Tensor& h, std::span<const Adjacency> adjacency,
                          std::span<const std::size_t> targets, bool want_alpha);

/// max((alpha_i - b) / (1 - b), 0) with b = 1/|S|; a single slot scores 0.
std::vector<double> importance_scores(std::span<const double> alpha);

/// Slot names for the fusion sequence of a target with relations `present`.
std::vector<std::string> slot_labels(const std::vector<Relation>& relations, const std::string& target_table,
                                     std::span<const std::size_t> present);

/// The composed model: attribute and tuple encoders, message passing, fusion,
/// head, and an optional wrapped base model (parameters under "base.").
struct DimeModel {
  ModelConfig config;
  FeatureSpace features;
  std::vector<Relation> relations;
  std::string target_table;
  std::size_t target = 0;

  std::optional<FeatureSpace> base_features;
  ParamStore params;
  AttributeEncoder attributes;
  TupleEncoder tuples;
  std::vector<RelationLayer> layers;
  AttentionParams fusion;
  std::optional<BaseModel> base;
  Linear wrap;
  LayerNormParams head_norm;
  Linear head_hidden;
  Linear head_out;

  static std::unique_ptr<DimeModel> create(const ModelConfig& config, FeatureSpace features,
                                           std::vector<Relation> relations, const std::string& target_table,
                                           const BaseBundle* base = nullptr);

  nlohmann::json manifest() const;
  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static std::unique_ptr<DimeModel> load(const std::filesystem::path& path, nlohmann::json* manifest = nullptr);

  /// Freezes or unfreezes every parameter of the shared components ("enc." and "mp.").
  void set_shared_trainable(bool trainable);
  /// Copies shared-component values from a checkpoint; returns tensors copied.
  std::size_t load_shared(const Checkpoint& checkpoint);

  /// Prediction head on fused target vectors.
  Tensor predict_head(const Tensor& z) const;
};

/// Graph plus encoded attributes for one slice.
struct GraphData {
  RelGraph graph;
  std::vector<EncodedTable> encoded;  // model feature order
  std::optional<EncodedTable> base_encoded;
  std::size_t target_type = 0;
};

GraphData prepare_graph(const DimeModel& model, const Database& slice);

/// Hook to edit attribute embeddings of one node type before tuple encoding.
using AttributeHook = std::function<void(std::size_t type, std::span<const std::size_t> local_nodes,
                                         std::vector<Tensor>& attrs)>;

struct ForwardResult {
  Tensor prediction;  // [seeds, 1]
  Tensor node_embeddings;  // after message passing, [nodes, d]
  std::vector<std::vector<double>> alpha;
  std::vector<std::vector<std::size_t>> relations;
};

/// Seeds (local ids 0..S-1) must be target-table nodes when a base model is wrapped.
ForwardResult forward(const DimeModel& model, const GraphData& data, const Subgraph& subgraph,
                      bool want_alpha = false, const AttributeHook* hook = nullptr);

/// Tuple embeddings for every node of the subgraph (before wrapping), [nodes, d].
Tensor encode_nodes(const DimeModel& model, const GraphData& data, const Subgraph& subgraph,
                    const AttributeHook* hook = nullptr);

}  // namespace relml
