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
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/features.hpp"
#include "relml/layers.hpp"

namespace relml {

enum class BaseKind { kDnn, kResnetMlp };

std::string_view to_string(BaseKind kind);
BaseKind parse_base_kind(std::string_view text);

struct BaseModelConfig {
  BaseKind kind = BaseKind::kDnn;
  std::size_t attr_dim = 16;
  std::size_t hidden = 128;
  Activation activation = Activation::kRelu;

  nlohmann::json to_json() const;
  static BaseModelConfig from_json(const nlohmann::json& doc);
};

/// MLP over the target table's own attributes.
/// dnn: two hidden layers. resnet_mlp: input projection plus two residual blocks.
struct BaseModel {
  struct Output {
    Tensor representation;  // [n, hidden]
    Tensor prediction;      // [n, 1]
  };

  BaseModelConfig config;
  AttributeEncoder attributes;
  std::vector<Linear> trunk;
  Linear head;

  /// `space` must hold exactly the target table.
  static BaseModel create(ParamStore& store, const std::string& prefix, const FeatureSpace& space,
                          const BaseModelConfig& config, Rng& rng);
  Output operator()(const FeatureSpace& space, const EncodedTable& data, std::span<const std::size_t> rows) const;
  std::size_t representation_width() const { return config.hidden; }
};

/// A standalone base model with its own parameters and preprocessing.
struct BaseBundle {
  std::string id;
  std::string target_table;
  FeatureSpace features;  // target table only
  ParamStore params;
  BaseModel model;

  static std::unique_ptr<BaseBundle> create(std::string id, const Database& slice, const std::string& target_table,
                                            const std::string& label_column, const BaseModelConfig& config,
                                            std::uint64_t seed);
  nlohmann::json manifest() const;
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<BaseBundle> load(const std::filesystem::path& path);
};

/// Rebuilds a bundle with the same topology and copies parameter values.
std::unique_ptr<BaseBundle> clone(const BaseBundle& bundle);

struct PoolEntry {
  std::string id;
  BaseKind kind = BaseKind::kDnn;
  std::string checkpoint;  // relative to the pool directory
  std::size_t representation_width = 0;
  nlohmann::json provenance;
};

/// Registry of base-model checkpoints under one directory (`pool.json`).
class ModelPool {
 public:
  explicit ModelPool(std::filesystem::path dir);

  /// Entries ordered by id.
  const std::vector<PoolEntry>& list() const { return entries_; }
  const PoolEntry* find(const std::string& id) const;
  /// Saves the checkpoint and records it; a duplicate id is a registry error.
  const PoolEntry& register_model(const BaseBundle& bundle, const nlohmann::json& provenance = {});
  std::unique_ptr<BaseBundle> load_model(const std::string& id) const;

 private:
  void save_manifest() const;

  std::filesystem::path dir_;
  std::vector<PoolEntry> entries_;
};

}  // namespace relml
