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

#include "relml/base_models.hpp"

#include <algorithm>
#include <fstream>

namespace relml {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(BaseKind kind) { return kind == BaseKind::kDnn ? "dnn" : "resnet_mlp"; }

BaseKind parse_base_kind(std::string_view text) {
  if (text == "dnn") return BaseKind::kDnn;
  if (text == "resnet_mlp") return BaseKind::kResnetMlp;
  throw Error(ErrorKind::kConfig, "unknown base model kind '" + std::string(text) + "'");
}

json BaseModelConfig::to_json() const {
  return {{"kind", to_string(kind)}, {"attr_dim", attr_dim}, {"hidden", hidden}, {"activation", to_string(activation)}};
}

BaseModelConfig BaseModelConfig::from_json(const json& doc) {
  BaseModelConfig c;
  c.kind = parse_base_kind(doc.value("kind", std::string("dnn")));
  c.attr_dim = doc.value("attr_dim", c.attr_dim);
  c.hidden = doc.value("hidden", c.hidden);
  c.activation = parse_activation(doc.value("activation", std::string("relu")));
  return c;
}

BaseModel BaseModel::create(ParamStore& store, const std::string& prefix, const FeatureSpace& space,
                            const BaseModelConfig& config, Rng& rng) {
  if (space.tables.size() != 1) throw Error(ErrorKind::kConfig, "base model features must cover one table");
  BaseModel m;
  m.config = config;
  m.attributes = AttributeEncoder::create(store, prefix + ".attr", space, config.attr_dim, rng);
  const std::size_t in = config.attr_dim * space.tables[0].columns.size();
  const std::size_t h = config.hidden;
  if (config.kind == BaseKind::kDnn) {
    m.trunk.push_back(Linear::create(store, prefix + ".fc0", in, h, rng));
    m.trunk.push_back(Linear::create(store, prefix + ".fc1", h, h, rng));
  } else {
    m.trunk.push_back(Linear::create(store, prefix + ".input", in, h, rng));
    for (int b = 0; b < 2; ++b) {
      m.trunk.push_back(Linear::create(store, prefix + ".block" + std::to_string(b) + ".fc0", h, h, rng));
      m.trunk.push_back(Linear::create(store, prefix + ".block" + std::to_string(b) + ".fc1", h, h, rng));
    }
  }
  m.head = Linear::create(store, prefix + ".head", h, 1, rng);
  return m;
}

BaseModel::Output BaseModel::operator()(const FeatureSpace& space, const EncodedTable& data,
                                        std::span<const std::size_t> rows) const {
  const auto attrs = attributes.encode(space, 0, data, rows);
  Tensor x = concat_cols(attrs);
  if (config.kind == BaseKind::kDnn) {
    for (const auto& layer : trunk) x = activate(layer(x), config.activation);
  } else {
    x = trunk[0](x);
    for (std::size_t b = 1; b + 1 < trunk.size(); b += 2) {
      x = add(x, trunk[b + 1](activate(trunk[b](x), config.activation)));
    }
  }
  return {x, head(x)};
}

std::unique_ptr<BaseBundle> BaseBundle::create(std::string id, const Database& slice, const std::string& target_table,
                                               const std::string& label_column, const BaseModelConfig& config,
                                               std::uint64_t seed) {
  auto bundle = std::make_unique<BaseBundle>();
  bundle->id = std::move(id);
  bundle->target_table = target_table;
  Database only;
  only.catalog.tables.push_back(slice.table(target_table).meta);
  only.tables.push_back(slice.table(target_table));
  bundle->features = FeatureSpace::fit(only, target_table, label_column);
  Rng rng(seed);
  bundle->model = BaseModel::create(bundle->params, "base", bundle->features, config, rng);
  return bundle;
}

json BaseBundle::manifest() const {
  return {{"kind", "base_model"},
          {"id", id},
          {"target_table", target_table},
          {"config", model.config.to_json()},
          {"features", features.to_json()}};
}

void BaseBundle::save(const fs::path& path) const { save_checkpoint(path, params, manifest()); }

namespace {

std::unique_ptr<BaseBundle> from_manifest(const json& m) {
  if (m.value("kind", std::string()) != "base_model") throw Error(ErrorKind::kRegistry, "checkpoint is not a base model");
  auto bundle = std::make_unique<BaseBundle>();
  bundle->id = m.at("id").get<std::string>();
  bundle->target_table = m.at("target_table").get<std::string>();
  bundle->features = FeatureSpace::from_json(m.at("features"));
  Rng rng(0);
  bundle->model = BaseModel::create(bundle->params, "base", bundle->features, BaseModelConfig::from_json(m.at("config")), rng);
  return bundle;
}

}  // namespace

std::unique_ptr<BaseBundle> BaseBundle::load(const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  auto bundle = from_manifest(ck.manifest);
  if (bundle->params.copy_values_from(ck.tensors) != bundle->params.entries().size()) {
    throw Error(ErrorKind::kRegistry, "checkpoint " + path.string() + " does not match the base model topology");
  }
  return bundle;
}

std::unique_ptr<BaseBundle> clone(const BaseBundle& bundle) {
  auto copy = from_manifest(bundle.manifest());
  std::map<std::string, Tensor> values;
  for (const auto& [name, e] : bundle.params.entries()) values.emplace(name, e.value);
  copy->params.copy_values_from(values);
  return copy;
}

// ---------------------------------------------------------------------------

ModelPool::ModelPool(fs::path dir) : dir_(std::move(dir)) {
  const fs::path manifest = dir_ / "pool.json";
  if (!fs::exists(manifest)) return;
  std::ifstream in(manifest);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kRegistry, std::string("pool manifest unreadable: ") + ex.what());
  }
  for (const auto& e : doc.at("models")) {
    entries_.push_back({e.at("id").get<std::string>(), parse_base_kind(e.at("kind").get<std::string>()),
                        e.at("checkpoint").get<std::string>(), e.at("representation_width").get<std::size_t>(),
                        e.value("provenance", json::object())});
  }
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
}

const PoolEntry* ModelPool::find(const std::string& id) const {
  for (const auto& e : entries_)
    if (e.id == id) return &e;
  return nullptr;
}

const PoolEntry& ModelPool::register_model(const BaseBundle& bundle, const json& provenance) {
  if (find(bundle.id)) throw Error(ErrorKind::kRegistry, "model id '" + bundle.id + "' already registered");
  PoolEntry entry{bundle.id, bundle.model.config.kind, bundle.id + ".ckpt", bundle.model.representation_width(),
                  provenance.is_null() ? json::object() : provenance};
  fs::create_directories(dir_);
  bundle.save(dir_ / entry.checkpoint);
  entries_.push_back(std::move(entry));
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  save_manifest();
  return *find(bundle.id);
}

std::unique_ptr<BaseBundle> ModelPool::load_model(const std::string& id) const {
  const PoolEntry* e = find(id);
  if (!e) throw Error(ErrorKind::kRegistry, "unknown model id '" + id + "'");
  const fs::path path = dir_ / e->checkpoint;
  if (!fs::exists(path)) throw Error(ErrorKind::kRegistry, "checkpoint missing for model '" + id + "': " + path.string());
  try {
    return BaseBundle::load(path);
  } catch (const Error& ex) {
    if (ex.kind() == ErrorKind::kRegistry) throw;
    throw Error(ErrorKind::kRegistry, "cannot load model '" + id + "': " + ex.what());
  }
}

void ModelPool::save_manifest() const {
  json models = json::array();
  for (const auto& e : entries_) {
    models.push_back({{"id", e.id},
                      {"kind", to_string(e.kind)},
                      {"checkpoint", e.checkpoint},
                      {"representation_width", e.representation_width},
                      {"provenance", e.provenance}});
  }
  std::ofstream out(dir_ / "pool.json");
  if (!out) throw Error(ErrorKind::kIo, "cannot write pool manifest in " + dir_.string());
  out << json{{"models", models}}.dump(2) << "\n";
}

}  // namespace relml
