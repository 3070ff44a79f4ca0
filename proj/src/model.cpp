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

#include "relml/model.hpp"

#include <algorithm>
#include <map>

namespace relml {

using nlohmann::json;

json ModelConfig::to_json() const {
  return {{"dim", dim},
          {"encoder_depth", encoder_depth},
          {"heads", heads},
          {"mp_layers", mp_layers},
          {"aggregator", to_string(aggregator)},
          {"activation", to_string(activation)},
          {"mp_layer_norm", mp_layer_norm},
          {"use_fusion", use_fusion},
          {"task_type", to_string(task_type)},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& doc) {
  ModelConfig c;
  c.dim = doc.value("dim", c.dim);
  c.encoder_depth = doc.value("encoder_depth", c.encoder_depth);
  c.heads = doc.value("heads", c.heads);
  c.mp_layers = doc.value("mp_layers", c.mp_layers);
  c.aggregator = parse_aggregator(doc.value("aggregator", std::string("sum")));
  c.activation = parse_activation(doc.value("activation", std::string("relu")));
  c.mp_layer_norm = doc.value("mp_layer_norm", c.mp_layer_norm);
  c.use_fusion = doc.value("use_fusion", c.use_fusion);
  const auto task = doc.value("task_type", std::string("classification"));
  if (task != "classification" && task != "regression") throw Error(ErrorKind::kConfig, "unknown task type '" + task + "'");
  c.task_type = task == "regression" ? TaskType::kRegression : TaskType::kClassification;
  c.seed = doc.value("seed", c.seed);
  return c;
}

RelationLayer RelationLayer::create(ParamStore& store, const std::string& prefix, std::size_t relations,
                                    std::size_t dim, Rng& rng) {
  RelationLayer l;
  for (std::size_t r = 0; r < relations; ++r) {
    const std::string p = prefix + ".r" + std::to_string(r);
    l.wh.push_back(store.add(p + ".wh", init_uniform_fan_in(rng, dim, dim)));
    l.ws.push_back(store.add(p + ".ws", init_uniform_fan_in(rng, dim, dim)));
  }
  l.self = store.add(prefix + ".self", init_uniform_fan_in(rng, dim, dim));
  l.norm = LayerNormParams::create(store, prefix + ".norm", dim);
  return l;
}

Tensor message_pass_layer(const RelationLayer& layer, const Tensor& h, std::span<const Adjacency> adjacency,
                          Aggregator agg, Activation act, bool layer_norm) {
  const std::size_t n = h.rows();
  if (adjacency.size() != layer.wh.size()) throw Error(ErrorKind::kDimension, "relation count mismatch");
  std::vector<std::size_t> count(n, 0);
  for (const auto& adj : adjacency)
    for (std::size_t v = 0; v < n; ++v) count[v] += adj.of(v).empty() ? 0 : 1;

  Tensor acc;
  auto accumulate = [&](const Tensor& t) { acc = acc.defined() ? add(acc, t) : t; };
  for (std::size_t r = 0; r < adjacency.size(); ++r) {
    std::vector<std::size_t> src, tgt;
    std::vector<double> factor(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      const auto nb = adjacency[r].of(v);
      if (nb.empty()) continue;
      factor[v] = 1.0 / static_cast<double>(count[v]);
      for (std::size_t u : nb) {
        src.push_back(u);
        tgt.push_back(v);
      }
    }
    if (src.empty()) continue;
    const Tensor summary = segment_aggregate(gather_rows(h, src), tgt, n, agg);
    accumulate(scale_rows(add(matmul(h, layer.wh[r]), matmul(summary, layer.ws[r])), factor));
  }
  std::vector<double> isolated(n);
  bool any_isolated = false;
  for (std::size_t v = 0; v < n; ++v) {
    isolated[v] = count[v] == 0 ? 1.0 : 0.0;
    any_isolated = any_isolated || count[v] == 0;
  }
  if (any_isolated) accumulate(scale_rows(matmul(h, layer.self), isolated));
  Tensor out = activate(acc, act);
  return layer_norm ? layer.norm(out) : out;
}

FusionResult fuse_context(const AttentionParams& params, const Tensor& h, std::span<const Adjacency> adjacency,
                          std::span<const std::size_t> targets, bool want_alpha) {
  const std::size_t t_count = targets.size();
  FusionResult result;
  result.relations.resize(t_count);

  std::vector<Tensor> blocks{gather_rows(h, targets)};
  // block_of[r] = index of the max block for relation r, or 0 when unused.
  std::vector<std::size_t> block_of(adjacency.size(), 0);
  for (std::size_t r = 0; r < adjacency.size(); ++r) {
    std::vector<std::size_t> src, seg;
    for (std::size_t i = 0; i < t_count; ++i) {
      const auto nb = adjacency[r].of(targets[i]);
      if (nb.empty()) continue;
      result.relations[i].push_back(r);
      for (std::size_t u : nb) {
        src.push_back(u);
        seg.push_back(i);
      }
    }
    if (src.empty()) continue;
    const Tensor values = gather_rows(h, src);
    block_of[r] = blocks.size();
    for (Aggregator agg : kFusionAggregators) blocks.push_back(segment_aggregate(values, seg, t_count, agg));
  }

  std::vector<std::size_t> order, offsets{0};
  for (std::size_t i = 0; i < t_count; ++i) {
    order.push_back(i);
    for (std::size_t r : result.relations[i])
      for (std::size_t a = 0; a < 4; ++a) order.push_back((block_of[r] + a) * t_count + i);
    offsets.push_back(order.size());
  }
  const Tensor sequence = gather_rows(concat_rows(blocks), order);
  std::vector<std::vector<double>> weights;
  const Tensor out = multi_head_attention(sequence, params, offsets, want_alpha ? &weights : nullptr);
  std::vector<std::size_t> first(offsets.begin(), offsets.end() - 1);
  result.z = gather_rows(out, first);

  if (want_alpha) {
    result.alpha.resize(t_count);
    for (std::size_t i = 0; i < t_count; ++i) {
      const std::size_t len = offsets[i + 1] - offsets[i];
      auto& a = result.alpha[i];
      a.assign(len, 0.0);
      for (std::size_t hd = 0; hd < params.heads; ++hd)
        for (std::size_t j = 0; j < len; ++j) a[j] += weights[i][hd * len * len + j];
      for (auto& x : a) x /= static_cast<double>(params.heads);
    }
  }
  return result;
}

std::vector<double> importance_scores(std::span<const double> alpha) {
  std::vector<double> out(alpha.size(), 0.0);
  if (alpha.size() <= 1) return out;
  const double b = 1.0 / static_cast<double>(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = std::max((alpha[i] - b) / (1.0 - b), 0.0);
  return out;
}

std::vector<std::string> slot_labels(const std::vector<Relation>& relations, const std::string& target_table,
                                     std::span<const std::size_t> present) {
  auto other = [&](const Relation& r) { return r.child_table == target_table ? r.parent_table : r.child_table; };
  std::map<std::string, int> uses;
  for (const auto& r : relations)
    if (r.child_table == target_table || r.parent_table == target_table) ++uses[other(r)];
  std::vector<std::string> out{target_table + "(self)"};
  for (std::size_t r : present) {
    const auto& rel = relations.at(r);
    std::string name = other(rel);
    if (uses[name] > 1) name += "." + rel.fk_column;
    for (Aggregator agg : kFusionAggregators) out.push_back(name + "(" + std::string(to_string(agg)) + ")");
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct BaseSpec {
  BaseModelConfig config;
  FeatureSpace features;
};

std::unique_ptr<DimeModel> build(const ModelConfig& config, FeatureSpace features, std::vector<Relation> relations,
                                 const std::string& target_table, const std::optional<BaseSpec>& base) {
  auto m = std::make_unique<DimeModel>();
  m->config = config;
  m->features = std::move(features);
  m->relations = std::move(relations);
  m->target_table = target_table;
  const auto t = m->features.table_index(target_table);
  if (!t) throw Error(ErrorKind::kConfig, "target table '" + target_table + "' has no fitted features");
  m->target = *t;

  Rng rng(config.seed);
  const std::size_t d = config.dim;
  m->attributes = AttributeEncoder::create(m->params, "enc.attr", m->features, d, rng);
  m->tuples = TupleEncoder::create(m->params, "enc.tuple", m->features.tables.size(), d, config.encoder_depth,
                                   config.heads, config.activation, rng);
  for (std::size_t l = 0; l < config.mp_layers; ++l) {
    m->layers.push_back(RelationLayer::create(m->params, "mp." + std::to_string(l), m->relations.size(), d, rng));
  }
  if (config.use_fusion) m->fusion = AttentionParams::create(m->params, "fusion.attn", d, config.heads, rng);
  if (base) {
    m->base_features = base->features;
    m->base = BaseModel::create(m->params, "base", *m->base_features, base->config, rng);
    m->wrap = Linear::create(m->params, "wrap", m->base->representation_width() + d, d, rng);
  }
  m->head_norm = LayerNormParams::create(m->params, "head.norm", d);
  m->head_hidden = Linear::create(m->params, "head.hidden", d, d, rng);
  m->head_out = Linear::create(m->params, "head.out", d, 1, rng);
  return m;
}

}  // namespace

std::unique_ptr<DimeModel> DimeModel::create(const ModelConfig& config, FeatureSpace features,
                                             std::vector<Relation> relations, const std::string& target_table,
                                             const BaseBundle* base) {
  std::optional<BaseSpec> spec;
  if (base) {
    if (base->target_table != target_table) {
      throw Error(ErrorKind::kConfig, "base model targets '" + base->target_table + "', task targets '" + target_table + "'");
    }
    spec = BaseSpec{base->model.config, base->features};
  }
  auto m = build(config, std::move(features), std::move(relations), target_table, spec);
  if (base) {
    std::map<std::string, Tensor> values;
    for (const auto& [name, e] : base->params.entries()) values.emplace(name, e.value);
    m->params.copy_values_from(values);
  }
  return m;
}

json DimeModel::manifest() const {
  json rels = json::array();
  for (const auto& r : relations) {
    rels.push_back({{"child_table", r.child_table},
                    {"fk_column", r.fk_column},
                    {"parent_table", r.parent_table},
                    {"pk_column", r.pk_column}});
  }
  json m = {{"kind", "dime"},
            {"config", config.to_json()},
            {"features", features.to_json()},
            {"relations", std::move(rels)},
            {"target_table", target_table}};
  if (base) m["base"] = {{"config", base->config.to_json()}, {"features", base_features->to_json()}};
  return m;
}

void DimeModel::save(const std::filesystem::path& path, const json& extra) const {
  json m = manifest();
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) m[k] = v;
  save_checkpoint(path, params, m);
}

std::unique_ptr<DimeModel> DimeModel::load(const std::filesystem::path& path, json* manifest_out) {
  Checkpoint ck = load_checkpoint(path);
  const json& m = ck.manifest;
  if (m.value("kind", std::string()) != "dime") throw Error(ErrorKind::kConfig, path.string() + " is not a model checkpoint");
  std::vector<Relation> rels;
  for (const auto& r : m.at("relations")) {
    rels.push_back({r.at("child_table").get<std::string>(), r.at("fk_column").get<std::string>(),
                    r.at("parent_table").get<std::string>(), r.at("pk_column").get<std::string>()});
  }
  std::optional<BaseSpec> base;
  if (m.contains("base")) {
    base = BaseSpec{BaseModelConfig::from_json(m["base"].at("config")), FeatureSpace::from_json(m["base"].at("features"))};
  }
  auto model = build(ModelConfig::from_json(m.at("config")), FeatureSpace::from_json(m.at("features")), std::move(rels),
                     m.at("target_table").get<std::string>(), base);
  if (model->params.copy_values_from(ck.tensors) != model->params.entries().size()) {
    throw Error(ErrorKind::kConfig, "checkpoint " + path.string() + " does not match the model topology");
  }
  for (const auto& [name, trainable] : ck.trainable) model->params.set_trainable(name, trainable);
  if (manifest_out) *manifest_out = m;
  return model;
}

void DimeModel::set_shared_trainable(bool trainable) {
  params.set_trainable("enc.", trainable);
  params.set_trainable("mp.", trainable);
}

std::size_t DimeModel::load_shared(const Checkpoint& checkpoint) {
  return params.copy_values_from(checkpoint.tensors, "enc.", "enc.") +
         params.copy_values_from(checkpoint.tensors, "mp.", "mp.");
}

Tensor DimeModel::predict_head(const Tensor& z) const {
  const Tensor x = head_norm(activate(z, config.activation));
  return head_out(activate(head_hidden(x), config.activation));
}

// ---------------------------------------------------------------------------

GraphData prepare_graph(const DimeModel& model, const Database& slice) {
  GraphData data;
  data.graph = build_graph(slice);
  if (data.graph.node_types.size() != model.features.tables.size()) {
    throw Error(ErrorKind::kConfig, "slice tables differ from the model's feature tables");
  }
  for (std::size_t t = 0; t < data.graph.node_types.size(); ++t) {
    if (data.graph.node_types[t] != model.features.tables[t].table) {
      throw Error(ErrorKind::kConfig, "slice table '" + data.graph.node_types[t] + "' not in model feature order");
    }
  }
  if (data.graph.relations != model.relations) {
    throw Error(ErrorKind::kConfig, "slice relations differ from the model's relations");
  }
  data.encoded = encode_database(slice, model.features);
  data.target_type = model.target;
  if (model.base_features) {
    data.base_encoded = encode_table(slice.table(model.target_table), model.base_features->tables[0],
                                     model.base_features->base_year);
  }
  return data;
}

Tensor encode_nodes(const DimeModel& model, const GraphData& data, const Subgraph& subgraph,
                    const AttributeHook* hook) {
  const std::size_t n = subgraph.num_nodes();
  const std::size_t types = model.features.tables.size();
  std::vector<std::vector<std::size_t>> members(types), rows(types);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = subgraph.global[i];
    const std::size_t t = data.graph.node_type[g];
    members[t].push_back(i);
    rows[t].push_back(data.graph.row_of(g));
  }
  std::vector<Tensor> parts;
  std::vector<std::size_t> position(n);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < types; ++t) {
    if (members[t].empty()) continue;
    auto attrs = model.attributes.encode(model.features, t, data.encoded[t], rows[t]);
    if (hook) (*hook)(t, members[t], attrs);
    parts.push_back(model.tuples(t, attrs));
    for (std::size_t k = 0; k < members[t].size(); ++k) position[members[t][k]] = offset + k;
    offset += members[t].size();
  }
  return gather_rows(concat_rows(parts), position);
}

ForwardResult forward(const DimeModel& model, const GraphData& data, const Subgraph& subgraph, bool want_alpha,
                      const AttributeHook* hook) {
  const std::size_t n = subgraph.num_nodes();
  const std::size_t s = subgraph.num_seeds();
  Tensor h = encode_nodes(model, data, subgraph, hook);

  std::vector<std::size_t> seeds(s), rest;
  for (std::size_t i = 0; i < s; ++i) seeds[i] = i;
  for (std::size_t i = s; i < n; ++i) rest.push_back(i);

  if (model.base) {
    std::vector<std::size_t> rows(s);
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t g = subgraph.global[i];
      if (data.graph.node_type[g] != data.target_type) throw Error(ErrorKind::kInput, "seed is not a target-table row");
      rows[i] = data.graph.row_of(g);
    }
    const auto base_out = (*model.base)(*model.base_features, *data.base_encoded, rows);
    const Tensor joined[2] = {base_out.representation, gather_rows(h, seeds)};
    const Tensor wrapped = model.wrap(concat_cols(joined));
    if (rest.empty()) {
      h = wrapped;
    } else {
      const Tensor parts[2] = {wrapped, gather_rows(h, rest)};
      h = concat_rows(parts);
    }
  }

  const auto adjacency = subgraph.local_adjacency();
  for (const auto& layer : model.layers) {
    h = message_pass_layer(layer, h, adjacency, model.config.aggregator, model.config.activation,
                           model.config.mp_layer_norm);
  }

  ForwardResult result;
  result.node_embeddings = h;
  Tensor z;
  if (model.config.use_fusion) {
    auto fused = fuse_context(model.fusion, h, adjacency, seeds, want_alpha);
    z = fused.z;
    result.alpha = std::move(fused.alpha);
    result.relations = std::move(fused.relations);
  } else {
    z = gather_rows(h, seeds);
    result.relations.resize(s);
  }
  result.prediction = model.predict_head(z);
  return result;
}

}  // namespace relml
