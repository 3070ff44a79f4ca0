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

#include "relml/pipeline.hpp"

namespace relml {

TaskData prepare_task(const Database& db, const TaskProfile& task, const std::optional<DataProfile>& profile,
                      double q_train, double q_valid) {
  TaskData data;
  data.task = task;
  const DataProfile p = profile ? *profile : derive_data_profile(task, db).profile;
  if (p.target_table != task.target_table) {
    throw Error(ErrorKind::kProfile, "data profile targets '" + p.target_table + "', task targets '" +
                                         task.target_table + "'");
  }
  data.slice = extract_slice(db, p);
  const Table& target = data.slice.target();
  data.labels = extract_labels(target, task);
  std::tie(data.train_cutoff, data.valid_cutoff) = quantile_cutoffs(target, q_train, q_valid);
  data.splits = temporal_split(target, data.labels, data.train_cutoff, data.valid_cutoff);
  data.train = labeled_rows(data.splits.train, data.labels);
  data.valid = labeled_rows(data.splits.valid, data.labels);
  data.test = labeled_rows(data.splits.test, data.labels);
  return data;
}

FeatureSpace fit_features(const TaskData& data) {
  return FeatureSpace::fit(data.slice.database, data.task.target_table, data.task.target_column);
}

std::unique_ptr<DimeModel> build_model(const TaskData& data, const FeatureSpace& features, ModelConfig config,
                                       const BaseBundle* base, const Checkpoint* pretrained) {
  config.task_type = data.task.task_type;
  auto model = DimeModel::create(config, features, data.slice.database.catalog.relations, data.task.target_table, base);
  if (pretrained) {
    const auto& m = pretrained->manifest;
    if (!m.contains("features") || m["features"] != features.to_json() || m.value("relations", nlohmann::json()) !=
                                                                               model->manifest()["relations"]) {
      throw Error(ErrorKind::kConfig, "pretrained weights were fitted on a different slice");
    }
    const auto& pc = m.at("config");
    if (pc.value("dim", 0u) != config.dim || pc.value("encoder_depth", 0u) != config.encoder_depth ||
        pc.value("heads", 0u) != config.heads || pc.value("mp_layers", 0u) != config.mp_layers) {
      throw Error(ErrorKind::kConfig, "pretrained weights have a different shared topology");
    }
    model->load_shared(*pretrained);
    model->set_shared_trainable(false);
  }
  return model;
}

LabeledRows all_labeled(const TaskData& data) {
  LabeledRows out;
  for (const auto* part : {&data.train, &data.valid, &data.test}) {
    out.rows.insert(out.rows.end(), part->rows.begin(), part->rows.end());
    out.labels.insert(out.labels.end(), part->labels.begin(), part->labels.end());
  }
  return out;
}

}  // namespace relml
