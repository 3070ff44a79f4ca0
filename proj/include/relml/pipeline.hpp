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

#include <memory>
#include <optional>
#include <vector>

#include "relml/slice.hpp"
#include "relml/training.hpp"

namespace relml {

/// A validated task with its slice, labels and chronological splits.
struct TaskData {
  TaskProfile task;
  DataSlice slice;
  std::vector<std::optional<double>> labels;  // per slice target row
  Timestamp train_cutoff, valid_cutoff;
  SplitSets splits;
  LabeledRows train, valid, test;
};

/// Slices `db` (deriving a data profile when none is given) and splits the
/// labeled target rows at the given time quantiles.
TaskData prepare_task(const Database& db, const TaskProfile& task, const std::optional<DataProfile>& profile = {},
                      double q_train = 0.70, double q_valid = 0.85);

FeatureSpace fit_features(const TaskData& data);

/// Builds a model on the task slice. With `pretrained`, shared components are
/// loaded from it and frozen; its feature space must match.
std::unique_ptr<DimeModel> build_model(const TaskData& data, const FeatureSpace& features, ModelConfig config,
                                       const BaseBundle* base = nullptr, const Checkpoint* pretrained = nullptr);

/// Labeled rows of every split, in train, valid, test order.
LabeledRows all_labeled(const TaskData& data);

}  // namespace relml
