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
#include <string>

#include <json.hpp>

#include "relml/catalog.hpp"
#include "relml/profiles.hpp"

namespace relml {

/// Where the label signal lives: the target's own columns, or an aggregate of
/// the prices of products reached through the target's orders (two hops).
enum class SignalPlacement { kTarget, kNeighbor };

std::string_view to_string(SignalPlacement s);
SignalPlacement parse_signal_placement(std::string_view text);

/// customers(target) <- orders -> products, plus optional distractor tables
/// that reference customers.
struct SynthConfig {
  std::size_t customers = 600;
  std::size_t products = 60;
  std::size_t min_orders = 3;
  std::size_t max_orders = 8;
  std::size_t extra_tables = 0;
  SignalPlacement signal = SignalPlacement::kNeighbor;
  TaskType task_type = TaskType::kClassification;
  double preference = 0.85;  // chance an order follows the customer's price tier
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& doc);
};

struct SynthData {
  Database database;
  TaskProfile task;
};

SynthData generate_synthetic(const SynthConfig& config);

/// Writes the dataset (schema.json plus CSVs) and task.json into `dir`.
void write_synthetic(const std::filesystem::path& dir, const SynthData& data);

}  // namespace relml
