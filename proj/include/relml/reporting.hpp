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

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/dispatcher.hpp"
#include "relml/training.hpp"

namespace relml {

struct SlotImportance {
  std::string slot;   // "Table(agg)"
  double mean = 0.0;  // mean recalibrated importance over rows where the slot exists
  std::size_t rows = 0;
};

/// Per-slot mean recalibrated importances, sorted descending (ties by slot name).
std::vector<SlotImportance> explain(const DimePredictor& predictor, std::span<const std::size_t> rows,
                                    std::size_t batch_size, std::uint64_t seed);

struct ScoredRow {
  std::string key;  // target primary key
  double prediction = 0.0;
};

struct ReportInputs {
  TaskProfile task;
  std::optional<Decision> decision;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<ScoredRow> predictions;  // already ranked, top-k
  std::vector<SlotImportance> importances;
  nlohmann::json provenance = nlohmann::json::object();
};

struct ReportDocument {
  std::string markdown;
  nlohmann::json json;
  std::vector<std::string> warnings;
};

inline constexpr const char* kTemplateNarrativeMarker = "<!-- narrative: template -->";
inline constexpr const char* kLlmNarrativeMarker = "<!-- narrative: llm -->";

/// Deterministic markdown + JSON. A client, when given, only supplies the
/// narrative text; on failure the template narrative is used with a warning.
ReportDocument synthesize_report(const ReportInputs& inputs, AgentClient* client = nullptr);

}  // namespace relml
