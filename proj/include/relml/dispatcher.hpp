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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/base_models.hpp"
#include "relml/profiles.hpp"

namespace relml {

/// Stable hex hash of (task name, target table, target column, task type).
std::string task_signature(const TaskProfile& task);

struct RegistryEntry {
  std::string model_id;
  std::string task_sig;
  double mu = 0.0;
  std::size_t count = 0;
};

/// Historical per-(model, task) performance as an exponential moving average.
class PerfRegistry {
 public:
  static PerfRegistry load(const std::filesystem::path& path);  // missing file -> empty
  void save(const std::filesystem::path& path) const;

  nlohmann::json to_json() const;
  static PerfRegistry from_json(const nlohmann::json& doc);

  const RegistryEntry* find(const std::string& model_id, const std::string& task_sig) const;
  /// mu <- beta * mu + (1 - beta) * score; the first observation sets mu = score.
  const RegistryEntry& update_ema(const std::string& model_id, const std::string& task_sig, double score,
                                  double beta = 0.9);
  const std::vector<RegistryEntry>& entries() const { return entries_; }

 private:
  std::vector<RegistryEntry> entries_;  // ordered by (model_id, task_sig)
};

inline constexpr std::size_t kMinProbeRows = 64;
inline constexpr std::size_t kProbeSteps = 20;

/// Head-only quick fit on the first half of a seeded shuffle of the probe
/// batch, scored on the second half (metric_score scale).
double zcp_score(const BaseBundle& model, const Table& target, std::span<const std::size_t> rows,
                 std::span<const double> labels, TaskType type, std::uint64_t seed);

enum class DispatchAction { kDeployBase, kAugment };
std::string_view to_string(DispatchAction action);
DispatchAction parse_dispatch_action(std::string_view text);

struct Decision {
  std::string selected;
  std::map<std::string, double> scores;
  std::map<std::string, std::string> failures;  // model id -> error message
  double s_star = 0.0;
  double mu = 0.0;
  bool mu_from_registry = false;
  double epsilon = 0.0;
  double tau = 0.0;
  DispatchAction action = DispatchAction::kAugment;

  nlohmann::json to_json() const;
  static Decision from_json(const nlohmann::json& doc);
};

/// Argmax (ties to the smallest id), tau = (1 - epsilon) * mu, deploy iff s* >= tau.
Decision decide(const std::map<std::string, double>& scores, const PerfRegistry& registry, const std::string& task_sig,
                double epsilon, double prior = 0.5);

/// Scores every pool model, then decides. All scorings failing is a dispatch error.
Decision dispatch(const ModelPool& pool, const PerfRegistry& registry, const TaskProfile& task, const Table& target,
                  std::span<const std::size_t> rows, std::span<const double> labels, double epsilon,
                  std::uint64_t seed, double prior = 0.5);

}  // namespace relml
