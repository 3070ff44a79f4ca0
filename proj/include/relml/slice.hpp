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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/catalog.hpp"
#include "relml/profiles.hpp"

namespace relml {

/// Materialized per-table slices of a database for one task.
struct DataSlice {
  /// Projected tables and the relations among them (join paths only).
  Database database;
  /// Source row indices kept per table (the selection index set).
  std::map<std::string, std::vector<std::size_t>> source_rows;
  /// Columns re-added although the profile did not list them.
  std::map<std::string, std::vector<std::string>> forced_columns;
  /// FK references that do not resolve inside the slice.
  std::vector<FkIntegrity> dangling;
  DataProfile profile;

  const Table& target() const { return database.table(profile.target_table); }
  nlohmann::json provenance() const;
};

/// Applies filters (selection) then projection per profile table.
DataSlice extract_slice(const Database& db, const DataProfile& profile);

struct SplitSets {
  std::vector<std::size_t> train, valid, test;
};

/// Chronological split of labeled target rows (label present and event time
/// present): train <= c1 < valid <= c2 < test.
SplitSets temporal_split(const Table& target, const std::vector<std::optional<double>>& labels,
                         Timestamp train_cutoff, Timestamp valid_cutoff);

/// Cutoffs at the given quantiles of the target's event times.
std::pair<Timestamp, Timestamp> quantile_cutoffs(const Table& target, double q_train = 0.70, double q_valid = 0.85);

}  // namespace relml
