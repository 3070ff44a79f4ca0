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

#include "relml/slice.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace relml {

using nlohmann::json;

json DataSlice::provenance() const {
  json rows = json::object();
  for (const auto& [table, ids] : source_rows) rows[table] = ids.size();
  json dang = json::array();
  for (const auto& d : dangling) {
    dang.push_back({{"relation", d.relation.name()}, {"references", d.references}, {"dangling", d.dangling}});
  }
  return {{"profile", data_profile_to_json(profile)},
          {"selected_rows", std::move(rows)},
          {"forced_columns", forced_columns},
          {"dangling", std::move(dang)}};
}

DataSlice extract_slice(const Database& db, const DataProfile& profile) {
  DataSlice out;
  out.profile = profile;
  Catalog& cat = out.database.catalog;

  for (const auto& name : profile.tables()) {
    const Table& src = db.table(name);
    const TableMeta& meta = src.meta;
    const auto keep = materialized_columns(profile, meta);

    const std::set<std::string> listed = [&] {
      auto it = profile.columns.find(name);
      if (it == profile.columns.end()) return std::set<std::string>(keep.begin(), keep.end());
      return std::set<std::string>(it->second.begin(), it->second.end());
    }();
    for (const auto& c : keep)
      if (!listed.count(c)) out.forced_columns[name].push_back(c);

    // Predicates must reference retained columns.
    std::vector<std::pair<std::size_t, const Predicate*>> preds;
    if (auto it = profile.filters.find(name); it != profile.filters.end()) {
      for (const auto& p : it->second) {
        if (std::find(keep.begin(), keep.end(), p.column) == keep.end()) {
          throw Error(ErrorKind::kProfile, "filter on table '" + name + "' references projected-away column '" +
                                               p.column + "'");
        }
        preds.emplace_back(*meta.column_index(p.column), &p);
      }
    }

    std::vector<std::size_t> proj;
    TableMeta pmeta;
    pmeta.name = meta.name;
    pmeta.file = meta.file;
    for (const auto& c : keep) {
      const auto idx = *meta.column_index(c);
      proj.push_back(idx);
      ColumnMeta col = meta.columns[idx];
      pmeta.columns.push_back(std::move(col));
    }

    Table table;
    auto& ids = out.source_rows[name];
    for (std::size_t r = 0; r < src.rows.size(); ++r) {
      const Row& row = src.rows[r];
      const bool pass = std::all_of(preds.begin(), preds.end(),
                                    [&](const auto& p) { return evaluate_predicate(*p.second, row[p.first]); });
      if (!pass) continue;
      ids.push_back(r);
      Row projected;
      projected.reserve(proj.size());
      for (auto idx : proj) projected.push_back(row[idx]);
      table.rows.push_back(std::move(projected));
    }
    pmeta.row_count = table.rows.size();
    table.meta = pmeta;
    cat.tables.push_back(std::move(pmeta));
    out.database.tables.push_back(std::move(table));
  }
  for (const auto& rel : db.catalog.relations) {
    if (std::find(profile.join_paths.begin(), profile.join_paths.end(), rel) != profile.join_paths.end()) {
      cat.relations.push_back(rel);
    }
  }
  if (out.database.table(profile.target_table).rows.empty()) {
    throw Error(ErrorKind::kEmptySlice, "target slice '" + profile.target_table + "' is empty after filtering");
  }
  for (auto& fi : check_foreign_keys(out.database))
    if (fi.dangling > 0) out.dangling.push_back(std::move(fi));
  return out;
}

namespace {

std::optional<Timestamp> event_time(const Row& row, std::size_t col) {
  if (auto* ts = std::get_if<Timestamp>(&row[col])) return *ts;
  return std::nullopt;
}

std::size_t require_time_column(const Table& target) {
  const auto col = target.meta.time_index();
  if (!col) throw Error(ErrorKind::kConfig, "target table '" + target.meta.name + "' has no timestamp column");
  return *col;
}

}  // namespace

SplitSets temporal_split(const Table& target, const std::vector<std::optional<double>>& labels,
                         Timestamp train_cutoff, Timestamp valid_cutoff) {
  const auto col = require_time_column(target);
  if (!(train_cutoff < valid_cutoff)) throw Error(ErrorKind::kConfig, "train cutoff must precede valid cutoff");
  if (labels.size() != target.rows.size()) throw Error(ErrorKind::kDimension, "label count differs from row count");
  SplitSets out;
  for (std::size_t r = 0; r < target.rows.size(); ++r) {
    const auto ts = event_time(target.rows[r], col);
    if (!labels[r] || !ts) continue;
    if (*ts <= train_cutoff) {
      out.train.push_back(r);
    } else if (*ts <= valid_cutoff) {
      out.valid.push_back(r);
    } else {
      out.test.push_back(r);
    }
  }
  return out;
}

std::pair<Timestamp, Timestamp> quantile_cutoffs(const Table& target, double q_train, double q_valid) {
  const auto col = require_time_column(target);
  std::vector<Timestamp> times;
  for (const auto& row : target.rows)
    if (auto ts = event_time(row, col)) times.push_back(*ts);
  if (times.empty()) throw Error(ErrorKind::kConfig, "target table has no event times");
  std::sort(times.begin(), times.end());
  auto at = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(times.size())));
    return times[std::clamp<std::size_t>(k, 1, times.size()) - 1];
  };
  auto c1 = at(q_train);
  auto c2 = at(q_valid);
  if (!(c1 < c2)) c2 = Timestamp{c1.seconds + 1};
  return {c1, c2};
}

}  // namespace relml
