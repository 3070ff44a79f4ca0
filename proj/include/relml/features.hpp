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

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/catalog.hpp"
#include "relml/layers.hpp"

namespace relml {

inline constexpr std::size_t kTextBuckets = 2048;
inline constexpr std::size_t kTimeFeatures = 7;

/// Kind of an encoded attribute. kConstant stands in for tables whose only
/// columns are keys, so every tuple has at least one attribute.
enum class FeatureKind { kCategorical, kNumerical, kText, kTimestamp, kConstant };

struct ColumnFeature {
  std::string name;
  FeatureKind kind = FeatureKind::kNumerical;
  std::vector<std::string> vocab;  // categorical: id = position + 1, 0 = OOV
  double mean = 0.0;
  double stdev = 1.0;
};

struct TableFeatures {
  std::string table;
  std::vector<ColumnFeature> columns;
};

/// Fitted preprocessing for every table of a slice.
struct FeatureSpace {
  std::vector<TableFeatures> tables;
  int base_year = 1970;

  /// Encodes every non-key column; the label column of `label_table` is skipped.
  static FeatureSpace fit(const Database& slice, const std::string& label_table = "",
                          const std::string& label_column = "");
  const TableFeatures& table(std::string_view name) const;
  std::optional<std::size_t> table_index(std::string_view name) const;

  nlohmann::json to_json() const;
  static FeatureSpace from_json(const nlohmann::json& doc);
};

/// Raw Time2Vec inputs: year offset, then sin/cos of month/12, day/31, hour/24.
std::array<double, kTimeFeatures> time_features(Timestamp ts, int base_year);

/// Token bag of "column value": lowercased, whitespace tokens, signed buckets.
std::vector<std::pair<std::size_t, double>> hash_text(std::string_view column, std::string_view text);

struct EncodedColumn {
  std::vector<std::uint8_t> null;
  std::vector<std::size_t> category;
  std::vector<double> number;
  std::vector<std::array<double, kTimeFeatures>> time;
  std::vector<std::size_t> text_offsets;  // rows + 1
  std::vector<std::size_t> text_bucket;
  std::vector<double> text_sign;
};

struct EncodedTable {
  std::size_t rows = 0;
  std::vector<EncodedColumn> columns;
};

EncodedTable encode_table(const Table& table, const TableFeatures& features, int base_year);
std::vector<EncodedTable> encode_database(const Database& slice, const FeatureSpace& space);

/// Typed attribute encoders for a set of tables, all mapping into R^dim.
struct AttributeEncoder {
  struct Column {
    Tensor embedding;  // categorical [vocab+1, d]; constant [1, d]
    Tensor scale;      // numerical [1, d]
    Tensor bias;       // numerical [1, d]
    Tensor null;       // [1, d]
  };

  std::size_t dim = 0;
  std::vector<std::vector<Column>> tables;  // FeatureSpace order
  Tensor text_weight;                       // [kTextBuckets, d], shared
  Tensor time_scale;                        // [1, 1]
  Tensor time_weight;                       // [kTimeFeatures, d]
  Tensor time_bias;                         // [1, d]

  static AttributeEncoder create(ParamStore& store, const std::string& prefix, const FeatureSpace& space,
                                 std::size_t dim, Rng& rng);
  /// One [rows, dim] tensor per encoded column of table `t`.
  std::vector<Tensor> encode(const FeatureSpace& space, std::size_t t, const EncodedTable& data,
                             std::span<const std::size_t> rows) const;
  /// Time2Vec on raw features [n, 7].
  Tensor time2vec(const Tensor& raw) const;
};

/// CLS + encoder stack + [H_cls, mean(H_attr)] readout, projected to R^d.
struct TupleEncoder {
  std::vector<Tensor> cls;                // per table [1, d]
  std::vector<EncoderBlock> blocks;       // shared across tables
  std::vector<LayerNormParams> readout;   // per table, width 2d
  Linear projection;                      // 2d -> d

  static TupleEncoder create(ParamStore& store, const std::string& prefix, std::size_t tables, std::size_t dim,
                             std::size_t depth, std::size_t heads, Activation act, Rng& rng);
  /// `attrs` holds one [n, d] tensor per attribute; returns [n, d].
  Tensor operator()(std::size_t table, std::span<const Tensor> attrs) const;
};

}  // namespace relml
