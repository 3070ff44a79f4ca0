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

#include "relml/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <set>

namespace relml {

using nlohmann::json;

namespace {

std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::kCategorical: return "categorical";
    case FeatureKind::kNumerical: return "numerical";
    case FeatureKind::kText: return "text";
    case FeatureKind::kTimestamp: return "timestamp";
    case FeatureKind::kConstant: return "constant";
  }
  return "constant";
}

FeatureKind parse_feature_kind(std::string_view s) {
  if (s == "categorical") return FeatureKind::kCategorical;
  if (s == "numerical") return FeatureKind::kNumerical;
  if (s == "text") return FeatureKind::kText;
  if (s == "timestamp") return FeatureKind::kTimestamp;
  if (s == "constant") return FeatureKind::kConstant;
  throw Error(ErrorKind::kConfig, "unknown feature kind '" + std::string(s) + "'");
}

FeatureKind feature_kind(ColumnKind k) {
  switch (k) {
    case ColumnKind::kCategorical: return FeatureKind::kCategorical;
    case ColumnKind::kNumerical: return FeatureKind::kNumerical;
    case ColumnKind::kText: return FeatureKind::kText;
    case ColumnKind::kTimestamp: return FeatureKind::kTimestamp;
  }
  return FeatureKind::kConstant;
}

constexpr const char* kConstantColumn = "__constant";

}  // namespace

FeatureSpace FeatureSpace::fit(const Database& slice, const std::string& label_table,
                               const std::string& label_column) {
  FeatureSpace fs;
  std::optional<int> min_year;
  for (const auto& t : slice.tables) {
    for (std::size_t c = 0; c < t.meta.columns.size(); ++c) {
      if (t.meta.columns[c].kind != ColumnKind::kTimestamp) continue;
      for (const auto& r : t.rows) {
        if (auto* ts = std::get_if<Timestamp>(&r[c])) {
          const int y = to_civil(*ts).year;
          min_year = min_year ? std::min(*min_year, y) : y;
        }
      }
    }
  }
  fs.base_year = min_year.value_or(1970);

  for (const auto& t : slice.tables) {
    TableFeatures tf;
    tf.table = t.meta.name;
    for (std::size_t c = 0; c < t.meta.columns.size(); ++c) {
      const auto& meta = t.meta.columns[c];
      if (meta.primary_key || meta.foreign_key) continue;
      if (t.meta.name == label_table && meta.name == label_column) continue;
      ColumnFeature f;
      f.name = meta.name;
      f.kind = feature_kind(meta.kind);
      if (f.kind == FeatureKind::kCategorical) {
        std::set<std::string> values;
        for (const auto& r : t.rows)
          if (auto* s = std::get_if<std::string>(&r[c])) values.insert(*s);
        f.vocab.assign(values.begin(), values.end());
      } else if (f.kind == FeatureKind::kNumerical) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (const auto& r : t.rows) {
          if (auto* d = std::get_if<double>(&r[c])) {
            sum += *d;
            ++n;
          }
        }
        if (n > 0) f.mean = sum / static_cast<double>(n);
        for (const auto& r : t.rows)
          if (auto* d = std::get_if<double>(&r[c])) sq += (*d - f.mean) * (*d - f.mean);
        const double sd = n > 0 ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
        f.stdev = sd > 1e-12 ? sd : 1.0;
      }
      tf.columns.push_back(std::move(f));
    }
    if (tf.columns.empty()) tf.columns.push_back({kConstantColumn, FeatureKind::kConstant, {}, 0.0, 1.0});
    fs.tables.push_back(std::move(tf));
  }
  return fs;
}

std::optional<std::size_t> FeatureSpace::table_index(std::string_view name) const {
  for (std::size_t i = 0; i < tables.size(); ++i)
    if (tables[i].table == name) return i;
  return std::nullopt;
}

const TableFeatures& FeatureSpace::table(std::string_view name) const {
  auto i = table_index(name);
  if (!i) throw Error(ErrorKind::kConfig, "no features fitted for table '" + std::string(name) + "'");
  return tables[*i];
}

json FeatureSpace::to_json() const {
  json tj = json::array();
  for (const auto& t : tables) {
    json cols = json::array();
    for (const auto& c : t.columns) {
      json cj = {{"name", c.name}, {"kind", to_string(c.kind)}};
      if (c.kind == FeatureKind::kCategorical) cj["vocab"] = c.vocab;
      if (c.kind == FeatureKind::kNumerical) {
        cj["mean"] = c.mean;
        cj["stdev"] = c.stdev;
      }
      cols.push_back(std::move(cj));
    }
    tj.push_back({{"table", t.table}, {"columns", std::move(cols)}});
  }
  return {{"base_year", base_year}, {"tables", std::move(tj)}};
}

FeatureSpace FeatureSpace::from_json(const json& doc) {
  FeatureSpace fs;
  fs.base_year = doc.at("base_year").get<int>();
  for (const auto& tj : doc.at("tables")) {
    TableFeatures tf;
    tf.table = tj.at("table").get<std::string>();
    for (const auto& cj : tj.at("columns")) {
      ColumnFeature c;
      c.name = cj.at("name").get<std::string>();
      c.kind = parse_feature_kind(cj.at("kind").get<std::string>());
      c.vocab = cj.value("vocab", std::vector<std::string>{});
      c.mean = cj.value("mean", 0.0);
      c.stdev = cj.value("stdev", 1.0);
      tf.columns.push_back(std::move(c));
    }
    fs.tables.push_back(std::move(tf));
  }
  return fs;
}

std::array<double, kTimeFeatures> time_features(Timestamp ts, int base_year) {
  const auto c = to_civil(ts);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double m = two_pi * c.month / 12.0;
  const double d = two_pi * c.day / 31.0;
  const double h = two_pi * c.hour / 24.0;
  return {static_cast<double>(c.year - base_year), std::sin(m), std::cos(m), std::sin(d), std::cos(d),
          std::sin(h), std::cos(h)};
}

std::vector<std::pair<std::size_t, double>> hash_text(std::string_view column, std::string_view text) {
  std::string joined;
  joined.reserve(column.size() + text.size() + 1);
  for (char ch : column) joined += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  joined += ' ';
  for (char ch : text) joined += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  std::vector<std::pair<std::size_t, double>> out;
  std::size_t i = 0;
  while (i < joined.size()) {
    while (i < joined.size() && std::isspace(static_cast<unsigned char>(joined[i]))) ++i;
    std::size_t j = i;
    while (j < joined.size() && !std::isspace(static_cast<unsigned char>(joined[j]))) ++j;
    if (j > i) {
      // FNV-1a, 64-bit.
      std::uint64_t h = 1469598103934665603ULL;
      for (std::size_t k = i; k < j; ++k) {
        h ^= static_cast<unsigned char>(joined[k]);
        h *= 1099511628211ULL;
      }
      out.emplace_back(static_cast<std::size_t>(h % kTextBuckets), (h >> 63) ? -1.0 : 1.0);
    }
    i = j;
  }
  return out;
}

EncodedTable encode_table(const Table& table, const TableFeatures& features, int base_year) {
  EncodedTable out;
  out.rows = table.rows.size();
  for (const auto& f : features.columns) {
    EncodedColumn ec;
    ec.null.assign(out.rows, 0);
    if (f.kind == FeatureKind::kConstant) {
      out.columns.push_back(std::move(ec));
      continue;
    }
    const auto idx = table.meta.column_index(f.name);
    if (!idx) throw Error(ErrorKind::kInput, "table '" + table.meta.name + "' lacks column '" + f.name + "'");
    if (f.kind == FeatureKind::kText) ec.text_offsets.push_back(0);
    for (std::size_t r = 0; r < out.rows; ++r) {
      const Value& v = table.rows[r][*idx];
      ec.null[r] = is_null(v) ? 1 : 0;
      switch (f.kind) {
        case FeatureKind::kCategorical: {
          std::size_t id = 0;
          if (auto* s = std::get_if<std::string>(&v)) {
            auto it = std::lower_bound(f.vocab.begin(), f.vocab.end(), *s);
            if (it != f.vocab.end() && *it == *s) id = static_cast<std::size_t>(it - f.vocab.begin()) + 1;
          }
          ec.category.push_back(id);
          break;
        }
        case FeatureKind::kNumerical: {
          const auto* d = std::get_if<double>(&v);
          ec.number.push_back(d ? (*d - f.mean) / f.stdev : 0.0);
          break;
        }
        case FeatureKind::kTimestamp: {
          const auto* ts = std::get_if<Timestamp>(&v);
          ec.time.push_back(ts ? time_features(*ts, base_year) : std::array<double, kTimeFeatures>{});
          break;
        }
        case FeatureKind::kText: {
          if (const auto* s = std::get_if<std::string>(&v)) {
            for (const auto& [bucket, sign] : hash_text(f.name, *s)) {
              ec.text_bucket.push_back(bucket);
              ec.text_sign.push_back(sign);
            }
          }
          ec.text_offsets.push_back(ec.text_bucket.size());
          break;
        }
        case FeatureKind::kConstant: break;
      }
    }
    out.columns.push_back(std::move(ec));
  }
  return out;
}

std::vector<EncodedTable> encode_database(const Database& slice, const FeatureSpace& space) {
  std::vector<EncodedTable> out;
  for (const auto& tf : space.tables) out.push_back(encode_table(slice.table(tf.table), tf, space.base_year));
  return out;
}

AttributeEncoder AttributeEncoder::create(ParamStore& store, const std::string& prefix, const FeatureSpace& space,
                                          std::size_t dim, Rng& rng) {
  AttributeEncoder enc;
  enc.dim = dim;
  bool any_text = false, any_time = false;
  for (const auto& t : space.tables) {
    std::vector<Column> cols;
    for (const auto& f : t.columns) {
      const std::string p = prefix + "." + t.table + "." + f.name;
      Column c;
      switch (f.kind) {
        case FeatureKind::kCategorical:
          c.embedding = store.add(p + ".embedding", init_normal(rng, f.vocab.size() + 1, dim));
          break;
        case FeatureKind::kConstant:
          c.embedding = store.add(p + ".embedding", init_normal(rng, 1, dim));
          break;
        case FeatureKind::kNumerical:
          c.scale = store.add(p + ".scale", init_uniform_fan_in(rng, 1, dim));
          c.bias = store.add(p + ".bias", Tensor::zeros({1, dim}));
          break;
        case FeatureKind::kText: any_text = true; break;
        case FeatureKind::kTimestamp: any_time = true; break;
      }
      c.null = store.add(p + ".null", init_normal(rng, 1, dim));
      cols.push_back(std::move(c));
    }
    enc.tables.push_back(std::move(cols));
  }
  if (any_text) enc.text_weight = store.add(prefix + ".text.weight", init_normal(rng, kTextBuckets, dim));
  if (any_time) {
    enc.time_scale = store.add(prefix + ".time.scale", Tensor::full({1, 1}, 1.0));
    enc.time_weight = store.add(prefix + ".time.weight", init_uniform_fan_in(rng, kTimeFeatures, dim));
    enc.time_bias = store.add(prefix + ".time.bias", Tensor::zeros({1, dim}));
  }
  return enc;
}

Tensor AttributeEncoder::time2vec(const Tensor& raw) const {
  const Tensor parts[2] = {matmul(slice_cols(raw, 0, 1), time_scale), slice_cols(raw, 1, kTimeFeatures)};
  return add(matmul(concat_cols(parts), time_weight), time_bias);
}

std::vector<Tensor> AttributeEncoder::encode(const FeatureSpace& space, std::size_t t, const EncodedTable& data,
                                             std::span<const std::size_t> rows) const {
  const auto& features = space.tables.at(t).columns;
  const std::size_t n = rows.size();
  std::vector<Tensor> out;
  out.reserve(features.size());
  for (std::size_t c = 0; c < features.size(); ++c) {
    const auto& f = features[c];
    const auto& col = data.columns[c];
    const auto& params = tables[t][c];
    Tensor value;
    switch (f.kind) {
      case FeatureKind::kCategorical: {
        std::vector<std::size_t> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = col.category[rows[i]];
        value = gather_rows(params.embedding, ids);
        break;
      }
      case FeatureKind::kConstant: {
        const std::vector<std::size_t> ids(n, 0);
        value = gather_rows(params.embedding, ids);
        break;
      }
      case FeatureKind::kNumerical: {
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = col.number[rows[i]];
        value = add(matmul(Tensor::column(std::move(x)), params.scale), params.bias);
        break;
      }
      case FeatureKind::kTimestamp: {
        std::vector<double> raw(n * kTimeFeatures);
        for (std::size_t i = 0; i < n; ++i)
          std::copy(col.time[rows[i]].begin(), col.time[rows[i]].end(), raw.begin() + static_cast<std::ptrdiff_t>(i * kTimeFeatures));
        value = time2vec(Tensor::from({n, kTimeFeatures}, std::move(raw)));
        break;
      }
      case FeatureKind::kText: {
        std::vector<std::size_t> buckets, segment;
        std::vector<double> signs;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = col.text_offsets[rows[i]]; k < col.text_offsets[rows[i] + 1]; ++k) {
            buckets.push_back(col.text_bucket[k]);
            signs.push_back(col.text_sign[k]);
            segment.push_back(i);
          }
        }
        if (buckets.empty()) {
          value = Tensor::zeros({n, dim});
        } else {
          value = segment_aggregate(scale_rows(gather_rows(text_weight, buckets), signs), segment, n, Aggregator::kSum);
        }
        break;
      }
    }
    bool any_null = false;
    std::vector<double> present(n), missing(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_missing = col.null[rows[i]] != 0;
      any_null = any_null || is_missing;
      present[i] = is_missing ? 0.0 : 1.0;
      missing[i] = is_missing ? 1.0 : 0.0;
    }
    if (any_null) {
      value = add(scale_rows(value, present), mul(Tensor::column(std::move(missing)), params.null));
    }
    out.push_back(std::move(value));
  }
  return out;
}

TupleEncoder TupleEncoder::create(ParamStore& store, const std::string& prefix, std::size_t tables, std::size_t dim,
                                  std::size_t depth, std::size_t heads, Activation act, Rng& rng) {
  TupleEncoder te;
  for (std::size_t t = 0; t < tables; ++t) {
    te.cls.push_back(store.add(prefix + ".cls." + std::to_string(t), init_normal(rng, 1, dim)));
  }
  for (std::size_t l = 0; l < depth; ++l) {
    te.blocks.push_back(EncoderBlock::create(store, prefix + ".block" + std::to_string(l), dim, heads, 2 * dim, act, rng));
  }
  for (std::size_t t = 0; t < tables; ++t) {
    te.readout.push_back(LayerNormParams::create(store, prefix + ".readout." + std::to_string(t), 2 * dim));
  }
  te.projection = Linear::create(store, prefix + ".projection", 2 * dim, dim, rng);
  return te;
}

Tensor TupleEncoder::operator()(std::size_t table, std::span<const Tensor> attrs) const {
  if (attrs.empty()) throw Error(ErrorKind::kConfig, "tuple encoder needs at least one attribute");
  const std::size_t n = attrs[0].rows();
  const std::size_t m = attrs.size();
  const std::size_t len = m + 1;

  std::vector<Tensor> tokens;
  tokens.reserve(len);
  tokens.push_back(gather_rows(cls.at(table), std::vector<std::size_t>(n, 0)));
  tokens.insert(tokens.end(), attrs.begin(), attrs.end());
  // Block-major [cls; attr_1; ...] to sequence-major [cls, attr_1, ...] per tuple.
  std::vector<std::size_t> order(n * len);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < len; ++j) order[s * len + j] = j * n + s;
  Tensor h = gather_rows(concat_rows(tokens), order);

  std::vector<std::size_t> offsets(n + 1);
  for (std::size_t s = 0; s <= n; ++s) offsets[s] = s * len;
  for (const auto& b : blocks) h = b(h, offsets);

  std::vector<std::size_t> cls_rows(n), attr_rows, attr_seg;
  attr_rows.reserve(n * m);
  attr_seg.reserve(n * m);
  for (std::size_t s = 0; s < n; ++s) {
    cls_rows[s] = s * len;
    for (std::size_t j = 1; j < len; ++j) {
      attr_rows.push_back(s * len + j);
      attr_seg.push_back(s);
    }
  }
  const Tensor parts[2] = {gather_rows(h, cls_rows),
                           segment_aggregate(gather_rows(h, attr_rows), attr_seg, n, Aggregator::kMean)};
  return projection(readout.at(table)(concat_cols(parts)));
}

}  // namespace relml
