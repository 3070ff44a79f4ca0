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

// Acceptance checks. Prints one PASS/FAIL line per criterion; exits 1 on any failure.
// Usage: acceptance [criterion ...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "relml/dispatcher.hpp"
#include "relml/grad_check.hpp"
#include "relml/model.hpp"
#include "relml/pipeline.hpp"
#include "relml/slice.hpp"
#include "relml/synth.hpp"
#include "slice_oracle.hpp"
#include "test_util.hpp"

namespace relml {
namespace {

using nlohmann::json;
using Matrix = std::vector<std::vector<double>>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, bool grad = false) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = d(rng);
  return Tensor::from({r, c}, std::move(v), grad);
}

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Adjacency make_adjacency(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::vector<std::size_t>> lists(n);
  for (auto [a, b] : edges) {
    lists[a].push_back(b);
    lists[b].push_back(a);
  }
  Adjacency adj;
  adj.offsets.push_back(0);
  for (auto& l : lists) {
    std::sort(l.begin(), l.end());
    adj.targets.insert(adj.targets.end(), l.begin(), l.end());
    adj.offsets.push_back(adj.targets.size());
  }
  return adj;
}

std::vector<Adjacency> random_adjacency(Rng& rng, std::size_t n, std::size_t rels) {
  std::vector<Adjacency> adj;
  for (std::size_t r = 0; r < rels; ++r) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    const std::size_t m = rng() % (2 * n);
    for (std::size_t k = 0; k < m; ++k) edges.emplace_back(rng() % n, rng() % n);
    adj.push_back(make_adjacency(n, edges));
  }
  return adj;
}

std::vector<double> dense_aggregate(const Matrix& h, std::span<const std::size_t> nb, Aggregator agg) {
  const std::size_t d = h[0].size();
  std::vector<double> out(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double acc = agg == Aggregator::kMax ? -INFINITY : agg == Aggregator::kMin ? INFINITY : 0.0;
    for (std::size_t u : nb) {
      if (agg == Aggregator::kMax) acc = std::max(acc, h[u][j]);
      else if (agg == Aggregator::kMin) acc = std::min(acc, h[u][j]);
      else acc += h[u][j];
    }
    if (agg == Aggregator::kMean) acc /= static_cast<double>(nb.size());
    out[j] = acc;
  }
  return out;
}

std::vector<double> vec_mat(const std::vector<double>& x, const Tensor& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x[i] * w.at(i, j);
  return out;
}

Matrix dense_message_pass(const RelationLayer& layer, const Matrix& h, const std::vector<Adjacency>& adj,
                          Aggregator agg, bool norm) {
  const std::size_t n = h.size(), d = h[0].size();
  Matrix out(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::size_t> present;
    for (std::size_t r = 0; r < adj.size(); ++r)
      if (!adj[r].of(v).empty()) present.push_back(r);
    std::vector<double> acc(d, 0.0);
    if (present.empty()) {
      acc = vec_mat(h[v], layer.self);
    } else {
      for (std::size_t r : present) {
        const auto a = vec_mat(h[v], layer.wh[r]);
        const auto b = vec_mat(dense_aggregate(h, adj[r].of(v), agg), layer.ws[r]);
        for (std::size_t j = 0; j < d; ++j) acc[j] += (a[j] + b[j]) / static_cast<double>(present.size());
      }
    }
    for (auto& x : acc) x = std::tanh(x);
    if (norm) {
      double mean = 0.0, var = 0.0;
      for (double x : acc) mean += x / static_cast<double>(d);
      for (double x : acc) var += (x - mean) * (x - mean) / static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j)
        acc[j] = (acc[j] - mean) / std::sqrt(var + 1e-5) * layer.norm.gain.data()[j] + layer.norm.bias.data()[j];
    }
    out[v] = acc;
  }
  return out;
}

/// users(id, age, country, signup) with orders(id, uid, amount, ts); order i belongs to user owner[i].
Database shop(std::size_t users, const std::vector<std::size_t>& owner) {
  json schema = json::parse(R"({"tables":[
    {"name":"users","columns":[{"name":"id","kind":"categorical","pk":true},
      {"name":"age","kind":"numerical"},{"name":"country","kind":"categorical"},
      {"name":"signup","kind":"timestamp","timestamp_role":"event"}]},
    {"name":"orders","columns":[{"name":"id","kind":"categorical","pk":true},
      {"name":"uid","kind":"categorical","fk":{"table":"users","column":"id"}},
      {"name":"amount","kind":"numerical"},{"name":"ts","kind":"timestamp"}]}]})");
  Database db = testing::make_database(schema);
  const char* countries[] = {"de", "fr", "us"};
  for (std::size_t i = 0; i < users; ++i) {
    db.tables[0].rows.push_back({"u" + std::to_string(i), 20.0 + 3.0 * static_cast<double>(i),
                                 std::string(countries[i % 3]),
                                 from_civil({2021, static_cast<unsigned>(1 + i % 12), 5})});
  }
  for (std::size_t i = 0; i < owner.size(); ++i) {
    db.tables[1].rows.push_back({"o" + std::to_string(i), "u" + std::to_string(owner[i]),
                                 1.0 + 0.7 * static_cast<double>(i),
                                 from_civil({2020, static_cast<unsigned>(1 + i % 12), 9})});
  }
  testing::finalize(db);
  return db;
}

std::vector<Tensor> all_params(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& [name, e] : store.entries()) out.push_back(e.value);
  return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  Rng rng(99);
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f, std::span<const Tensor> params) {
    const double e = grad_check(f, params);
    ++checks;
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  };

  for (int trial = 0; trial < 3; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(2, 4);
    const std::size_t r = dim(rng), c = dim(rng);
    auto a = random_tensor(rng, r, c, true);
    auto b = random_tensor(rng, r, c, true);
    auto row = random_tensor(rng, 1, c, true);
    auto w = random_tensor(rng, c, 3, true);
    auto ln_bias = random_tensor(rng, 1, c, true);
    auto probe = random_tensor(rng, r, c);
    auto probe3 = random_tensor(rng, r, 3);
    auto weigh = [&](const Tensor& t) { return sum_all(mul(t, probe)); };
    std::vector<std::size_t> idx{1, 0, 1};
    std::vector<std::size_t> seg(r);
    for (std::size_t i = 0; i < r; ++i) seg[i] = i % 2;
    std::vector<double> factors(r);
    for (std::size_t i = 0; i < r; ++i) factors[i] = 0.5 + static_cast<double>(i);
    auto probe_g = random_tensor(rng, 3, c);
    auto probe_s = random_tensor(rng, 2, c);

    std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
        {"add", [&] { return weigh(add(a, row)); }},
        {"sub", [&] { return weigh(sub(a, b)); }},
        {"mul", [&] { return weigh(mul(a, row)); }},
        {"scale", [&] { return weigh(scale(a, -1.7)); }},
        {"matmul", [&] { return sum_all(mul(matmul(a, w), probe3)); }},
        {"transpose", [&] { return weigh(transpose(transpose(a))); }},
        {"tanh", [&] { return weigh(activate(a, Activation::kTanh)); }},
        {"sigmoid", [&] { return weigh(activate(a, Activation::kSigmoid)); }},
        {"relu", [&] { return weigh(relu(a)); }},
        {"softmax1", [&] { return weigh(softmax(a, 1)); }},
        {"softmax0", [&] { return weigh(softmax(a, 0)); }},
        {"layer_norm", [&] { return weigh(layer_norm(a, row, ln_bias)); }},
        {"slice_cols", [&] { return sum_all(mul(slice_cols(a, 1, c), slice_cols(probe, 1, c))); }},
        {"concat_cols", [&] {
           const Tensor parts[] = {a, b};
           return sum_all(mul(concat_cols(parts), concat_cols(std::vector<Tensor>{probe, probe})));
         }},
        {"concat_rows", [&] {
           const Tensor parts[] = {a, b};
           return sum_all(mul(concat_rows(parts), concat_rows(std::vector<Tensor>{probe, probe})));
         }},
        {"cosine", [&] { return sum_all(row_cosine(a, b)); }},
        {"mean", [&] { return mean_all(mul(a, b)); }},
        {"gather_rows", [&] { return sum_all(mul(gather_rows(a, idx), probe_g)); }},
        {"scatter_add_rows", [&] { return sum_all(mul(scatter_add_rows(a, seg, 2), probe_s)); }},
        {"scale_rows", [&] { return weigh(scale_rows(a, factors)); }},
    };
    for (Aggregator agg : kFusionAggregators) {
      cases.emplace_back("segment_" + std::string(to_string(agg)),
                         [&, agg] { return sum_all(mul(segment_aggregate(a, seg, 2, agg), probe_s)); });
    }
    const Tensor params[] = {a, b, row, w, ln_bias};
    for (auto& [name, f] : cases) check(name, f, params);

    std::vector<double> labels(r);
    for (std::size_t i = 0; i < r; ++i) labels[i] = static_cast<double>(i % 2);
    auto logits = random_tensor(rng, r, 1, true);
    const Tensor pl[] = {logits};
    check("bce", [&] { return bce_with_logits(logits, labels); }, pl);
    std::vector<double> targets(r, 5.0);
    check("l1", [&] { return l1_loss(logits, targets); }, pl);
  }

  {
    ParamStore store;
    auto params = AttentionParams::create(store, "a", 4, 2, rng);
    auto e = random_tensor(rng, 7, 4, true);
    auto probe = random_tensor(rng, 7, 4);
    const std::vector<std::size_t> offsets{0, 1, 4, 7};
    const Tensor p[] = {e, params.wq, params.wk, params.wv, params.wo};
    check("attention", [&] { return sum_all(mul(multi_head_attention(e, params, offsets), probe)); }, p);
  }
  {
    ParamStore store;
    auto layer = RelationLayer::create(store, "mp", 2, 3, rng);
    const std::vector<Adjacency> adj{make_adjacency(5, {{0, 1}, {1, 2}, {0, 3}}), make_adjacency(5, {{2, 3}})};
    auto h = random_tensor(rng, 5, 3, true);
    auto w = random_tensor(rng, 5, 3);
    auto params = all_params(store);
    params.push_back(h);
    for (Aggregator agg : kFusionAggregators) {
      check("message_pass_" + std::string(to_string(agg)),
            [&] { return sum_all(mul(message_pass_layer(layer, h, adj, agg, Activation::kTanh, true), w)); }, params);
    }
  }
  {
    ParamStore store;
    auto params = AttentionParams::create(store, "f", 4, 2, rng);
    const std::vector<Adjacency> adj{make_adjacency(5, {{0, 1}, {0, 2}}), make_adjacency(5, {{0, 3}})};
    auto h = random_tensor(rng, 5, 4, true);
    auto probe = random_tensor(rng, 2, 4);
    const std::size_t targets[] = {0, 4};
    auto p = all_params(store);
    p.push_back(h);
    check("fusion", [&] { return sum_all(mul(fuse_context(params, h, adj, targets, false).z, probe)); }, p);
  }
  {
    auto db = shop(2, {0, 0, 1, 1});
    BaseModelConfig bc;
    bc.hidden = 6;
    bc.attr_dim = 3;
    bc.activation = Activation::kTanh;
    auto base = BaseBundle::create("b", db, "users", "", bc, 3);
    ModelConfig mc;
    mc.dim = 4;
    mc.encoder_depth = 1;
    mc.heads = 2;
    mc.mp_layers = 2;
    mc.activation = Activation::kTanh;
    mc.seed = 5;
    auto model = DimeModel::create(mc, FeatureSpace::fit(db, "users", ""), db.catalog.relations, "users", base.get());
    auto data = prepare_graph(*model, db);
    const std::size_t seeds[] = {0, 1};
    Rng srng(3);
    const auto sg = sample_subgraph(data.graph, seeds, SamplingConfig{}, srng);
    if (sg.num_nodes() != 6) return {false, "toy graph has " + std::to_string(sg.num_nodes()) + " nodes"};
    const std::vector<double> labels{1.0, 0.0};
    check("augmented_forward", [&] { return bce_with_logits(forward(*model, data, sg).prediction, labels); },
          all_params(model->params));
  }
  return {worst <= 1e-4, std::to_string(checks) + " checks, worst " + fmt("%.2e", worst) + " (" + worst_name + ")"};
}

Outcome encoder_invariance() {
  Rng rng(4);
  ParamStore store;
  auto enc = TupleEncoder::create(store, "t", 1, 4, 2, 2, Activation::kRelu, rng);
  double worst_perm = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng() % 5;
    std::vector<Tensor> attrs;
    for (std::size_t i = 0; i < k; ++i) attrs.push_back(random_tensor(rng, 1, 4));
    auto permuted = attrs;
    std::shuffle(permuted.begin(), permuted.end(), rng);
    worst_perm = std::max(worst_perm, max_abs_diff(enc(0, attrs), enc(0, permuted)));
  }
  double worst_cycle = 0.0;
  bool absolute_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int year = 1990 + static_cast<int>(rng() % 40), k = 1 + static_cast<int>(rng() % 5);
    const auto month = static_cast<unsigned>(1 + rng() % 12), day = static_cast<unsigned>(1 + rng() % 28);
    const auto hour = static_cast<unsigned>(rng() % 24);
    const auto a = time_features(from_civil({year, month, day, hour}), 2000);
    const auto b = time_features(from_civil({year + k, month, day, hour}), 2000);
    absolute_ok = absolute_ok && b[0] - a[0] == static_cast<double>(k);
    for (std::size_t i = 1; i < kTimeFeatures; ++i) worst_cycle = std::max(worst_cycle, std::abs(a[i] - b[i]));
  }
  return {worst_perm <= 1e-10 && worst_cycle <= 1e-12 && absolute_ok,
          "permutation " + fmt("%.2e", worst_perm) + ", periodicity " + fmt("%.2e", worst_cycle) +
              (absolute_ok ? "" : ", absolute component wrong")};
}

Outcome message_passing_oracle() {
  Rng rng(9);
  double worst = 0.0;
  std::size_t runs = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 10, d = 3, rels = 1 + trial % 3;
    ParamStore store;
    auto layer = RelationLayer::create(store, "mp", rels, d, rng);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (auto& g : layer.norm.gain.mutable_data()) g = u(rng);
    for (auto& b : layer.norm.bias.mutable_data()) b = u(rng) - 1.0;
    const auto adj = random_adjacency(rng, n, rels);
    const auto h = random_tensor(rng, n, d);
    for (Aggregator agg : kFusionAggregators) {
      for (bool norm : {false, true}) {
        const auto out = message_pass_layer(layer, h, adj, agg, Activation::kTanh, norm);
        const auto ref = dense_message_pass(layer, to_matrix(h), adj, agg, norm);
        for (std::size_t v = 0; v < n; ++v)
          for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(out.at(v, j) - ref[v][j]));
        ++runs;
      }
    }
  }
  return {worst <= 1e-10, std::to_string(runs) + " layer runs, worst " + fmt("%.2e", worst)};
}

Outcome fusion_and_importance() {
  Rng rng(5);
  bool structure_ok = true;
  double worst_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 9, rels = 1 + rng() % 3;
    ParamStore store;
    auto params = AttentionParams::create(store, "f", 4, 2, rng);
    const auto adj = random_adjacency(rng, n, rels);
    const auto h = random_tensor(rng, n, 4);
    std::vector<std::size_t> targets(n);
    std::iota(targets.begin(), targets.end(), 0);
    const auto fused = fuse_context(params, h, adj, targets, true);
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<std::size_t> present;
      for (std::size_t r = 0; r < rels; ++r)
        if (!adj[r].of(v).empty()) present.push_back(r);
      structure_ok = structure_ok && fused.relations[v] == present && fused.alpha[v].size() == 1 + 4 * present.size();
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(fused.alpha[v].begin(), fused.alpha[v].end(), 0.0) - 1.0));
    }
  }
  const auto uniform = importance_scores(std::vector<double>{0.25, 0.25, 0.25, 0.25});
  const auto onehot = importance_scores(std::vector<double>{0, 0, 1, 0});
  const auto mixed = importance_scores(std::vector<double>{0.5, 0.25, 0.25});
  const bool hand_ok = uniform == std::vector<double>{0, 0, 0, 0} && onehot == std::vector<double>{0, 0, 1, 0} &&
                       std::abs(mixed[0] - 0.25) <= 1e-15 && mixed[1] == 0.0 && mixed[2] == 0.0;
  return {structure_ok && hand_ok && worst_sum <= 1e-12,
          std::string("slot counts ") + (structure_ok ? "ok" : "WRONG") + ", hand cases " + (hand_ok ? "ok" : "WRONG") +
              ", alpha sum error " + fmt("%.2e", worst_sum)};
}

Outcome slice_oracle() {
  std::mt19937_64 rng(2024);
  std::size_t checked = 0, fragments = 0, mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto db = testing::random_database(rng);
    auto profile = testing::random_profile(db, rng);
    const auto expected = testing::brute_force_slice(db, profile);
    if (expected.at(profile.target_table).empty()) {
      try {
        extract_slice(db, profile);
        ++mismatches;  // an empty target must be rejected
      } catch (const Error&) {
      }
      continue;
    }
    const auto slice = extract_slice(db, profile);
    if (testing::slice_row_sets(slice) != expected) ++mismatches;
    testing::SqliteOracle sql(db);
    for (const auto& frag : emit_sql_fragments(profile, db.catalog)) {
      ++fragments;
      if (sql.query(frag, profile) != expected.at(frag.table)) ++mismatches;
    }
    ++checked;
  }
  return {mismatches == 0 && checked >= 50, std::to_string(checked) + " slices, " + std::to_string(fragments) +
                                                " SQL fragments, " + std::to_string(mismatches) + " mismatches"};
}

Outcome dispatcher_arithmetic() {
  PerfRegistry reg;
  reg.update_ema("m", "sig", 0.8);
  const auto deploy = decide({{"m", 0.73}}, reg, "sig", 0.1);
  const auto augment = decide({{"m", 0.71}}, reg, "sig", 0.1);
  const bool tau_ok = deploy.tau == 0.72 && deploy.action == DispatchAction::kDeployBase &&
                      augment.action == DispatchAction::kAugment;
  const double mu = reg.update_ema("m", "sig", 0.6, 0.9).mu;
  const bool ema_ok = mu == 0.78;

  Rng rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t shift_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::map<std::string, double> scores, shifted;
    const std::size_t n = 1 + rng() % 6;
    const double c = u(rng) - 0.5;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = std::round(u(rng) * 20.0) / 20.0;
      scores["m" + std::to_string(i)] = s;
      shifted["m" + std::to_string(i)] = s + c;
    }
    if (decide(scores, reg, "sig", 0.1).selected != decide(shifted, reg, "sig", 0.1).selected) ++shift_failures;
  }
  return {tau_ok && ema_ok && shift_failures == 0,
          "tau " + fmt("%.12g", deploy.tau) + ", ema " + fmt("%.12g", mu) + ", shift failures " +
              std::to_string(shift_failures) + "/1000"};
}

// ---------------------------------------------------------------------------
// Neighbor-signal experiment shared by the lift and ablation criteria.

struct SeedRun {
  double base = 0.0, augmented = 0.0, ablated = 0.0;
};

TrainConfig experiment_train_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.seed = seed;
  tc.batch_size = 64;
  tc.max_epochs = 60;
  tc.sampling.fanout = {16, 16};
  return tc;
}

double train_augmented(const TaskData& td, const FeatureSpace& fs, const BaseBundle& base, std::size_t mp_layers,
                       std::uint64_t seed) {
  ModelConfig mc;
  mc.dim = 32;
  mc.encoder_depth = 1;
  mc.mp_layers = mp_layers;
  mc.seed = seed;
  const auto tc = experiment_train_config(seed);
  auto model = build_model(td, fs, mc, &base);
  auto gd = prepare_graph(*model, td.slice.database);
  DimePredictor p(std::move(model), gd, tc.sampling);
  train_task(p, td.train, td.valid, tc);
  return evaluate(p, td.test, 256, seed + 1).metric;
}

const std::vector<SeedRun>& neighbor_experiment() {
  static const std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (std::uint64_t seed : {0, 1, 2}) {
      SynthConfig sc;
      sc.customers = 1000;
      sc.seed = seed;
      const auto sd = generate_synthetic(sc);
      const auto td = prepare_task(sd.database, sd.task);
      const auto fs = fit_features(td);
      const auto tc = experiment_train_config(seed);
      BasePredictor bp(BaseBundle::create("dnn", td.slice.database, "customers", "label", BaseModelConfig{}, seed),
                       td.slice.target(), TaskType::kClassification);
      train_task(bp, td.train, td.valid, tc);
      SeedRun r;
      r.base = evaluate(bp, td.test, 256, seed + 1).metric;
      r.augmented = train_augmented(td, fs, bp.bundle(), 2, seed);
      r.ablated = train_augmented(td, fs, bp.bundle(), 0, seed);
      out.push_back(r);
    }
    return out;
  }();
  return runs;
}

Outcome augmentation_lift() {
  bool pass = true;
  std::string detail;
  for (const auto& r : neighbor_experiment()) {
    pass = pass && r.base <= 0.60 && r.augmented >= 0.90;
    detail += (detail.empty() ? "" : "; ") + fmt("base %.3f", r.base) + fmt(" augmented %.3f", r.augmented);
  }
  return {pass, detail};
}

Outcome ablation_direction() {
  bool pass = true;
  std::string detail;
  for (const auto& r : neighbor_experiment()) {
    pass = pass && r.augmented - r.ablated >= 0.15;
    detail += (detail.empty() ? "" : "; ") + fmt("full %.3f", r.augmented) + fmt(" no-mp %.3f", r.ablated);
  }
  return {pass, detail};
}

Outcome overfit_sanity() {
  std::string detail;
  bool pass = true;
  for (TaskType type : {TaskType::kClassification, TaskType::kRegression}) {
    SynthConfig sc;
    sc.customers = 50;
    sc.task_type = type;
    sc.seed = 11;
    const auto sd = generate_synthetic(sc);
    const auto td = prepare_task(sd.database, sd.task);
    const auto fs = fit_features(td);
    const auto rows = all_labeled(td);
    ModelConfig mc;
    mc.dim = 32;
    mc.encoder_depth = 1;
    mc.task_type = type;
    mc.seed = 11;
    TrainConfig tc;
    tc.lr = 3e-3;
    tc.seed = 11;
    tc.batch_size = 64;
    tc.max_epochs = 500;
    tc.patience = 500;
    tc.weight_decay = 0.0;
    tc.sampling.fanout = {16, 16};
    auto base = BaseBundle::create("dnn", td.slice.database, "customers", "label", BaseModelConfig{}, 11);
    auto model = build_model(td, fs, mc, base.get());
    auto gd = prepare_graph(*model, td.slice.database);
    DimePredictor p(std::move(model), gd, tc.sampling);
    const auto result = train_task(p, rows, rows, tc);
    const double metric = evaluate(p, rows, 256, 12).metric;
    const bool ok = type == TaskType::kClassification ? metric >= 0.99 : metric <= 0.02;
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + std::string(to_string(type)) + " train " +
              (type == TaskType::kClassification ? "auc " : "mae ") + fmt("%.4f", metric) + " (" +
              std::to_string(rows.rows.size()) + " rows, best epoch " + std::to_string(result.best_epoch) + ")";
  }
  return {pass, detail};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism_and_persistence() {
  testing::TempDir dir;
  const auto root = dir.path();
  auto cli_run = [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) throw Error(ErrorKind::kInput, args[0] + " failed: " + err.str());
  };
  // The whole pipeline runs twice under the same paths so provenance matches.
  std::string reports[2];
  for (auto& report : reports) {
    const auto work = root / "work";
    std::filesystem::remove_all(work);
    std::filesystem::create_directories(work);
    std::ofstream(work / "cfg.json") << json{{"data", (work / "data").string()},
                                             {"task", (work / "data" / "task.json").string()},
                                             {"seed", 4},
                                             {"model", {{"dim", 8}, {"encoder_depth", 1}}},
                                             {"train", {{"batch_size", 32}, {"max_epochs", 4}, {"fanout", {4, 4}}}},
                                             {"base", {{"hidden", 16}}}}
                                            .dump();
    const std::string cfg = (work / "cfg.json").string();
    cli_run({"synth-data", "--out", (work / "data").string(), "--customers", "200", "--seed", "2"});
    cli_run({"train", "--config", cfg, "--kind", "base", "--model-id", "mlp", "--pool", (work / "pool").string(),
             "--register", "true", "--registry", (work / "registry.json").string(), "--out", (work / "base").string()});
    cli_run({"dispatch", "--config", cfg, "--pool", (work / "pool").string(), "--registry",
             (work / "registry.json").string(), "--output", (work / "decision.json").string()});
    cli_run({"train", "--config", cfg, "--kind", "dime", "--base-id", "mlp", "--pool", (work / "pool").string(),
             "--out", (work / "run").string()});
    cli_run({"report", "--config", cfg, "--model", (work / "run").string(), "--decision",
             (work / "decision.json").string(), "--out", (work / "report").string()});
    report = slurp(work / "report" / "premium_buyer.report.json");
  }
  const bool identical = !reports[0].empty() && reports[0] == reports[1];

  auto db = shop(4, {0, 0, 1, 2, 3, 3});
  BaseModelConfig bc;
  bc.hidden = 8;
  bc.attr_dim = 3;
  auto base = BaseBundle::create("dnn", db, "users", "", bc, 3);
  ModelConfig mc;
  mc.dim = 8;
  mc.encoder_depth = 1;
  mc.seed = 6;
  auto model = DimeModel::create(mc, FeatureSpace::fit(db, "users", ""), db.catalog.relations, "users", base.get());
  for (auto& [name, e] : model->params.entries()) {
    Rng r(name.size());
    Tensor value = e.value;  // shares storage
    for (auto& x : value.mutable_data()) x += 0.1 * (static_cast<double>(r() % 1000) / 1000.0 - 0.5);
  }
  model->save(root / "m.ckpt");
  auto loaded = DimeModel::load(root / "m.ckpt");
  auto data = prepare_graph(*model, db);
  auto data2 = prepare_graph(*loaded, db);
  const std::size_t seeds[] = {0, 1, 2, 3};
  Rng rng(4);
  const auto sg = sample_subgraph(data.graph, seeds, SamplingConfig{}, rng);
  const double diff = max_abs_diff(forward(*model, data, sg).prediction, forward(*loaded, data2, sg).prediction);
  return {identical && diff <= 1e-12, std::string("report json ") + (identical ? "identical" : "DIFFERS") + " (" +
                                          std::to_string(reports[0].size()) + " bytes), checkpoint diff " +
                                          fmt("%.2e", diff)};
}

Outcome leakage_guard() {
  SynthConfig sc;
  sc.customers = 300;
  sc.seed = 21;
  auto sd = generate_synthetic(sc);
  // Scatter order times around each customer's reference so the guard has work to do.
  Rng trng(22);
  auto& orders = testing::mutable_table(sd.database, "orders");
  for (auto& row : orders.rows) {
    auto& ts = std::get<Timestamp>(row[4]);
    ts.seconds += static_cast<std::int64_t>(trng() % 600) * 86400 - 150 * 86400;
  }
  const auto g = build_graph(sd.database);
  const std::size_t customers = *g.type_index("customers");
  const std::size_t first = g.type_offset[customers], count = g.type_offset[customers + 1] - first;

  std::size_t future_candidates = 0;
  for (std::size_t c = 0; c < count; ++c) {
    const auto ref = g.node_time[first + c];
    for (std::size_t r = 0; r < g.relations.size(); ++r)
      for (std::size_t u : neighbors(g, first + c, r))
        if (g.node_time[u] && ref && *g.node_time[u] > *ref) ++future_candidates;
  }

  Rng rng(23);
  const SamplingConfig uniform{{6, 6, 6}, SamplingStrategy::kUniform};
  std::size_t violations = 0, nodes = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t seeds[] = {first + rng() % count, first + rng() % count};
    if (seeds[0] == seeds[1]) continue;
    const auto sg = sample_subgraph(g, seeds, uniform, rng);
    for (std::size_t v = 0; v < sg.num_nodes(); ++v) {
      const auto ref = sg.reference_time[sg.owner[v]];
      const auto& t = g.node_time[sg.global[v]];
      if (t && ref && *t > *ref) ++violations;
    }
    nodes += sg.num_nodes();
  }

  std::vector<std::size_t> seeds(count);
  std::iota(seeds.begin(), seeds.end(), first);
  const SamplingConfig latest{{3, 3}, SamplingStrategy::kLatest};
  Rng r1(1), r2(987654321);
  const auto a = sample_subgraph(g, seeds, latest, r1);
  const auto b = sample_subgraph(g, seeds, latest, r2);
  bool same = a.global == b.global && a.owner == b.owner && a.edges.size() == b.edges.size();
  for (std::size_t i = 0; same && i < a.edges.size(); ++i)
    same = a.edges[i].u == b.edges[i].u && a.edges[i].v == b.edges[i].v && a.edges[i].relation == b.edges[i].relation;
  return {violations == 0 && future_candidates > 0 && same,
          std::to_string(violations) + " violations over " + std::to_string(nodes) + " sampled nodes (" +
              std::to_string(future_candidates) + " future neighbors in graph), latest " +
              (same ? "rng-independent" : "DEPENDS ON RNG")};
}

}  // namespace
}  // namespace relml

int main(int argc, char** argv) {
  using namespace relml;
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "gradient suite", 60, gradient_suite},
      {2, "encoder invariance", 0, encoder_invariance},
      {3, "message-passing oracle", 0, message_passing_oracle},
      {4, "fusion and importance", 0, fusion_and_importance},
      {5, "slice oracle", 0, slice_oracle},
      {6, "dispatcher arithmetic", 0, dispatcher_arithmetic},
      {7, "augmentation lift", 300, augmentation_lift},
      {8, "ablation direction", 0, ablation_direction},
      {9, "overfit sanity", 0, overfit_sanity},
      {10, "determinism and persistence", 0, determinism_and_persistence},
      {11, "sampling leakage guard", 0, leakage_guard},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over time budget";
    }
    if (!o.pass) ++failures;
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
