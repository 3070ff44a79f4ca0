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

#include "relml/dispatcher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "relml/training.hpp"

namespace relml {

using nlohmann::json;
namespace fs = std::filesystem;

std::string task_signature(const TaskProfile& task) {
  const std::string key = task.task_name + '\x1f' + task.target_table + '\x1f' + task.target_column + '\x1f' +
                          std::string(to_string(task.task_type));
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PerfRegistry PerfRegistry::load(const fs::path& path) {
  if (!fs::exists(path)) return {};
  std::ifstream in(path);
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kRegistry, "performance registry unreadable: " + std::string(ex.what()));
  }
}

void PerfRegistry::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

json PerfRegistry::to_json() const {
  json entries = json::array();
  for (const auto& e : entries_)
    entries.push_back({{"model_id", e.model_id}, {"task_sig", e.task_sig}, {"mu", e.mu}, {"count", e.count}});
  return {{"entries", entries}};
}

PerfRegistry PerfRegistry::from_json(const json& doc) {
  PerfRegistry r;
  for (const auto& e : doc.at("entries")) {
    RegistryEntry entry{e.at("model_id").get<std::string>(), e.at("task_sig").get<std::string>(),
                        e.at("mu").get<double>(), e.at("count").get<std::size_t>()};
    if (entry.count == 0) throw Error(ErrorKind::kRegistry, "registry entry with zero observations");
    if (entry.mu < 0.0 || entry.mu > 1.0) throw Error(ErrorKind::kRegistry, "registry mu outside [0, 1]");
    r.entries_.push_back(std::move(entry));
  }
  std::sort(r.entries_.begin(), r.entries_.end(), [](const auto& a, const auto& b) {
    return std::tie(a.model_id, a.task_sig) < std::tie(b.model_id, b.task_sig);
  });
  return r;
}

const RegistryEntry* PerfRegistry::find(const std::string& model_id, const std::string& task_sig) const {
  for (const auto& e : entries_)
    if (e.model_id == model_id && e.task_sig == task_sig) return &e;
  return nullptr;
}

const RegistryEntry& PerfRegistry::update_ema(const std::string& model_id, const std::string& task_sig, double score,
                                              double beta) {
  if (!(score >= 0.0 && score <= 1.0)) throw Error(ErrorKind::kInput, "EMA score must lie in [0, 1]");
  if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorKind::kInput, "EMA beta must lie in [0, 1)");
  for (auto& e : entries_) {
    if (e.model_id == model_id && e.task_sig == task_sig) {
      e.mu = beta * e.mu + (1.0 - beta) * score;
      ++e.count;
      return e;
    }
  }
  RegistryEntry entry{model_id, task_sig, score, 1};
  auto it = std::lower_bound(entries_.begin(), entries_.end(), entry, [](const auto& a, const auto& b) {
    return std::tie(a.model_id, a.task_sig) < std::tie(b.model_id, b.task_sig);
  });
  return *entries_.insert(it, std::move(entry));
}

// ---------------------------------------------------------------------------

double zcp_score(const BaseBundle& model, const Table& target, std::span<const std::size_t> rows,
                 std::span<const double> labels, TaskType type, std::uint64_t seed) {
  if (rows.size() != labels.size()) throw Error(ErrorKind::kScoring, "probe rows and labels differ in length");
  if (rows.size() < kMinProbeRows) {
    throw Error(ErrorKind::kScoring, "probe batch needs at least " + std::to_string(kMinProbeRows) + " labeled rows");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = rows.size() / 2;
  LabeledRows fit, holdout;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < half ? fit : holdout;
    dst.rows.push_back(rows[order[i]]);
    dst.labels.push_back(labels[order[i]]);
  }
  if (type == TaskType::kClassification) {
    auto single_class = [](const std::vector<double>& y) {
      return std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
    };
    if (single_class(fit.labels) || single_class(holdout.labels)) {
      throw Error(ErrorKind::kScoring, "probe batch is degenerate: one class only");
    }
  }

  BasePredictor predictor(clone(model), target, type);
  auto& params = predictor.params();
  params.set_trainable("", false);
  params.set_trainable("base.head", true);
  for (std::size_t step = 0; step < kProbeSteps; ++step) {
    const Tensor loss = task_loss(type, predictor.predict(fit.rows, rng), fit.labels);
    params.zero_grad();
    loss.backward();
    optimizer_step(params, 1e-2, 0.0);
  }
  try {
    return metric_score(type, evaluate(predictor, holdout, holdout.rows.size(), seed).metric);
  } catch (const Error& ex) {
    throw Error(ErrorKind::kScoring, std::string("probe scoring failed: ") + ex.what());
  }
}

std::string_view to_string(DispatchAction action) {
  return action == DispatchAction::kDeployBase ? "deploy_base" : "augment";
}

DispatchAction parse_dispatch_action(std::string_view text) {
  if (text == "deploy_base") return DispatchAction::kDeployBase;
  if (text == "augment") return DispatchAction::kAugment;
  throw Error(ErrorKind::kInput, "unknown dispatch action: " + std::string(text));
}

json Decision::to_json() const {
  return {{"selected", selected}, {"scores", scores},     {"failures", failures},
          {"s_star", s_star},     {"mu", mu},             {"mu_from_registry", mu_from_registry},
          {"epsilon", epsilon},   {"tau", tau},           {"action", to_string(action)}};
}

Decision Decision::from_json(const json& doc) {
  try {
    Decision d;
    d.selected = doc.at("selected").get<std::string>();
    d.scores = doc.at("scores").get<std::map<std::string, double>>();
    d.failures = doc.value("failures", std::map<std::string, std::string>{});
    d.s_star = doc.at("s_star").get<double>();
    d.mu = doc.at("mu").get<double>();
    d.mu_from_registry = doc.value("mu_from_registry", false);
    d.epsilon = doc.at("epsilon").get<double>();
    d.tau = doc.at("tau").get<double>();
    d.action = parse_dispatch_action(doc.at("action").get<std::string>());
    return d;
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kInput, "malformed decision document: " + std::string(ex.what()));
  }
}

Decision decide(const std::map<std::string, double>& scores, const PerfRegistry& registry, const std::string& task_sig,
                double epsilon, double prior) {
  if (scores.empty()) throw Error(ErrorKind::kDispatch, "no candidate scores");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw Error(ErrorKind::kConfig, "epsilon must lie in [0, 1)");
  Decision d;
  d.scores = scores;
  d.epsilon = epsilon;
  bool first = true;
  for (const auto& [id, s] : scores) {  // map order: ties keep the smallest id
    if (first || s > d.s_star) {
      d.selected = id;
      d.s_star = s;
      first = false;
    }
  }
  if (const auto* e = registry.find(d.selected, task_sig)) {
    d.mu = e->mu;
    d.mu_from_registry = true;
  } else {
    d.mu = prior;
  }
  d.tau = d.mu - epsilon * d.mu;  // (1 - epsilon) * mu
  d.action = d.s_star >= d.tau ? DispatchAction::kDeployBase : DispatchAction::kAugment;
  return d;
}

Decision dispatch(const ModelPool& pool, const PerfRegistry& registry, const TaskProfile& task, const Table& target,
                  std::span<const std::size_t> rows, std::span<const double> labels, double epsilon,
                  std::uint64_t seed, double prior) {
  if (pool.list().empty()) throw Error(ErrorKind::kDispatch, "model pool is empty");
  std::map<std::string, double> scores;
  std::map<std::string, std::string> failures;
  for (const auto& entry : pool.list()) {
    try {
      const auto bundle = pool.load_model(entry.id);
      if (bundle->target_table != task.target_table) {
        throw Error(ErrorKind::kScoring, "model targets table '" + bundle->target_table + "'");
      }
      scores[entry.id] = zcp_score(*bundle, target, rows, labels, task.task_type, seed);
    } catch (const Error& ex) {
      failures[entry.id] = ex.what();
    }
  }
  if (scores.empty()) {
    std::string msg = "every candidate failed to score";
    for (const auto& [id, why] : failures) msg += "; " + id + ": " + why;
    throw Error(ErrorKind::kDispatch, msg);
  }
  Decision d = decide(scores, registry, task_signature(task), epsilon, prior);
  d.failures = std::move(failures);
  return d;
}

}  // namespace relml
