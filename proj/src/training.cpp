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

#include "relml/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace relml {

using nlohmann::json;

double auc_roc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::kDimension, "auc_roc: score and label counts differ");
  const std::size_t n = scores.size();
  std::size_t positives = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw Error(ErrorKind::kMetric, "auc_roc: labels must be 0 or 1");
    if (std::isnan(y)) throw Error(ErrorKind::kMetric, "auc_roc: NaN label");
    positives += y == 1.0 ? 1 : 0;
  }
  for (double s : scores)
    if (std::isnan(s)) throw Error(ErrorKind::kMetric, "auc_roc: NaN score");
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw Error(ErrorKind::kMetric, "auc_roc needs both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1.0) rank_sum += rank;
    i = j;
  }
  const double p = static_cast<double>(positives), q = static_cast<double>(negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double mean_absolute_error(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw Error(ErrorKind::kDimension, "mae: length mismatch");
  if (preds.empty()) throw Error(ErrorKind::kMetric, "mae of an empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::abs(preds[i] - targets[i]);
  return total / static_cast<double>(preds.size());
}

double task_metric(TaskType type, std::span<const double> preds, std::span<const double> labels) {
  return type == TaskType::kClassification ? auc_roc(preds, labels) : mean_absolute_error(preds, labels);
}

double metric_score(TaskType type, double metric) {
  return type == TaskType::kClassification ? metric : 1.0 / (1.0 + metric);
}

bool improves(TaskType type, double candidate, double best, double min_delta) {
  return type == TaskType::kClassification ? candidate > best + min_delta : candidate < best - min_delta;
}

Tensor task_loss(TaskType type, const Tensor& preds, std::span<const double> labels) {
  return type == TaskType::kClassification ? bce_with_logits(preds, labels) : l1_loss(preds, labels);
}

std::size_t TrainConfig::patience_for(TaskType type) const {
  if (patience) return *patience;
  return type == TaskType::kRegression ? 10 : 5;
}

json TrainConfig::to_json() const {
  json doc = {{"batch_size", batch_size},
              {"lr", lr},
              {"max_epochs", max_epochs},
              {"weight_decay", weight_decay},
              {"min_delta", min_delta},
              {"seed", seed},
              {"fanout", sampling.fanout},
              {"sampling", to_string(sampling.strategy)}};
  if (patience) doc["patience"] = *patience;
  return doc;
}

TrainConfig TrainConfig::from_json(const json& doc) {
  TrainConfig c;
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.lr = doc.value("lr", c.lr);
  c.max_epochs = doc.value("max_epochs", c.max_epochs);
  if (doc.contains("patience") && !doc["patience"].is_null()) c.patience = doc["patience"].get<std::size_t>();
  c.weight_decay = doc.value("weight_decay", c.weight_decay);
  c.min_delta = doc.value("min_delta", c.min_delta);
  c.seed = doc.value("seed", c.seed);
  c.sampling.fanout = doc.value("fanout", c.sampling.fanout);
  c.sampling.strategy = parse_sampling_strategy(doc.value("sampling", std::string("uniform")));
  if (c.batch_size == 0) throw Error(ErrorKind::kConfig, "batch_size must be positive");
  if (!(c.lr > 0.0)) throw Error(ErrorKind::kConfig, "lr must be positive");
  if (c.patience && *c.patience == 0) throw Error(ErrorKind::kConfig, "patience must be at least 1");
  return c;
}

LabeledRows labeled_rows(std::span<const std::size_t> rows, const std::vector<std::optional<double>>& labels) {
  LabeledRows out;
  for (std::size_t r : rows) {
    if (r >= labels.size() || !labels[r]) continue;
    out.rows.push_back(r);
    out.labels.push_back(*labels[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------

DimePredictor::DimePredictor(std::unique_ptr<DimeModel> model, const GraphData& data, SamplingConfig sampling,
                             std::optional<Timestamp> default_reference)
    : model_(std::move(model)), data_(data), sampling_(std::move(sampling)), default_reference_(default_reference) {}

Subgraph DimePredictor::sample(std::span<const std::size_t> rows, Rng& rng) const {
  std::vector<std::size_t> seeds(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) seeds[i] = data_.graph.node_id(data_.target_type, rows[i]);
  return sample_subgraph(data_.graph, seeds, sampling_, rng, default_reference_);
}

Tensor DimePredictor::predict(std::span<const std::size_t> rows, Rng& rng) const {
  return forward(*model_, data_, sample(rows, rng)).prediction;
}

BasePredictor::BasePredictor(std::unique_ptr<BaseBundle> bundle, const Table& target, TaskType type)
    : bundle_(std::move(bundle)), type_(type) {
  data_ = encode_table(target, bundle_->features.tables.at(0), bundle_->features.base_year);
}

Tensor BasePredictor::predict(std::span<const std::size_t> rows, Rng&) const {
  return bundle_->model(bundle_->features, data_, rows).prediction;
}

Evaluation evaluate(const Predictor& predictor, const LabeledRows& rows, std::size_t batch_size, std::uint64_t seed) {
  if (rows.rows.empty()) throw Error(ErrorKind::kConfig, "nothing to evaluate");
  if (batch_size == 0) throw Error(ErrorKind::kConfig, "batch_size must be positive");
  NoGradGuard guard;
  Rng rng(seed);
  Evaluation ev;
  ev.predictions.reserve(rows.rows.size());
  for (std::size_t start = 0; start < rows.rows.size(); start += batch_size) {
    const std::size_t end = std::min(rows.rows.size(), start + batch_size);
    const auto out = predictor.predict(std::span(rows.rows).subspan(start, end - start), rng);
    ev.predictions.insert(ev.predictions.end(), out.data().begin(), out.data().end());
  }
  const auto type = predictor.task_type();
  ev.metric = task_metric(type, ev.predictions, rows.labels);
  ev.loss = task_loss(type, Tensor::column(ev.predictions), rows.labels).item();
  return ev;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"train_loss", train_loss}, {"valid_loss", valid_loss}, {"valid_metric", valid_metric}};
}

TrainResult train_task(Predictor& predictor, const LabeledRows& train, const LabeledRows& valid,
                       const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.rows.empty()) throw Error(ErrorKind::kConfig, "empty train split");
  if (valid.rows.empty()) throw Error(ErrorKind::kConfig, "empty validation split");
  if (config.batch_size == 0) throw Error(ErrorKind::kConfig, "batch_size must be positive");
  const TaskType type = predictor.task_type();
  const std::size_t patience = config.patience_for(type);
  if (patience == 0) throw Error(ErrorKind::kConfig, "patience must be at least 1");

  ParamStore& params = predictor.params();
  Rng rng(config.seed);
  const std::size_t n = train.rows.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.lr = config.lr;
  auto best = params.snapshot();
  std::size_t stale = 0;
  std::vector<std::size_t> rows;
  std::vector<double> labels;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      rows.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        rows.push_back(train.rows[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      const Tensor loss = task_loss(type, predictor.predict(rows, rng), labels);
      params.zero_grad();
      loss.backward();
      optimizer_step(params, config.lr, config.weight_decay);
      loss_sum += loss.item() * static_cast<double>(end - start);
    }
    const Evaluation ev = evaluate(predictor, valid, config.batch_size, config.seed + 1);
    const EpochRecord record{epoch, loss_sum / static_cast<double>(n), ev.loss, ev.metric};
    result.curve.push_back(record);
    if (on_epoch) on_epoch(record);
    if (epoch == 1 || improves(type, ev.metric, result.best_metric, config.min_delta)) {
      result.best_epoch = epoch;
      result.best_metric = ev.metric;
      best = params.snapshot();
      stale = 0;
    } else if (++stale >= patience) {
      break;
    }
  }
  params.restore(best);
  return result;
}

GridResult search_learning_rate(const std::function<std::unique_ptr<Predictor>()>& make, const LabeledRows& train,
                                const LabeledRows& valid, TrainConfig config, std::span<const double> grid) {
  if (grid.empty()) throw Error(ErrorKind::kConfig, "empty learning-rate grid");
  GridResult out;
  for (double lr : grid) {
    config.lr = lr;
    auto predictor = make();
    auto result = train_task(*predictor, train, valid, config);
    out.tried.emplace_back(lr, result.best_metric);
    if (!out.predictor || improves(predictor->task_type(), result.best_metric, out.result.best_metric, 0.0)) {
      out.predictor = std::move(predictor);
      out.result = std::move(result);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

json PretrainConfig::to_json() const {
  return {{"steps", steps},     {"batch_size", batch_size},   {"mask_rate", mask_rate},
          {"lr", lr},           {"seed", seed},               {"fanout", sampling.fanout},
          {"sampling", to_string(sampling.strategy)}};
}

PretrainConfig PretrainConfig::from_json(const json& doc) {
  PretrainConfig c;
  c.steps = doc.value("steps", c.steps);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.mask_rate = doc.value("mask_rate", c.mask_rate);
  c.lr = doc.value("lr", c.lr);
  c.seed = doc.value("seed", c.seed);
  c.sampling.fanout = doc.value("fanout", c.sampling.fanout);
  c.sampling.strategy = parse_sampling_strategy(doc.value("sampling", std::string("uniform")));
  return c;
}

PretrainResult pretrain_shared(DimeModel& model, std::span<const GraphData* const> corpus,
                               const PretrainConfig& config) {
  if (corpus.empty()) throw Error(ErrorKind::kConfig, "pretraining corpus is empty");
  if (config.mask_rate < 0.0 || config.mask_rate > 1.0) throw Error(ErrorKind::kConfig, "mask_rate must be in [0, 1]");
  if (config.batch_size == 0) throw Error(ErrorKind::kConfig, "batch_size must be positive");
  const std::size_t d = model.config.dim;

  Rng rng(config.seed);
  ParamStore head;
  std::vector<std::size_t> column_base;
  std::size_t columns = 0;
  for (const auto& t : model.features.tables) {
    column_base.push_back(columns);
    columns += t.columns.size();
  }
  const Tensor mask_token = head.add("pretrain.mask", init_normal(rng, 1, d));
  const Tensor queries = head.add("pretrain.query", init_normal(rng, columns, d));
  const Linear recon = Linear::create(head, "pretrain.recon", d, d, rng);

  // Only the shared components move.
  std::map<std::string, bool> saved;
  for (const auto& [name, e] : model.params.entries()) saved.emplace(name, e.trainable);
  for (const auto& [name, e] : saved) {
    const bool shared = name.rfind("enc.", 0) == 0 || name.rfind("mp.", 0) == 0;
    model.params.set_trainable(name, shared);
  }

  std::bernoulli_distribution coin(config.mask_rate);
  PretrainResult result;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const GraphData& g = *corpus[step % corpus.size()];
    const std::size_t n = g.graph.num_nodes();
    if (n == 0) throw Error(ErrorKind::kConfig, "pretraining graph has no nodes");
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    const std::size_t take = std::min(n, config.batch_size);
    for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rng() % (n - i)]);
    pool.resize(take);
    const Subgraph sg = sample_subgraph(g.graph, pool, config.sampling, rng);

    std::vector<std::size_t> masked_nodes, masked_columns;
    std::vector<Tensor> targets;
    const AttributeHook hook = [&](std::size_t type, std::span<const std::size_t> local, std::vector<Tensor>& attrs) {
      for (std::size_t c = 0; c < attrs.size(); ++c) {
        std::vector<double> keep(local.size(), 1.0), hit(local.size(), 0.0);
        std::vector<std::size_t> picked;
        for (std::size_t i = 0; i < local.size(); ++i) {
          if (!coin(rng)) continue;
          keep[i] = 0.0;
          hit[i] = 1.0;
          picked.push_back(i);
          masked_nodes.push_back(local[i]);
          masked_columns.push_back(column_base[type] + c);
        }
        if (picked.empty()) continue;
        targets.push_back(gather_rows(attrs[c].detach(), picked));
        attrs[c] = add(scale_rows(attrs[c], keep), mul(Tensor::column(std::move(hit)), mask_token));
      }
    };
    Tensor h = encode_nodes(model, g, sg, &hook);
    if (masked_nodes.empty()) {
      result.losses.push_back(0.0);
      continue;
    }
    const auto adjacency = sg.local_adjacency();
    for (const auto& layer : model.layers) {
      h = message_pass_layer(layer, h, adjacency, model.config.aggregator, model.config.activation,
                             model.config.mp_layer_norm);
    }
    const Tensor pred = recon(add(gather_rows(h, masked_nodes), gather_rows(queries, masked_columns)));
    const Tensor loss = sub(Tensor::scalar(1.0), mean_all(row_cosine(pred, concat_rows(targets))));
    model.params.zero_grad();
    head.zero_grad();
    loss.backward();
    optimizer_step(model.params, config.lr, 0.0);
    optimizer_step(head, config.lr, 0.0);
    result.losses.push_back(loss.item());
  }
  for (const auto& [name, trainable] : saved) model.params.set_trainable(name, trainable);
  return result;
}

}  // namespace relml
