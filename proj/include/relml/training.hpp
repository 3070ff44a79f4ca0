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

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/base_models.hpp"
#include "relml/model.hpp"

namespace relml {

/// AUC-ROC as the Mann-Whitney statistic with average ranks for ties.
double auc_roc(std::span<const double> scores, std::span<const double> labels);
double mean_absolute_error(std::span<const double> preds, std::span<const double> targets);

/// Task metric on raw outputs: AUC on logits, MAE on values.
double task_metric(TaskType type, std::span<const double> preds, std::span<const double> labels);
/// Metric on a (0, 1] higher-is-better scale: AUC as is, MAE as 1 / (1 + MAE).
double metric_score(TaskType type, double metric);
/// True when `candidate` beats `best` by more than `min_delta`.
bool improves(TaskType type, double candidate, double best, double min_delta);
Tensor task_loss(TaskType type, const Tensor& preds, std::span<const double> labels);

struct TrainConfig {
  std::size_t batch_size = 256;
  double lr = 1e-2;
  std::size_t max_epochs = 500;
  std::optional<std::size_t> patience;  // 10 for regression, 5 for classification
  double weight_decay = 1e-2;
  double min_delta = 1e-5;
  std::uint64_t seed = 0;
  SamplingConfig sampling;

  std::size_t patience_for(TaskType type) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

inline constexpr double kLearningRateGrid[5] = {1e-3, 3e-3, 1e-2, 3e-2, 1e-1};

/// Target-table rows with their labels.
struct LabeledRows {
  std::vector<std::size_t> rows;
  std::vector<double> labels;
};

LabeledRows labeled_rows(std::span<const std::size_t> rows, const std::vector<std::optional<double>>& labels);

/// Anything trainable that maps target-table rows to raw outputs.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual ParamStore& params() = 0;
  virtual TaskType task_type() const = 0;
  /// Raw outputs [rows, 1]. `rng` drives neighbor sampling where applicable.
  virtual Tensor predict(std::span<const std::size_t> rows, Rng& rng) const = 0;
};

class DimePredictor : public Predictor {
 public:
  DimePredictor(std::unique_ptr<DimeModel> model, const GraphData& data, SamplingConfig sampling,
                std::optional<Timestamp> default_reference = std::nullopt);

  ParamStore& params() override { return model_->params; }
  TaskType task_type() const override { return model_->config.task_type; }
  Tensor predict(std::span<const std::size_t> rows, Rng& rng) const override;

  DimeModel& model() { return *model_; }
  const DimeModel& model() const { return *model_; }
  const GraphData& data() const { return data_; }
  const SamplingConfig& sampling() const { return sampling_; }
  /// Subgraph for target rows, as used by `predict`.
  Subgraph sample(std::span<const std::size_t> rows, Rng& rng) const;

 private:
  std::unique_ptr<DimeModel> model_;
  const GraphData& data_;
  SamplingConfig sampling_;
  std::optional<Timestamp> default_reference_;
};

class BasePredictor : public Predictor {
 public:
  BasePredictor(std::unique_ptr<BaseBundle> bundle, const Table& target, TaskType type);

  ParamStore& params() override { return bundle_->params; }
  TaskType task_type() const override { return type_; }
  Tensor predict(std::span<const std::size_t> rows, Rng& rng) const override;

  BaseBundle& bundle() { return *bundle_; }

 private:
  std::unique_ptr<BaseBundle> bundle_;
  EncodedTable data_;
  TaskType type_;
};

struct Evaluation {
  double metric = 0.0;
  double loss = 0.0;
  std::vector<double> predictions;
};

/// Batched inference with a fresh rng seeded by `seed`; no parameter changes.
Evaluation evaluate(const Predictor& predictor, const LabeledRows& rows, std::size_t batch_size, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_metric = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  double lr = 0.0;
};

/// Minibatch AdamW with per-epoch validation and early stopping; the
/// predictor ends holding its best-epoch parameters.
TrainResult train_task(Predictor& predictor, const LabeledRows& train, const LabeledRows& valid,
                       const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch = {});

struct GridResult {
  std::unique_ptr<Predictor> predictor;
  TrainResult result;
  std::vector<std::pair<double, double>> tried;  // (lr, best validation metric)
};

/// Trains one fresh predictor per learning rate and keeps the best on validation.
GridResult search_learning_rate(const std::function<std::unique_ptr<Predictor>()>& make, const LabeledRows& train,
                                const LabeledRows& valid, TrainConfig config, std::span<const double> grid);

// ---------------------------------------------------------------------------
// Self-supervised pretraining of the shared encoder and relation layers.

struct PretrainConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 64;
  double mask_rate = 0.15;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  SamplingConfig sampling;

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& doc);
};

struct PretrainResult {
  std::vector<double> losses;  // per step
};

/// Masked-attribute reconstruction: masked attribute embeddings are replaced
/// by a learned token and predicted from the message-passing output with a
/// cosine loss against the unmasked (detached) embeddings. Only "enc." and
/// "mp." parameters of `model` are updated.
PretrainResult pretrain_shared(DimeModel& model, std::span<const GraphData* const> corpus,
                               const PretrainConfig& config);

}  // namespace relml
