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

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "relml/tensor.hpp"

namespace relml {

using Rng = std::mt19937_64;

struct ParamEntry {
  Tensor value;
  bool trainable = true;
  // Adam moments; empty for frozen parameters.
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

/// Named parameter tensors with AdamW state. Names are ordered lexicographically.
class ParamStore {
 public:
  /// Registers a parameter; the returned handle aliases the stored tensor.
  Tensor add(const std::string& name, Tensor init, bool trainable = true);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  const ParamEntry& entry(const std::string& name) const;
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }

  /// Marks every parameter whose name starts with `prefix`. Freezing drops the moments.
  void set_trainable(const std::string& prefix, bool trainable);

  void zero_grad();
  std::int64_t step_count() const { return step_; }
  std::size_t total_size() const;

  /// Copies values (not handles) from `source` for every name present in both.
  /// Returns the number of tensors copied. Shapes must agree.
  std::size_t copy_values_from(const std::map<std::string, Tensor>& source,
                               const std::string& source_prefix = "",
                               const std::string& target_prefix = "");

  std::map<std::string, std::vector<double>> snapshot() const;
  void restore(const std::map<std::string, std::vector<double>>& values);

  friend void optimizer_step(ParamStore& store, double lr, double weight_decay, double beta1,
                             double beta2, double eps);

 private:
  std::map<std::string, ParamEntry> entries_;
  std::int64_t step_ = 0;
};

struct AdamWConfig {
  double lr = 1e-2;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update over all trainable parameters using
/// their accumulated gradients. Parameters without a gradient count as zero-gradient.
void optimizer_step(ParamStore& store, double lr, double weight_decay, double beta1 = 0.9,
                    double beta2 = 0.999, double eps = 1e-8);
inline void optimizer_step(ParamStore& store, const AdamWConfig& cfg) {
  optimizer_step(store, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
}

// Initializers.
Tensor init_uniform_fan_in(Rng& rng, std::size_t fan_in, std::size_t fan_out);
Tensor init_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 0.02);

// Checkpoint archive: magic, manifest JSON, then little-endian float64 payloads.
struct Checkpoint {
  nlohmann::json manifest;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, bool> trainable;
};

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const nlohmann::json& manifest);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace relml
