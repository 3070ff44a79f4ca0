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

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "relml/error.hpp"

namespace relml {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// Tensors are shared handles: copying a Tensor aliases the same storage.
/// Every operation returns a fresh tensor; only the optimizer and checkpoint
/// loader write into existing storage (through `mutable_data`).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);
  /// Column vector of shape [n, 1].
  static Tensor column(std::vector<double> values);
  /// Row vector of shape [1, n].
  static Tensor row(std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return impl_->requires_grad; }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::vector<double> grad() const;
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() { impl_->grad.clear(); }

  /// Backpropagate from a single-element tensor.
  void backward() const;

  /// Same values, cut from the autodiff graph.
  Tensor detach() const;

  std::vector<double>& mutable_data() { return impl_->data; }
  std::vector<double>& mutable_grad() { return impl_->grad_buffer(); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Thread-local switch; when disabled, ops build no autodiff graph.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };
enum class Aggregator { kMax, kMin, kSum, kMean };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view text);
std::string_view to_string(Aggregator agg);
Aggregator parse_aggregator(std::string_view text);

// Elementwise binary ops broadcast size-1 dimensions of rank-2 operands.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor activate(const Tensor& x, Activation act);
Tensor relu(const Tensor& x);

/// Softmax along axis 0 (columns) or 1 (rows); max-subtracted.
Tensor softmax(const Tensor& x, int axis = 1);

/// Row-wise normalization with population variance, then gain/bias ([1, n]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
/// out[index[i]] += x[i]; output has `out_rows` rows.
Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t out_rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Multiplies row i by the constant factors[i].
Tensor scale_rows(const Tensor& x, std::span<const double> factors);

/// Per-segment reduction of rows. Empty segments produce zero rows.
Tensor segment_aggregate(const Tensor& values, std::span<const std::size_t> segment_ids,
                         std::size_t num_segments, Aggregator agg);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Cosine similarity of matching rows, shape [n, 1].
Tensor row_cosine(const Tensor& a, const Tensor& b);

/// Scaled dot-product attention over variable-length sequences.
///
/// `q`, `k`, `v` are [N, heads * head_dim]; sequence s spans rows
/// [offsets[s], offsets[s+1]). Each head attends within its own column block.
/// When `weights` is non-null it receives, per sequence, the row-major
/// [len, len] attention matrix of every head (head-major).
Tensor sequence_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                          std::span<const std::size_t> offsets,
                          std::vector<std::vector<double>>* weights = nullptr);

/// Mean binary cross-entropy on raw logits [n, 1].
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);
/// Mean absolute error [n, 1] vs targets.
Tensor l1_loss(const Tensor& preds, std::span<const double> targets);

}  // namespace relml
