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

#include <span>
#include <string>
#include <vector>

#include "relml/param_store.hpp"
#include "relml/tensor.hpp"

namespace relml {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]; undefined when the layer has no bias

  static Linear create(ParamStore& store, const std::string& prefix, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams create(ParamStore& store, const std::string& prefix, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

/// Per-head projections stacked column-wise: W_Q = [W_Q^(1) | ... | W_Q^(H)].
struct AttentionParams {
  Tensor wq, wk, wv;  // [d, H * d_h]
  Tensor wo;          // [H * d_h, d]
  std::size_t heads = 1;

  static AttentionParams create(ParamStore& store, const std::string& prefix, std::size_t d,
                                std::size_t heads, Rng& rng);
};

/// MSA(E) = Concat(Attn_1(E), ..., Attn_H(E)) W_O over each sequence in `offsets`.
/// `weights`, if given, receives per-sequence head-major attention matrices.
Tensor multi_head_attention(const Tensor& e, const AttentionParams& params,
                            std::span<const std::size_t> offsets,
                            std::vector<std::vector<double>>* weights = nullptr);

/// Single-sequence convenience overload.
Tensor multi_head_attention(const Tensor& e, const AttentionParams& params,
                            std::vector<std::vector<double>>* weights = nullptr);

/// Post-norm transformer block: H' = LN(E + MSA(E)); H = LN(H' + FFN(H')).
struct EncoderBlock {
  AttentionParams attention;
  LayerNormParams norm1;
  Linear ffn_in;
  Linear ffn_out;
  LayerNormParams norm2;
  Activation activation = Activation::kRelu;

  static EncoderBlock create(ParamStore& store, const std::string& prefix, std::size_t d,
                             std::size_t heads, std::size_t ffn_width, Activation act, Rng& rng);
  Tensor operator()(const Tensor& e, std::span<const std::size_t> offsets) const;
};

}  // namespace relml
