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

#include "relml/layers.hpp"

namespace relml {

Linear Linear::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                      Rng& rng, bool with_bias) {
  Linear l;
  l.weight = store.add(prefix + ".weight", init_uniform_fan_in(rng, in, out));
  if (with_bias) {
    // Bias draws from the same fan-in bound as the weight.
    auto b = init_uniform_fan_in(rng, in, out);
    l.bias = store.add(prefix + ".bias", Tensor::from({1, out}, std::vector<double>(b.data().begin(), b.data().begin() + static_cast<std::ptrdiff_t>(out))));
  }
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

LayerNormParams LayerNormParams::create(ParamStore& store, const std::string& prefix, std::size_t width) {
  return {store.add(prefix + ".gain", Tensor::full({1, width}, 1.0)),
          store.add(prefix + ".bias", Tensor::zeros({1, width}))};
}

AttentionParams AttentionParams::create(ParamStore& store, const std::string& prefix, std::size_t d,
                                        std::size_t heads, Rng& rng) {
  if (heads == 0 || d % heads != 0) {
    throw Error(ErrorKind::kConfig, "attention: model dim " + std::to_string(d) +
                                        " not divisible by " + std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.wq = store.add(prefix + ".wq", init_uniform_fan_in(rng, d, d));
  p.wk = store.add(prefix + ".wk", init_uniform_fan_in(rng, d, d));
  p.wv = store.add(prefix + ".wv", init_uniform_fan_in(rng, d, d));
  p.wo = store.add(prefix + ".wo", init_uniform_fan_in(rng, d, d));
  return p;
}

Tensor multi_head_attention(const Tensor& e, const AttentionParams& params,
                            std::span<const std::size_t> offsets,
                            std::vector<std::vector<double>>* weights) {
  if (params.heads == 0 || params.wq.cols() % params.heads != 0) {
    throw Error(ErrorKind::kConfig, "multi_head_attention: projection width not divisible by head count");
  }
  auto q = matmul(e, params.wq);
  auto k = matmul(e, params.wk);
  auto v = matmul(e, params.wv);
  auto heads = sequence_attention(q, k, v, params.heads, offsets, weights);
  return matmul(heads, params.wo);
}

Tensor multi_head_attention(const Tensor& e, const AttentionParams& params,
                            std::vector<std::vector<double>>* weights) {
  const std::size_t offsets[2] = {0, e.rows()};
  return multi_head_attention(e, params, offsets, weights);
}

EncoderBlock EncoderBlock::create(ParamStore& store, const std::string& prefix, std::size_t d,
                                  std::size_t heads, std::size_t ffn_width, Activation act, Rng& rng) {
  EncoderBlock b;
  b.attention = AttentionParams::create(store, prefix + ".attn", d, heads, rng);
  b.norm1 = LayerNormParams::create(store, prefix + ".norm1", d);
  b.ffn_in = Linear::create(store, prefix + ".ffn_in", d, ffn_width, rng);
  b.ffn_out = Linear::create(store, prefix + ".ffn_out", ffn_width, d, rng);
  b.norm2 = LayerNormParams::create(store, prefix + ".norm2", d);
  b.activation = act;
  return b;
}

Tensor EncoderBlock::operator()(const Tensor& e, std::span<const std::size_t> offsets) const {
  auto h1 = norm1(add(e, multi_head_attention(e, attention, offsets)));
  auto ff = ffn_out(activate(ffn_in(h1), activation));
  return norm2(add(h1, ff));
}

}  // namespace relml
