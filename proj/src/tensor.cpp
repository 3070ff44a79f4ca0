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

#include "relml/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>

namespace relml {

using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

thread_local bool g_grad_enabled = true;

using BackwardFn = std::function<void(TensorImpl&)>;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined()) throw Error(ErrorKind::kDimension, std::string(op) + ": undefined tensor");
  if (t.rank() != 2) {
    throw Error(ErrorKind::kDimension,
                std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      impl->requires_grad = true;
      impl->parents.reserve(inputs.size());
      for (const auto& in : inputs) impl->parents.push_back(in.impl());
      impl->backward = std::move(backward);
    }
  }
  return Tensor(std::move(impl));
}

// Grad buffer of parent `i`, or nullptr when that parent takes no gradient.
double* parent_grad(TensorImpl& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  require_matrix(a, name);
  require_matrix(b, name);
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  const std::size_t r = std::max(ar, br), c = std::max(ac, bc);
  auto ok = [](std::size_t d, std::size_t out) { return d == out || d == 1; };
  if (!ok(ar, r) || !ok(br, r) || !ok(ac, c) || !ok(bc, c)) {
    throw Error(ErrorKind::kDimension, std::string(name) + ": cannot broadcast " +
                                           shape_str(a.shape()) + " with " + shape_str(b.shape()));
  }
  auto ai = [=](std::size_t i, std::size_t j) { return (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j); };
  auto bi = [=](std::size_t i, std::size_t j) { return (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j); };
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double x = ad[ai(i, j)], y = bd[bi(i, j)];
      switch (op) {
        case BinOp::kAdd: out[i * c + j] = x + y; break;
        case BinOp::kSub: out[i * c + j] = x - y; break;
        case BinOp::kMul: out[i * c + j] = x * y; break;
      }
    }
  }
  return make_result({r, c}, std::move(out), {a, b}, [=](TensorImpl& self) {
    const auto& g = self.grad;
    const auto& xa = self.parents[0]->data;
    const auto& xb = self.parents[1]->data;
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double gi = g[i * c + j];
        const std::size_t ia = ai(i, j), ib = bi(i, j);
        switch (op) {
          case BinOp::kAdd:
            if (ga) ga[ia] += gi;
            if (gb) gb[ib] += gi;
            break;
          case BinOp::kSub:
            if (ga) ga[ia] += gi;
            if (gb) gb[ib] -= gi;
            break;
          case BinOp::kMul:
            if (ga) ga[ia] += gi * xb[ib];
            if (gb) gb[ib] += gi * xa[ia];
            break;
        }
      }
    }
  });
}

double apply_act(double x, Activation act) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

// Derivative expressed through input x and output y.
double act_grad(double x, double y, Activation act) {
  switch (act) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kSigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

double log_sigmoid(double x) {
  // log(sigmoid(x)) = -softplus(-x)
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorKind::kDimension, "tensor shape " + shape_str(shape) + " does not match " +
                                           std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1, 1}, {value}); }

Tensor Tensor::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return from({n, 1}, std::move(values));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return from({1, n}, std::move(values));
}

std::size_t Tensor::rows() const { return impl_->shape.empty() ? 1 : impl_->shape[0]; }

std::size_t Tensor::cols() const {
  return impl_->shape.size() < 2 ? 1 : impl_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorKind::kDimension, "item() on tensor of " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw Error(ErrorKind::kIndex, "tensor index out of range");
  return impl_->data[r * cols() + c];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::backward() const {
  if (numel() != 1) throw Error(ErrorKind::kDimension, "backward() needs a single-element tensor");
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor Tensor::detach() const { return from(shape(), impl_->data, false); }

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& x : out) x *= factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](TensorImpl& self) {
    double* ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += factor * self.grad[i];
  });
}

Tensor activate(const Tensor& x, Activation act) {
  if (act == Activation::kIdentity) return x;
  std::vector<double> out(x.numel());
  const auto& xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_act(xd[i], act);
  return make_result(x.shape(), std::move(out), {x}, [act](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    const auto& xin = self.parents[0]->data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * act_grad(xin[i], self.data[i], act);
    }
  });
}

Tensor relu(const Tensor& x) { return activate(x, Activation::kRelu); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw Error(ErrorKind::kDimension,
                "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
    const double* g = self.grad.data();
    const double* ad = self.parents[0]->data.data();
    const double* bd = self.parents[1]->data.data();
    if (double* ga = parent_grad(self, 0)) {
      // ga += g * b^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bd + p * n;
          const double* grow = g + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (double* gb = parent_grad(self, 1)) {
      // gb += a^T * g
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto& ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return make_result({c, r}, std::move(out), {a}, [r, c](TensorImpl& self) {
    double* ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor softmax(const Tensor& x, int axis) {
  require_matrix(x, "softmax");
  if (axis != 0 && axis != 1) throw Error(ErrorKind::kDimension, "softmax: axis must be 0 or 1");
  const std::size_t r = x.rows(), c = x.cols();
  const auto& xd = x.data();
  for (double v : xd) {
    if (std::isnan(v)) throw Error(ErrorKind::kNumeric, "softmax: NaN input");
  }
  // Walk "lines" along the softmax axis.
  const std::size_t lines = axis == 1 ? r : c;
  const std::size_t len = axis == 1 ? c : r;
  const std::size_t stride = axis == 1 ? 1 : c;
  auto base = [=](std::size_t line) { return axis == 1 ? line * c : line; };
  std::vector<double> out(r * c);
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t b0 = base(l);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xd[b0 + i * stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(xd[b0 + i * stride] - mx);
      out[b0 + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[b0 + i * stride] /= total;
  }
  return make_result({r, c}, std::move(out), {x}, [=](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t b0 = base(l);
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += g[b0 + i * stride] * y[b0 + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = b0 + i * stride;
        gx[idx] += y[idx] * (g[idx] - dot);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (c < 1) throw Error(ErrorKind::kDimension, "layer_norm: empty normalization axis");
  if (gain.numel() != c || bias.numel() != c) {
    throw Error(ErrorKind::kDimension, "layer_norm: gain/bias width must equal " + std::to_string(c));
  }
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  std::vector<double> normed(r * c), inv_std(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xd.data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      normed[i * c + j] = (row[j] - mean) * inv_std[i];
      out[i * c + j] = normed[i * c + j] * gd[j] + bd[j];
    }
  }
  return make_result({r, c}, std::move(out), {x, gain, bias},
                     [r, c, normed = std::move(normed), inv_std = std::move(inv_std)](TensorImpl& self) {
    const auto& g = self.grad;
    const auto& gd = self.parents[1]->data;
    double* gx = parent_grad(self, 0);
    double* gg = parent_grad(self, 1);
    double* gb = parent_grad(self, 2);
    std::vector<double> dn(c);
    for (std::size_t i = 0; i < r; ++i) {
      double sum_dn = 0.0, sum_dn_n = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double gij = g[i * c + j];
        if (gg) gg[j] += gij * normed[i * c + j];
        if (gb) gb[j] += gij;
        dn[j] = gij * gd[j];
        sum_dn += dn[j];
        sum_dn_n += dn[j] * normed[i * c + j];
      }
      if (gx) {
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) {
          gx[i * c + j] += inv_std[i] * (dn[j] - inv_c * sum_dn - normed[i * c + j] * inv_c * sum_dn_n);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  require_matrix(x, "gather_rows");
  const std::size_t r = x.rows(), c = x.cols(), n = index.size();
  std::vector<double> out(n * c);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= r) throw Error(ErrorKind::kIndex, "gather_rows: row index out of range");
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(index[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result({n, c}, std::move(out), {x}, [c, idx = std::move(idx)](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gx + idx[i] * c;
      const double* src = self.grad.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Tensor scatter_add_rows(const Tensor& x, std::span<const std::size_t> index, std::size_t out_rows) {
  require_matrix(x, "scatter_add_rows");
  const std::size_t c = x.cols();
  if (index.size() != x.rows()) {
    throw Error(ErrorKind::kDimension, "scatter_add_rows: index length must equal row count");
  }
  std::vector<double> out(out_rows * c, 0.0);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= out_rows) throw Error(ErrorKind::kIndex, "scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out[index[i] * c + j] += xd[i * c + j];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result({out_rows, c}, std::move(out), {x}, [c, idx = std::move(idx)](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[idx[i] * c + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorKind::kDimension, "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != c) throw Error(ErrorKind::kDimension, "concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result({total, c}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets)](TensorImpl& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      double* gp = parent_grad(self, k);
      if (!gp) continue;
      const std::size_t n = self.parents[k]->data.size();
      for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[offsets[k] + i];
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw Error(ErrorKind::kDimension, "concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> col_offsets, widths;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != r) throw Error(ErrorKind::kDimension, "concat_cols: row counts differ");
    col_offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pd = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + col_offsets[k]));
  }
  return make_result({r, total}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                     [r, total, col_offsets = std::move(col_offsets), widths = std::move(widths)](TensorImpl& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      double* gp = parent_grad(self, k);
      if (!gp) continue;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j)
          gp[i * widths[k] + j] += self.grad[i * total + col_offsets[k] + j];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (begin > end || end > c) throw Error(ErrorKind::kIndex, "slice_cols: bad column range");
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  const auto& xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xd[i * c + begin + j];
  return make_result({r, w}, std::move(out), {x}, [=](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += self.grad[i * w + j];
  });
}

Tensor scale_rows(const Tensor& x, std::span<const double> factors) {
  require_matrix(x, "scale_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (factors.size() != r) throw Error(ErrorKind::kDimension, "scale_rows: one factor per row required");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= factors[i];
  std::vector<double> f(factors.begin(), factors.end());
  return make_result({r, c}, std::move(out), {x}, [r, c, f = std::move(f)](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += f[i] * self.grad[i * c + j];
  });
}

Tensor segment_aggregate(const Tensor& values, std::span<const std::size_t> segment_ids,
                         std::size_t num_segments, Aggregator agg) {
  require_matrix(values, "segment_aggregate");
  const std::size_t n = values.rows(), c = values.cols();
  if (segment_ids.size() != n) {
    throw Error(ErrorKind::kDimension, "segment_aggregate: one segment id per row required");
  }
  std::vector<std::size_t> counts(num_segments, 0);
  for (std::size_t s : segment_ids) {
    if (s >= num_segments) throw Error(ErrorKind::kIndex, "segment_aggregate: segment id out of range");
    ++counts[s];
  }
  const auto& vd = values.data();
  std::vector<double> out(num_segments * c, 0.0);
  // For min/max: source row selected per (segment, column).
  std::vector<std::size_t> arg;
  if (agg == Aggregator::kMax || agg == Aggregator::kMin) {
    arg.assign(num_segments * c, n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t s = segment_ids[i];
      for (std::size_t j = 0; j < c; ++j) {
        std::size_t& a = arg[s * c + j];
        const double v = vd[i * c + j];
        if (a == n || (agg == Aggregator::kMax ? v > vd[a * c + j] : v < vd[a * c + j])) a = i;
      }
    }
    for (std::size_t s = 0; s < num_segments; ++s)
      for (std::size_t j = 0; j < c; ++j)
        if (arg[s * c + j] != n) out[s * c + j] = vd[arg[s * c + j] * c + j];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t s = segment_ids[i];
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += vd[i * c + j];
    }
    if (agg == Aggregator::kMean) {
      for (std::size_t s = 0; s < num_segments; ++s)
        if (counts[s] > 0)
          for (std::size_t j = 0; j < c; ++j) out[s * c + j] /= static_cast<double>(counts[s]);
    }
  }
  std::vector<std::size_t> seg(segment_ids.begin(), segment_ids.end());
  return make_result({num_segments, c}, std::move(out), {values},
                     [n, c, agg, seg = std::move(seg), counts = std::move(counts), arg = std::move(arg)](TensorImpl& self) {
    double* gv = parent_grad(self, 0);
    const auto& g = self.grad;
    if (agg == Aggregator::kMax || agg == Aggregator::kMin) {
      for (std::size_t k = 0; k < arg.size(); ++k)
        if (arg[k] != n) gv[arg[k] * c + k % c] += g[k];
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t s = seg[i];
      const double w = agg == Aggregator::kMean ? 1.0 / static_cast<double>(counts[s]) : 1.0;
      for (std::size_t j = 0; j < c; ++j) gv[i * c + j] += w * g[s * c + j];
    }
  });
}

Tensor sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1, 1}, {total}, {x}, [](TensorImpl& self) {
    double* gx = parent_grad(self, 0);
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean_all(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw Error(ErrorKind::kDimension, "mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

Tensor row_cosine(const Tensor& a, const Tensor& b) {
  require_matrix(a, "row_cosine");
  require_matrix(b, "row_cosine");
  if (a.shape() != b.shape()) throw Error(ErrorKind::kDimension, "row_cosine: shapes differ");
  const std::size_t r = a.rows(), c = a.cols();
  constexpr double kEps = 1e-12;
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> na(r), nb(r), out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      dot += ad[i * c + j] * bd[i * c + j];
      sa += ad[i * c + j] * ad[i * c + j];
      sb += bd[i * c + j] * bd[i * c + j];
    }
    na[i] = std::sqrt(sa) + kEps;
    nb[i] = std::sqrt(sb) + kEps;
    out[i] = dot / (na[i] * nb[i]);
  }
  return make_result({r, 1}, std::move(out), {a, b},
                     [r, c, na = std::move(na), nb = std::move(nb)](TensorImpl& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < r; ++i) {
      const double g = self.grad[i], cosv = self.data[i];
      for (std::size_t j = 0; j < c; ++j) {
        const double x = ad[i * c + j], y = bd[i * c + j];
        // d cos / dx = y/(|x||y|) - cos * x/|x|^2 (eps treated as constant)
        if (ga) ga[i * c + j] += g * (y / (na[i] * nb[i]) - cosv * x / (na[i] * na[i]));
        if (gb) gb[i * c + j] += g * (x / (na[i] * nb[i]) - cosv * y / (nb[i] * nb[i]));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Attention

Tensor sequence_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                          std::span<const std::size_t> offsets,
                          std::vector<std::vector<double>>* weights) {
  require_matrix(q, "sequence_attention");
  require_matrix(k, "sequence_attention");
  require_matrix(v, "sequence_attention");
  const std::size_t n = q.rows(), width = q.cols();
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw Error(ErrorKind::kDimension, "sequence_attention: q, k, v shapes differ");
  }
  if (heads == 0 || width % heads != 0) {
    throw Error(ErrorKind::kConfig, "sequence_attention: width " + std::to_string(width) +
                                        " not divisible by " + std::to_string(heads) + " heads");
  }
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != n) {
    throw Error(ErrorKind::kDimension, "sequence_attention: offsets must span all rows");
  }
  const std::size_t dh = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t num_seq = offsets.size() - 1;
  const auto& qd = q.data();
  const auto& kd = k.data();
  const auto& vd = v.data();

  // probs[s] holds heads blocks of len x len.
  std::vector<std::vector<double>> probs(num_seq);
  std::vector<double> out(n * width, 0.0);
  for (std::size_t s = 0; s < num_seq; ++s) {
    const std::size_t b0 = offsets[s], len = offsets[s + 1] - offsets[s];
    if (offsets[s + 1] < offsets[s]) throw Error(ErrorKind::kDimension, "sequence_attention: offsets decrease");
    auto& p = probs[s];
    p.assign(heads * len * len, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      double* ph = p.data() + h * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          double dot = 0.0;
          for (std::size_t t = 0; t < dh; ++t) dot += qd[(b0 + i) * width + c0 + t] * kd[(b0 + j) * width + c0 + t];
          ph[i * len + j] = dot * inv_sqrt;
          mx = std::max(mx, ph[i * len + j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          ph[i * len + j] = std::exp(ph[i * len + j] - mx);
          total += ph[i * len + j];
        }
        for (std::size_t j = 0; j < len; ++j) {
          ph[i * len + j] /= total;
          const double w = ph[i * len + j];
          for (std::size_t t = 0; t < dh; ++t) out[(b0 + i) * width + c0 + t] += w * vd[(b0 + j) * width + c0 + t];
        }
      }
    }
  }
  if (weights) *weights = probs;

  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return make_result({n, width}, std::move(out), {q, k, v},
                     [=, probs = std::move(probs), offs = std::move(offs)](TensorImpl& self) {
    const auto& qd = self.parents[0]->data;
    const auto& kd = self.parents[1]->data;
    const auto& vd = self.parents[2]->data;
    double* gq = parent_grad(self, 0);
    double* gk = parent_grad(self, 1);
    double* gv = parent_grad(self, 2);
    const auto& g = self.grad;
    std::vector<double> dp;
    for (std::size_t s = 0; s + 1 < offs.size(); ++s) {
      const std::size_t b0 = offs[s], len = offs[s + 1] - offs[s];
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        const double* ph = probs[s].data() + h * len * len;
        dp.assign(len * len, 0.0);
        for (std::size_t i = 0; i < len; ++i) {
          for (std::size_t j = 0; j < len; ++j) {
            double dot = 0.0;
            for (std::size_t t = 0; t < dh; ++t) {
              const double go = g[(b0 + i) * width + c0 + t];
              dot += go * vd[(b0 + j) * width + c0 + t];
              if (gv) gv[(b0 + j) * width + c0 + t] += ph[i * len + j] * go;
            }
            dp[i * len + j] = dot;
          }
        }
        for (std::size_t i = 0; i < len; ++i) {
          double row_dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) row_dot += dp[i * len + j] * ph[i * len + j];
          for (std::size_t j = 0; j < len; ++j) {
            const double ds = ph[i * len + j] * (dp[i * len + j] - row_dot) * inv_sqrt;
            if (ds == 0.0) continue;
            for (std::size_t t = 0; t < dh; ++t) {
              if (gq) gq[(b0 + i) * width + c0 + t] += ds * kd[(b0 + j) * width + c0 + t];
              if (gk) gk[(b0 + j) * width + c0 + t] += ds * qd[(b0 + i) * width + c0 + t];
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
  const std::size_t n = logits.numel();
  if (labels.size() != n) throw Error(ErrorKind::kDimension, "bce_with_logits: label count mismatch");
  if (n == 0) throw Error(ErrorKind::kDimension, "bce_with_logits: empty batch");
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw Error(ErrorKind::kInput, "bce_with_logits: labels must be 0 or 1");
  }
  const auto& z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total -= labels[i] * log_sigmoid(z[i]) + (1.0 - labels[i]) * log_sigmoid(-z[i]);
  }
  std::vector<double> y(labels.begin(), labels.end());
  return make_result({1, 1}, {total / static_cast<double>(n)}, {logits}, [n, y = std::move(y)](TensorImpl& self) {
    double* gz = parent_grad(self, 0);
    const auto& z = self.parents[0]->data;
    const double scale = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-z[i]));
      gz[i] += scale * (sig - y[i]);
    }
  });
}

Tensor l1_loss(const Tensor& preds, std::span<const double> targets) {
  const std::size_t n = preds.numel();
  if (targets.size() != n) throw Error(ErrorKind::kDimension, "l1_loss: target count mismatch");
  if (n == 0) throw Error(ErrorKind::kDimension, "l1_loss: empty batch");
  const auto& p = preds.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::abs(p[i] - targets[i]);
  std::vector<double> t(targets.begin(), targets.end());
  return make_result({1, 1}, {total / static_cast<double>(n)}, {preds}, [n, t = std::move(t)](TensorImpl& self) {
    double* gp = parent_grad(self, 0);
    const auto& p = self.parents[0]->data;
    const double scale = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = p[i] - t[i];
      gp[i] += d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
    }
  });
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(std::string_view text) {
  if (text == "identity") return Activation::kIdentity;
  if (text == "relu") return Activation::kRelu;
  if (text == "tanh") return Activation::kTanh;
  if (text == "sigmoid") return Activation::kSigmoid;
  throw Error(ErrorKind::kConfig, "unknown activation '" + std::string(text) + "'");
}

std::string_view to_string(Aggregator agg) {
  switch (agg) {
    case Aggregator::kMax: return "max";
    case Aggregator::kMin: return "min";
    case Aggregator::kSum: return "sum";
    case Aggregator::kMean: return "mean";
  }
  return "sum";
}

Aggregator parse_aggregator(std::string_view text) {
  if (text == "max") return Aggregator::kMax;
  if (text == "min") return Aggregator::kMin;
  if (text == "sum") return Aggregator::kSum;
  if (text == "mean") return Aggregator::kMean;
  throw Error(ErrorKind::kConfig, "unknown aggregator '" + std::string(text) + "'");
}

}  // namespace relml
