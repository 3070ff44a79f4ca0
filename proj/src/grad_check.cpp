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

#include "relml/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace relml {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw Error(ErrorKind::kNumeric, "grad_check: function value is not finite");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double h) {
  for (auto p : params) p.zero_grad();
  const Tensor y = f();
  if (!std::isfinite(y.item())) throw Error(ErrorKind::kNumeric, "grad_check: function value is not finite");
  y.backward();

  double worst = 0.0;
  for (auto p : params) {
    const std::vector<double> analytic = p.grad();
    auto& data = p.mutable_data();
    double diff2 = 0.0, fd2 = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = evaluate(f);
      data[i] = saved - h;
      const double down = evaluate(f);
      data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      diff2 += (analytic[i] - fd) * (analytic[i] - fd);
      fd2 += fd * fd;
    }
    worst = std::max(worst, std::sqrt(diff2) / (std::sqrt(fd2) + 1e-8));
  }
  for (auto p : params) p.zero_grad();
  return worst;
}

}  // namespace relml
