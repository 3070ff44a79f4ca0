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
#include <span>

#include "relml/tensor.hpp"

namespace relml {

/// Compares autodiff gradients of a scalar function against central finite
/// differences (step `h`). For each parameter tensor the error is
/// ||autodiff - fd|| / (||fd|| + 1e-8); the maximum over tensors is returned.
double grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params, double h = 1e-5);

}  // namespace relml
