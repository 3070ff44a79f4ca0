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

#include "relml/error.hpp"

namespace relml {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kLoad: return "load";
    case ErrorKind::kProfile: return "profile";
    case ErrorKind::kEmptySlice: return "empty_slice";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kRegistry: return "registry";
    case ErrorKind::kScoring: return "scoring";
    case ErrorKind::kDispatch: return "dispatch";
    case ErrorKind::kMetric: return "metric";
    case ErrorKind::kNetwork: return "network";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

namespace {

std::string summarize(const std::vector<Violation>& violations) {
  std::string out = "validation failed:";
  for (const auto& v : violations) {
    out += " [" + v.path + "] " + v.message + ";";
  }
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<Violation> violations)
    : Error(ErrorKind::kValidation, summarize(violations)),
      violations_(std::move(violations)) {}

}  // namespace relml
