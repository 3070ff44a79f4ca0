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

#include "relml/param_store.hpp"

#include <bit>
#include <cmath>
#include <fstream>

namespace relml {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'L', 'M', 'L', 'C', 'K', 'P'};

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw Error(ErrorKind::kIo, "checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

Tensor ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (entries_.count(name)) throw Error(ErrorKind::kConfig, "duplicate parameter '" + name + "'");
  auto param = Tensor::from(init.shape(), std::vector<double>(init.data().begin(), init.data().end()), true);
  ParamEntry e;
  e.value = param;
  e.trainable = trainable;
  if (trainable) {
    e.first_moment.assign(param.numel(), 0.0);
    e.second_moment.assign(param.numel(), 0.0);
  }
  entries_.emplace(name, std::move(e));
  return param;
}

const Tensor& ParamStore::get(const std::string& name) const { return entry(name).value; }

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorKind::kConfig, "unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) != 0) continue;
    e.trainable = trainable;
    if (trainable) {
      if (e.first_moment.empty()) {
        e.first_moment.assign(e.value.numel(), 0.0);
        e.second_moment.assign(e.value.numel(), 0.0);
      }
    } else {
      e.first_moment.clear();
      e.second_moment.clear();
    }
  }
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.value.zero_grad();
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.numel();
  return n;
}

std::size_t ParamStore::copy_values_from(const std::map<std::string, Tensor>& source,
                                         const std::string& source_prefix,
                                         const std::string& target_prefix) {
  std::size_t copied = 0;
  for (const auto& [name, tensor] : source) {
    if (name.rfind(source_prefix, 0) != 0) continue;
    const std::string target = target_prefix + name.substr(source_prefix.size());
    auto it = entries_.find(target);
    if (it == entries_.end()) continue;
    if (it->second.value.shape() != tensor.shape()) {
      throw Error(ErrorKind::kDimension, "parameter '" + target + "' shape mismatch on load");
    }
    auto& dst = it->second.value.mutable_data();
    std::copy(tensor.data().begin(), tensor.data().end(), dst.begin());
    ++copied;
  }
  return copied;
}

std::map<std::string, std::vector<double>> ParamStore::snapshot() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, e] : entries_) out[name] = std::vector<double>(e.value.data().begin(), e.value.data().end());
  return out;
}

void ParamStore::restore(const std::map<std::string, std::vector<double>>& values) {
  for (auto& [name, e] : entries_) {
    auto it = values.find(name);
    if (it == values.end()) continue;
    e.value.mutable_data() = it->second;
  }
}

void optimizer_step(ParamStore& store, double lr, double weight_decay, double beta1, double beta2,
                    double eps) {
  if (!(lr > 0.0)) throw Error(ErrorKind::kConfig, "optimizer_step: learning rate must be positive");
  ++store.step_;
  const double t = static_cast<double>(store.step_);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& [_, e] : store.entries_) {
    if (!e.trainable) continue;
    auto& p = e.value.mutable_data();
    const bool has_grad = e.value.has_grad();
    const std::vector<double>* g = has_grad ? &e.value.mutable_grad() : nullptr;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      e.first_moment[i] = beta1 * e.first_moment[i] + (1.0 - beta1) * gi;
      e.second_moment[i] = beta2 * e.second_moment[i] + (1.0 - beta2) * gi * gi;
      const double m_hat = e.first_moment[i] / bc1;
      const double v_hat = e.second_moment[i] / bc2;
      p[i] -= lr * weight_decay * p[i];
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

Tensor init_uniform_fan_in(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(fan_in * fan_out);
  for (auto& v : data) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(data));
}

Tensor init_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = dist(rng);
  return Tensor::from({rows, cols}, std::move(data));
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const nlohmann::json& manifest) {
  nlohmann::json full = manifest;
  full["format_version"] = kCheckpointFormatVersion;
  auto& index = full["parameters"] = nlohmann::json::array();
  for (const auto& [name, e] : store.entries()) {
    index.push_back({{"name", name}, {"shape", e.value.shape()}, {"trainable", e.trainable}});
  }
  const std::string text = full.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, e] : store.entries()) {
    for (double v : e.value.data()) write_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw Error(ErrorKind::kIo, "not a checkpoint file: " + path.string());
  }
  const std::uint64_t len = read_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorKind::kIo, "checkpoint manifest truncated");

  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kIo, std::string("checkpoint manifest is not JSON: ") + ex.what());
  }
  if (ck.manifest.value("format_version", 0) != kCheckpointFormatVersion) {
    throw Error(ErrorKind::kIo, "unsupported checkpoint format version");
  }
  for (const auto& p : ck.manifest.at("parameters")) {
    const auto name = p.at("name").get<std::string>();
    const auto shape = p.at("shape").get<Shape>();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(read_u64(in));
    ck.tensors.emplace(name, Tensor::from(shape, std::move(data)));
    ck.trainable[name] = p.value("trainable", true);
  }
  return ck;
}

}  // namespace relml
