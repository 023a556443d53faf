// Copyright 2026 The molspace Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "molspace/autodiff.hpp"
#include "molspace/rng.hpp"
#include "molspace/tensor.hpp"

namespace molspace {

/// Ordered collection of named parameter tensors.
class ParamStore {
 public:
  /// Adds a tensor; names must be unique.
  ad::Tensor& add(std::string name, ad::Tensor value);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  ad::Tensor& at(std::string_view name);
  const ad::Tensor& at(std::string_view name) const;

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  ad::Tensor& value(std::size_t i) { return values_[i]; }
  const ad::Tensor& value(std::size_t i) const { return values_[i]; }

  std::size_t total_elements() const;
  bool operator==(const ParamStore& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

  /// Copies every tensor whose name starts with `prefix` into a new store, with
  /// the prefix stripped.
  ParamStore extract(std::string_view prefix) const;
  /// Adds every tensor of `other` under `prefix`.
  void merge(const ParamStore& other, std::string_view prefix);

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters registered on one tape, looked up by name.
class BoundParams {
 public:
  /// `trainable = false` registers every tensor as a constant.
  BoundParams(ad::Tape& tape, const ParamStore& store, bool trainable);
  /// Uses already-registered vars (one per store entry, store order), e.g.
  /// the inputs handed to a gradient check.
  BoundParams(const ParamStore& store, std::vector<ad::Var> vars);

  ad::Var operator[](std::string_view name) const;
  ad::Var var(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }
  const ParamStore& store() const { return *store_; }

  /// Gradients in store order, after tape.backward().
  std::vector<ad::Tensor> grads() const;

 private:
  ad::Tape* tape_;
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction; one moment pair per parameter tensor.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParamStore& params, const std::vector<ad::Tensor>& grads);

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<ad::Tensor> m_;
  std::vector<ad::Tensor> v_;
};

// Checkpoint file:
//   "CKPT" | version u32 LE | count u32 LE |
//   per tensor: name_len u16 LE | name bytes | rank u8 | dims u32 LE each | f64 LE payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                             const std::string& origin = "<memory>");
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Tensor of i.i.d. normal draws with the given standard deviation.
ad::Tensor random_normal(const ad::Shape& shape, double stddev, Rng& rng);

}  // namespace molspace
