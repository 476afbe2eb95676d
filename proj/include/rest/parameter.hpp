// Copyright 2026 The ResT Kit Authors.
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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rest/tensor.hpp"

namespace rest {

/// Index of a parameter inside its ParameterSet.
struct ParamRef {
  std::size_t index = 0;
  friend bool operator==(ParamRef, ParamRef) = default;
};

enum class ParamKind {
  kLearnable,
  kBuffer,  // non-learned state such as batch-norm running statistics
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value, zero-initialized
  ParamKind kind = ParamKind::kLearnable;
};

/// Ordered, name-unique collection of parameters. References stay valid
/// across copies because they are plain indices.
class ParameterSet {
 public:
  ParamRef add(std::string name, Tensor value, ParamKind kind = ParamKind::kLearnable);

  Parameter& operator[](ParamRef ref) { return params_.at(ref.index); }
  const Parameter& operator[](ParamRef ref) const { return params_.at(ref.index); }

  std::optional<ParamRef> find(std::string_view name) const;
  std::size_t size() const noexcept { return params_.size(); }

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  void zero_grad();
  /// FNV-1a over names, shapes and value bytes.
  std::uint64_t checksum() const;

  /// Values converted to another precision, indexed like the set.
  template <typename T>
  std::vector<BasicTensor<T>> values_as() const {
    std::vector<BasicTensor<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value.template cast<T>());
    return out;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Rng = std::mt19937_64;

/// Samples N(0, std^2) truncated to [-2 std, 2 std] by rejection.
Tensor truncated_normal(const Shape& shape, double std, Rng& rng);
Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng);

}  // namespace rest
