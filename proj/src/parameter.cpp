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

#include "rest/parameter.hpp"

#include <cstring>
#include <stdexcept>

namespace rest {

ParamRef ParameterSet::add(std::string name, Tensor value, ParamKind kind) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const ParamRef ref{params_.size()};
  index_.emplace(name, ref.index);
  Tensor grad(value.shape());
  params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad), kind});
  return ref;
}

std::optional<ParamRef> ParameterSet::find(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return ParamRef{it->second};
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    for (std::size_t e : p.value.shape()) mix(&e, sizeof e);
    mix(p.value.data(), p.value.size() * sizeof(double));
  }
  return h;
}

Tensor truncated_normal(const Shape& shape, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor t(shape);
  for (double& v : t.values()) {
    double x = dist(rng);
    while (x < -2.0 * std || x > 2.0 * std) x = dist(rng);
    v = x;
  }
  return t;
}

Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace rest
