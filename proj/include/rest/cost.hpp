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

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rest::cost {

/// Work recorded under one layer path. `macs` holds multiply-accumulates
/// (convolutions, linear maps, matrix products); `other` holds elementwise
/// work such as normalization, activation, softmax and pooling.
struct Tally {
  std::uint64_t macs = 0;
  std::uint64_t other = 0;

  Tally& operator+=(const Tally& rhs) {
    macs += rhs.macs;
    other += rhs.other;
    return *this;
  }
};

/// Records kernel work for the current thread while alive. Collectors nest;
/// the innermost one receives the counts.
///
/// In dry-run mode kernels validate shapes and report their cost but skip
/// the arithmetic and return zero-filled results, so whole-model audits cost
/// little more than the allocations.
class Collector {
 public:
  explicit Collector(bool dry_run = false);
  ~Collector();
  Collector(const Collector&) = delete;
  Collector& operator=(const Collector&) = delete;

  bool dry_run() const noexcept { return dry_run_; }

  /// Per-path tallies in first-seen order.
  const std::vector<std::pair<std::string, Tally>>& entries() const noexcept { return entries_; }
  Tally total() const;
  /// Sum over `path` and every path nested below it.
  Tally subtree(std::string_view path) const;

 private:
  friend class Scope;
  friend void add_macs(std::uint64_t);
  friend void add_other(std::uint64_t);

  Tally& current();

  bool dry_run_;
  Collector* previous_;
  std::string path_;
  std::vector<std::pair<std::string, Tally>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Appends a path component for the lifetime of the object. No-op when no
/// collector is active.
class Scope {
 public:
  explicit Scope(std::string_view name);
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  Collector* owner_;
  std::size_t restore_length_ = 0;
};

void add_macs(std::uint64_t count);
void add_other(std::uint64_t count);
bool dry_run() noexcept;
bool active() noexcept;

}  // namespace rest::cost
