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

#include "rest/cost.hpp"

namespace rest::cost {
namespace {

thread_local Collector* g_active = nullptr;

}  // namespace

Collector::Collector(bool dry_run) : dry_run_(dry_run), previous_(g_active) { g_active = this; }

Collector::~Collector() { g_active = previous_; }

Tally& Collector::current() {
  auto it = index_.find(path_);
  if (it == index_.end()) {
    it = index_.emplace(path_, entries_.size()).first;
    entries_.emplace_back(path_, Tally{});
  }
  return entries_[it->second].second;
}

Tally Collector::total() const {
  Tally t;
  for (const auto& [path, tally] : entries_) t += tally;
  return t;
}

Tally Collector::subtree(std::string_view path) const {
  Tally t;
  for (const auto& [p, tally] : entries_) {
    if (p == path || (p.size() > path.size() && p.compare(0, path.size(), path) == 0 &&
                      p[path.size()] == '.')) {
      t += tally;
    }
  }
  return t;
}

Scope::Scope(std::string_view name) : owner_(g_active) {
  if (owner_ == nullptr) return;
  restore_length_ = owner_->path_.size();
  if (!owner_->path_.empty()) owner_->path_ += '.';
  owner_->path_ += name;
}

Scope::~Scope() {
  if (owner_ != nullptr) owner_->path_.resize(restore_length_);
}

void add_macs(std::uint64_t count) {
  if (g_active != nullptr) g_active->current().macs += count;
}

void add_other(std::uint64_t count) {
  if (g_active != nullptr) g_active->current().other += count;
}

bool dry_run() noexcept { return g_active != nullptr && g_active->dry_run(); }

bool active() noexcept { return g_active != nullptr; }

}  // namespace rest::cost
