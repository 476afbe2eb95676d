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
#include <string>
#include <string_view>
#include <vector>

#include "rest/attention.hpp"
#include "rest/cost.hpp"
#include "rest/model.hpp"
#include "rest/parameter.hpp"

namespace rest {

/// Module path of a parameter: its name without the last component.
std::string module_path(std::string_view parameter_name);

struct ParamCount {
  std::uint64_t learnable = 0;  // headline figure
  std::uint64_t buffers = 0;    // batch-norm running statistics
  /// (module path, learnable, buffers) in registration order.
  struct Row {
    std::string path;
    std::uint64_t learnable = 0;
    std::uint64_t buffers = 0;
  };
  std::vector<Row> rows;
};
ParamCount count_params(const ParameterSet& params);

struct FlopCount {
  std::uint64_t macs = 0;
  std::uint64_t other = 0;  // norms, activations, softmax, pooling, bias adds, residuals
  std::vector<std::pair<std::string, cost::Tally>> rows;  // per cost scope
};
/// Counts one batch-1 forward at h x w without doing the arithmetic.
FlopCount count_flops(const Model& model, std::size_t h, std::size_t w);

/// Counted attention MACs of one block grouped like the closed-form terms.
AttentionCostTerms attention_terms_from(const std::vector<std::pair<std::string, cost::Tally>>& rows,
                                        std::string_view attn_path);

struct StageFormula {
  std::size_t stage = 0;  // zero-based
  std::size_t n = 0, n_kv = 0, d_model = 0, heads = 0, reduction = 0;
  double msa_cost = 0, emsa_cost = 0;
  AttentionCostTerms formula;  // closed-form terms
  AttentionCostTerms counted;  // measured in the first block of the stage
  /// Formula terms the counter does not see, with the reason.
  std::vector<std::string> bookkeeping;
  /// Every term equals its counted value once bookkeeping is applied.
  bool reconciled = false;
};
StageFormula compare_formula(const Model& model, std::size_t stage, std::size_t h,
                             std::size_t w);

struct AuditRow {
  std::string path;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::string bucket;  // "mac", "other" or "buffer"
};

struct AuditReport {
  std::string variant;
  std::size_t height = 0, width = 0;
  std::uint64_t total_params = 0;
  std::uint64_t buffer_params = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t other_ops = 0;
  std::vector<AuditRow> rows;  // per-bucket sums equal the totals
  std::vector<StageFormula> formulas;

  std::string text_table() const;
  std::string csv() const;  // path,params,macs,bucket
};
AuditReport audit_model(const Model& model, std::size_t h, std::size_t w);

/// Published figures for the named variants.
struct ReferenceFigures {
  double params_millions = 0;
  double gmacs_224 = 0;
};
std::optional<ReferenceFigures> reference_figures(std::string_view variant);
inline constexpr double kParamTolerance = 0.02;
inline constexpr double kMacTolerance = 0.10;

inline double relative_deviation(double measured, double reference) {
  return (measured - reference) / reference;
}

}  // namespace rest
