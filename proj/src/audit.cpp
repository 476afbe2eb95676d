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

#include "rest/audit.hpp"

#include <array>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_map>

namespace rest {

std::string module_path(std::string_view parameter_name) {
  const auto dot = parameter_name.rfind('.');
  return std::string(dot == std::string_view::npos ? parameter_name
                                                   : parameter_name.substr(0, dot));
}

ParamCount count_params(const ParameterSet& params) {
  ParamCount out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& p : params) {
    const std::string path = module_path(p.name);
    auto [it, inserted] = index.emplace(path, out.rows.size());
    if (inserted) out.rows.push_back({path, 0, 0});
    auto& row = out.rows[it->second];
    const std::uint64_t n = p.value.size();
    if (p.kind == ParamKind::kBuffer) {
      row.buffers += n;
      out.buffers += n;
    } else {
      row.learnable += n;
      out.learnable += n;
    }
  }
  return out;
}

FlopCount count_flops(const Model& model, std::size_t h, std::size_t w) {
  stage_geometry(model.config, h, w);  // reject bad geometry before allocating
  FlopCount out;
  {
    cost::Collector collector(/*dry_run=*/true);
    const Tensor image({1, 3, h, w});
    model_forward(model, image);
    out.rows = collector.entries();
  }
  for (const auto& [path, tally] : out.rows) {
    out.macs += tally.macs;
    out.other += tally.other;
  }
  return out;
}

AttentionCostTerms attention_terms_from(const std::vector<std::pair<std::string, cost::Tally>>& rows,
                                        std::string_view attn_path) {
  auto macs = [&](std::string_view leaf) {
    const std::string path = std::string(attn_path) + "." + std::string(leaf);
    std::uint64_t total = 0;
    for (const auto& [p, tally] : rows) {
      if (p == path || (p.size() > path.size() && p.compare(0, path.size(), path) == 0 &&
                        p[path.size()] == '.')) {
        total += tally.macs;
      }
    }
    return static_cast<double>(total);
  };
  AttentionCostTerms t;
  t.attention_products = macs("qk") + macs("av");
  t.projections = macs("q") + macs("k") + macs("v") + macs("proj");
  t.reduction = macs("sr");
  t.head_mixing = macs("head_conv");
  return t;
}

namespace {

StageFormula formula_from(const Model& model, std::size_t stage, std::size_t h, std::size_t w,
                          const FlopCount& count) {
  if (stage >= model.stages.size()) {
    throw std::invalid_argument("stage index " + std::to_string(stage + 1) + " out of range 1.." +
                                std::to_string(model.stages.size()));
  }
  const auto geometry = stage_geometry(model.config, h, w);
  const StageParams& st = model.stages[stage];
  const AttentionConfig& attn = st.blocks.front().attention;
  StageFormula f;
  f.stage = stage;
  f.n = geometry[stage][0] * geometry[stage][1];
  f.reduction = attn.reduction;
  f.n_kv = f.n / (f.reduction * f.reduction);
  f.d_model = attn.d_model;
  f.heads = attn.heads;
  const double n = static_cast<double>(f.n);
  const double d = static_cast<double>(f.d_model);
  const double s = static_cast<double>(f.reduction);
  const double k = static_cast<double>(f.heads);
  f.msa_cost = msa_cost(n, d);
  f.emsa_cost = emsa_cost(n, d, s, k);
  f.formula = emsa_cost_terms(n, d, s, k);

  f.counted = attention_terms_from(
      count.rows, "stage" + std::to_string(stage + 1) + ".block0.attn");

  AttentionCostTerms expected = f.formula;
  if (attn.effective_reduction() != ReductionKind::kDepthwiseConv) {
    f.bookkeeping.push_back(
        "reduction term d*n*(s+1)^2/s^2 = " + std::to_string(expected.reduction) +
        " not counted: the " + std::string(to_string(attn.effective_reduction())) +
        " reduction performs no multiply-accumulates");
    expected.reduction = 0;
  }
  if (!attn.use_head_conv) {
    f.bookkeeping.push_back("head mixing term k^2*n^2/s^2 = " +
                            std::to_string(expected.head_mixing) +
                            " not counted: head convolution disabled");
    expected.head_mixing = 0;
  }
  f.bookkeeping.push_back(
      "bias adds, softmax, instance norm and the 1/sqrt(d_k) scale are counted in the "
      "non-MAC bucket");
  f.reconciled = expected.attention_products == f.counted.attention_products &&
                 expected.projections == f.counted.projections &&
                 expected.reduction == f.counted.reduction &&
                 expected.head_mixing == f.counted.head_mixing;
  return f;
}

}  // namespace

StageFormula compare_formula(const Model& model, std::size_t stage, std::size_t h,
                             std::size_t w) {
  return formula_from(model, stage, h, w, count_flops(model, h, w));
}

AuditReport audit_model(const Model& model, std::size_t h, std::size_t w) {
  AuditReport r;
  r.variant = model.config.variant;
  r.height = h;
  r.width = w;
  const ParamCount pc = count_params(model.params);
  const FlopCount fc = count_flops(model, h, w);
  r.total_params = pc.learnable;
  r.buffer_params = pc.buffers;
  r.total_macs = fc.macs;
  r.other_ops = fc.other;

  // Module paths in first-seen order across parameters and cost scopes.
  std::vector<std::string> order;
  std::map<std::string, std::array<std::uint64_t, 4>> table;  // learnable, buffers, macs, other
  auto slot = [&](const std::string& path) -> std::array<std::uint64_t, 4>& {
    auto [it, inserted] = table.emplace(path, std::array<std::uint64_t, 4>{});
    if (inserted) order.push_back(path);
    return it->second;
  };
  for (const auto& row : pc.rows) {
    auto& s = slot(row.path);
    s[0] += row.learnable;
    s[1] += row.buffers;
  }
  for (const auto& [path, tally] : fc.rows) {
    auto& s = slot(path.empty() ? std::string("(root)") : path);
    s[2] += tally.macs;
    s[3] += tally.other;
  }
  for (const auto& path : order) {
    const auto& s = table[path];
    if (s[0] > 0 || s[2] > 0) r.rows.push_back({path, s[0], s[2], "mac"});
    if (s[3] > 0) r.rows.push_back({path, 0, s[3], "other"});
    if (s[1] > 0) r.rows.push_back({path, s[1], 0, "buffer"});
  }
  for (std::size_t i = 0; i < model.stages.size(); ++i) {
    r.formulas.push_back(formula_from(model, i, h, w, fc));
  }
  return r;
}

std::string AuditReport::csv() const {
  std::ostringstream out;
  out << "path,params,macs,bucket\n";
  for (const auto& row : rows) {
    out << row.path << ',' << row.params << ',' << row.macs << ',' << row.bucket << '\n';
  }
  return out.str();
}

std::string AuditReport::text_table() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-40s %12s %16s  %s\n", "path", "params", "count", "bucket");
  out << line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof line, "%-40s %12llu %16llu  %s\n", row.path.c_str(),
                  static_cast<unsigned long long>(row.params),
                  static_cast<unsigned long long>(row.macs), row.bucket.c_str());
    out << line;
  }
  std::snprintf(line, sizeof line,
                "\nvariant %s @ %zux%zu\n  params      %llu (%.4f M), buffers %llu\n"
                "  MACs        %llu (%.4f G)\n  other ops   %llu\n",
                variant.c_str(), height, width, static_cast<unsigned long long>(total_params),
                static_cast<double>(total_params) / 1e6,
                static_cast<unsigned long long>(buffer_params),
                static_cast<unsigned long long>(total_macs),
                static_cast<double>(total_macs) / 1e9, static_cast<unsigned long long>(other_ops));
  out << line;
  out << "\nstage       n    n'    d   k   s        msa_cost       emsa_cost   counted-attn  "
         "reconciled\n";
  for (const auto& f : formulas) {
    std::snprintf(line, sizeof line, "%5zu %7zu %5zu %4zu %3zu %3zu %15.0f %15.0f %14.0f  %s\n",
                  f.stage + 1, f.n, f.n_kv, f.d_model, f.heads, f.reduction, f.msa_cost,
                  f.emsa_cost, f.counted.total(), f.reconciled ? "yes" : "NO");
    out << line;
  }
  return out.str();
}

std::optional<ReferenceFigures> reference_figures(std::string_view variant) {
  if (variant == "lite") return ReferenceFigures{10.49, 1.4};
  if (variant == "small") return ReferenceFigures{13.66, 1.94};
  if (variant == "base") return ReferenceFigures{30.28, 4.26};
  if (variant == "large") return ReferenceFigures{51.63, 7.91};
  return std::nullopt;
}

}  // namespace rest
