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
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "rest/autograd.hpp"
#include "rest/parameter.hpp"
#include "rest/tensor.hpp"

namespace rest {

/// How keys and values are spatially reduced before attention.
enum class ReductionKind {
  kDepthwiseConv,  // kernel s+1, stride s, padding s/2
  kAvgPool,        // kernel = stride = s
  kMaxPool,        // kernel = stride = s
  kBypass,         // identity; forced when s == 1
};

std::string_view to_string(ReductionKind kind);
ReductionKind parse_reduction_kind(std::string_view text);

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t heads = 1;
  std::size_t reduction = 1;
  ReductionKind reduction_kind = ReductionKind::kDepthwiseConv;
  bool use_head_conv = true;      // 1x1 convolution across heads on the logits
  bool use_instance_norm = true;  // instance norm of the attention map after softmax
  bool qkv_bias = true;

  std::size_t head_dim() const { return d_model / heads; }
  ReductionKind effective_reduction() const {
    return reduction == 1 ? ReductionKind::kBypass : reduction_kind;
  }
  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
};

/// Parameter handles of one attention layer. Optional members are present
/// exactly when the configuration calls for them.
struct AttentionParams {
  ParamRef q_weight, k_weight, v_weight;
  std::optional<ParamRef> q_bias, k_bias, v_bias;
  ParamRef proj_weight, proj_bias;
  std::optional<ParamRef> reduction_weight, reduction_bias;  // [d,1,s+1,s+1], [d]
  std::optional<ParamRef> head_conv_weight, head_conv_bias;  // [k,k,1,1], [k]
};

/// Registers the parameters of one attention layer under `prefix`
/// (e.g. "stage1.block0.attn") with truncated-normal weights and zero biases.
AttentionParams init_attention_params(ParameterSet& params, std::string_view prefix,
                                      const AttentionConfig& config, Rng& rng);

/// Attention maps captured at the three probe points, each [B,k,n,n'].
struct AttentionProbe {
  Tensor logits_pre_conv;
  Tensor logits_post_conv;
  Tensor attn_post_in;
};

/// Small enough that a normalized map has unit variance within 1e-6 whenever
/// its own variance exceeds 1e-4; still keeps constant maps at zero.
inline constexpr double kInstanceNormEpsilon = 1e-10;

/// Standard multi-head self-attention on x [B,n,d]. Reduction, head
/// convolution and instance norm settings of `config` are ignored.
Var msa_forward(const Var& x, const AttentionConfig& config, const AttentionParams& params,
                ParamBinder& bind);

/// Efficient multi-head self-attention on x [B,n,d] laid out as an h x w
/// token map. Keys and values come from the reduced map of n' = (h/s)(w/s)
/// tokens. Throws DivisibilityError when s does not divide h and w.
Var emsa_forward(const Var& x, std::size_t h, std::size_t w, const AttentionConfig& config,
                 const AttentionParams& params, ParamBinder& bind,
                 AttentionProbe* probe = nullptr);

// Plain-tensor versions for inference and benchmarking. `values` is indexed
// by ParamRef::index (see ParameterSet::values_as).
template <typename T>
BasicTensor<T> msa_forward(const BasicTensor<T>& x, const AttentionConfig& config,
                           const AttentionParams& params, std::span<const BasicTensor<T>> values);
template <typename T>
BasicTensor<T> emsa_forward(const BasicTensor<T>& x, std::size_t h, std::size_t w,
                            const AttentionConfig& config, const AttentionParams& params,
                            std::span<const BasicTensor<T>> values,
                            AttentionProbe* probe = nullptr);

/// Closed-form multiply-accumulate cost, split by term.
struct AttentionCostTerms {
  double attention_products = 0;  // Q K^T and A V
  double projections = 0;         // Q, K, V and output projections
  double reduction = 0;           // depthwise spatial reduction
  double head_mixing = 0;         // 1x1 cross-head convolution

  double total() const { return attention_products + projections + reduction + head_mixing; }
};

/// 2 d n^2 + 4 d^2 n.
AttentionCostTerms msa_cost_terms(double n, double d_model);
/// 2 d n^2/s^2 + 2 d^2 n (1 + 1/s^2) + d n (s+1)^2/s^2 + k^2 n^2/s^2.
AttentionCostTerms emsa_cost_terms(double n, double d_model, double s, double k);

inline double msa_cost(double n, double d_model) { return msa_cost_terms(n, d_model).total(); }
inline double emsa_cost(double n, double d_model, double s, double k) {
  return emsa_cost_terms(n, d_model, s, k).total();
}

}  // namespace rest
