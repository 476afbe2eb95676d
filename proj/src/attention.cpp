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

#include "rest/attention.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rest/cost.hpp"
#include "rest/kernels.hpp"

namespace rest {

std::string_view to_string(ReductionKind kind) {
  switch (kind) {
    case ReductionKind::kDepthwiseConv: return "dwconv";
    case ReductionKind::kAvgPool: return "avg";
    case ReductionKind::kMaxPool: return "max";
    case ReductionKind::kBypass: return "bypass";
  }
  return "?";
}

ReductionKind parse_reduction_kind(std::string_view text) {
  if (text == "dwconv") return ReductionKind::kDepthwiseConv;
  if (text == "avg") return ReductionKind::kAvgPool;
  if (text == "max") return ReductionKind::kMaxPool;
  if (text == "bypass") return ReductionKind::kBypass;
  throw std::invalid_argument("unknown reduction kind '" + std::string(text) +
                              "' (expected dwconv, avg, max or bypass)");
}

void AttentionConfig::validate() const {
  if (heads == 0) throw std::invalid_argument("attention heads must be >= 1");
  if (d_model == 0 || d_model % heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                " is not divisible by heads " + std::to_string(heads));
  }
  if (reduction == 0) throw std::invalid_argument("reduction factor must be >= 1");
  if (reduction > 1 && reduction_kind == ReductionKind::kBypass) {
    throw std::invalid_argument("bypass reduction requires s == 1, got s = " +
                                std::to_string(reduction));
  }
}

AttentionParams init_attention_params(ParameterSet& params, std::string_view prefix,
                                      const AttentionConfig& config, Rng& rng) {
  config.validate();
  const std::string p(prefix);
  const std::size_t d = config.d_model;
  AttentionParams a;
  auto weight = [&](const std::string& name) {
    return params.add(p + "." + name + ".weight", truncated_normal({d, d}, 0.02, rng));
  };
  auto bias = [&](const std::string& name) {
    return params.add(p + "." + name + ".bias", Tensor({d}));
  };
  a.q_weight = weight("q");
  if (config.qkv_bias) a.q_bias = bias("q");
  a.k_weight = weight("k");
  if (config.qkv_bias) a.k_bias = bias("k");
  a.v_weight = weight("v");
  if (config.qkv_bias) a.v_bias = bias("v");
  a.proj_weight = weight("proj");
  a.proj_bias = bias("proj");
  if (config.effective_reduction() == ReductionKind::kDepthwiseConv) {
    const std::size_t k = config.reduction + 1;
    a.reduction_weight = params.add(p + ".sr.weight", truncated_normal({d, 1, k, k}, 0.02, rng));
    a.reduction_bias = params.add(p + ".sr.bias", Tensor({d}));
  }
  if (config.use_head_conv) {
    const std::size_t k = config.heads;
    a.head_conv_weight =
        params.add(p + ".head_conv.weight", truncated_normal({k, k, 1, 1}, 0.02, rng));
    a.head_conv_bias = params.add(p + ".head_conv.bias", Tensor({k}));
  }
  return a;
}

namespace {

constexpr std::array<std::size_t, 3> kSwapLast2 = {0, 2, 1};
constexpr std::array<std::size_t, 4> kSplitHeads = {0, 2, 1, 3};  // [B,n,k,dk] -> [B,k,n,dk]
constexpr std::array<std::size_t, 4> kSplitHeadsT = {0, 2, 3, 1};  // [B,n,k,dk] -> [B,k,dk,n]

Tensor to_probe(const Var& v) { return v.value(); }
Tensor to_probe(const Tensor& v) { return v; }
Tensor to_probe(const TensorF& v) { return v.cast<double>(); }

template <typename V, typename Get>
V project(const V& x, ParamRef weight, const std::optional<ParamRef>& bias, Get& get,
          const char* scope) {
  cost::Scope s(scope);
  if (bias) {
    const auto& b = get(*bias);
    return linear(x, get(weight), &b);
  }
  return linear(x, get(weight), static_cast<const V*>(nullptr));
}

template <typename V>
void check_tokens(const V& x, const AttentionConfig& config) {
  if (x.shape().size() != 3 || x.shape()[2] != config.d_model) {
    throw ShapeError("attention expects tokens [B,n," + std::to_string(config.d_model) +
                     "], got " + to_string(x.shape()));
  }
}

// Shared tail: scaled logits of q [B,n,d] against k, v [B,n',d], optional
// head mixing and instance norm, then head merge and output projection.
template <typename V, typename Get>
V attend(const V& q, const V& k, const V& v, const AttentionConfig& config, bool efficient,
         const AttentionParams& params, Get& get, AttentionProbe* probe) {
  const std::size_t batch = q.shape()[0];
  const std::size_t n = q.shape()[1];
  const std::size_t n_kv = k.shape()[1];
  const std::size_t heads = config.heads;
  const std::size_t dk = config.head_dim();

  const V qh = permute(reshape(q, {batch, n, heads, dk}), kSplitHeads);
  const V kt = permute(reshape(k, {batch, n_kv, heads, dk}), kSplitHeadsT);
  const V vh = permute(reshape(v, {batch, n_kv, heads, dk}), kSplitHeads);

  V logits = [&] {
    cost::Scope s("qk");
    return scale(matmul(qh, kt), 1.0 / std::sqrt(static_cast<double>(dk)));
  }();
  if (probe != nullptr) probe->logits_pre_conv = to_probe(logits);
  if (efficient && config.use_head_conv) {
    cost::Scope s("head_conv");
    const auto& b = get(*params.head_conv_bias);
    logits = conv2d(logits, get(*params.head_conv_weight), &b, Conv2dOptions{});
  }
  if (probe != nullptr) probe->logits_post_conv = to_probe(logits);
  V attn = [&] {
    cost::Scope s("softmax");
    return softmax(logits, -1);
  }();
  if (efficient && config.use_instance_norm) {
    cost::Scope s("in");
    attn = instance_norm(attn, kInstanceNormEpsilon);
  }
  if (probe != nullptr) probe->attn_post_in = to_probe(attn);

  V merged = [&] {
    cost::Scope s("av");
    return matmul(attn, vh);
  }();
  merged = reshape(permute(merged, kSplitHeads), {batch, n, config.d_model});
  cost::Scope s("proj");
  const auto& pb = get(params.proj_bias);
  return linear(merged, get(params.proj_weight), &pb);
}

template <typename V, typename Get>
V msa_impl(const V& x, const AttentionConfig& config, const AttentionParams& params, Get& get) {
  config.validate();
  check_tokens(x, config);
  const V q = project(x, params.q_weight, params.q_bias, get, "q");
  const V k = project(x, params.k_weight, params.k_bias, get, "k");
  const V v = project(x, params.v_weight, params.v_bias, get, "v");
  return attend(q, k, v, config, false, params, get, nullptr);
}

template <typename V, typename Get>
V reduce_tokens(const V& x, std::size_t h, std::size_t w, const AttentionConfig& config,
                const AttentionParams& params, Get& get) {
  const std::size_t batch = x.shape()[0];
  const std::size_t d = config.d_model;
  const std::size_t s = config.reduction;
  cost::Scope scope("sr");
  const V map = reshape(permute(x, kSwapLast2), {batch, d, h, w});
  V reduced;
  switch (config.effective_reduction()) {
    case ReductionKind::kDepthwiseConv: {
      if (!params.reduction_weight || !params.reduction_bias) {
        throw std::invalid_argument("depthwise reduction requires reduction parameters");
      }
      const auto& b = get(*params.reduction_bias);
      reduced = depthwise_conv2d(map, get(*params.reduction_weight), &b,
                                 Conv2dOptions{{s, s}, {s / 2, s / 2}});
      break;
    }
    case ReductionKind::kAvgPool:
      reduced = avg_pool2d(map, Pool2dOptions{{s, s}, {s, s}, {0, 0}});
      break;
    case ReductionKind::kMaxPool:
      reduced = max_pool2d(map, Pool2dOptions{{s, s}, {s, s}, {0, 0}});
      break;
    case ReductionKind::kBypass:
      return x;
  }
  const std::size_t n_kv = reduced.shape()[2] * reduced.shape()[3];
  return permute(reshape(reduced, {batch, d, n_kv}), kSwapLast2);
}

template <typename V, typename Get>
V emsa_impl(const V& x, std::size_t h, std::size_t w, const AttentionConfig& config,
            const AttentionParams& params, Get& get, AttentionProbe* probe) {
  config.validate();
  check_tokens(x, config);
  const std::size_t n = x.shape()[1];
  if (n != h * w) {
    throw ShapeError("token count " + std::to_string(n) + " differs from h*w = " +
                     std::to_string(h) + "*" + std::to_string(w));
  }
  const std::size_t s = config.reduction;
  if (s > 1 && (h % s != 0 || w % s != 0)) {
    throw DivisibilityError("token map " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by reduction factor " + std::to_string(s));
  }
  const V q = project(x, params.q_weight, params.q_bias, get, "q");
  const V kv_source = reduce_tokens(x, h, w, config, params, get);
  const V k = project(kv_source, params.k_weight, params.k_bias, get, "k");
  const V v = project(kv_source, params.v_weight, params.v_bias, get, "v");
  return attend(q, k, v, config, true, params, get, probe);
}

template <typename T>
struct SpanGetter {
  std::span<const BasicTensor<T>> values;
  const BasicTensor<T>& operator()(ParamRef ref) const { return values[ref.index]; }
};

}  // namespace

Var msa_forward(const Var& x, const AttentionConfig& config, const AttentionParams& params,
                ParamBinder& bind) {
  return msa_impl(x, config, params, bind);
}

Var emsa_forward(const Var& x, std::size_t h, std::size_t w, const AttentionConfig& config,
                 const AttentionParams& params, ParamBinder& bind, AttentionProbe* probe) {
  return emsa_impl(x, h, w, config, params, bind, probe);
}

template <typename T>
BasicTensor<T> msa_forward(const BasicTensor<T>& x, const AttentionConfig& config,
                           const AttentionParams& params, std::span<const BasicTensor<T>> values) {
  SpanGetter<T> get{values};
  return msa_impl(x, config, params, get);
}

template <typename T>
BasicTensor<T> emsa_forward(const BasicTensor<T>& x, std::size_t h, std::size_t w,
                            const AttentionConfig& config, const AttentionParams& params,
                            std::span<const BasicTensor<T>> values, AttentionProbe* probe) {
  SpanGetter<T> get{values};
  return emsa_impl(x, h, w, config, params, get, probe);
}

template TensorF msa_forward(const TensorF&, const AttentionConfig&, const AttentionParams&,
                             std::span<const TensorF>);
template Tensor msa_forward(const Tensor&, const AttentionConfig&, const AttentionParams&,
                            std::span<const Tensor>);
template TensorF emsa_forward(const TensorF&, std::size_t, std::size_t, const AttentionConfig&,
                              const AttentionParams&, std::span<const TensorF>, AttentionProbe*);
template Tensor emsa_forward(const Tensor&, std::size_t, std::size_t, const AttentionConfig&,
                             const AttentionParams&, std::span<const Tensor>, AttentionProbe*);

AttentionCostTerms msa_cost_terms(double n, double d_model) {
  AttentionCostTerms t;
  t.attention_products = 2.0 * d_model * n * n;
  t.projections = 4.0 * d_model * d_model * n;
  return t;
}

AttentionCostTerms emsa_cost_terms(double n, double d_model, double s, double k) {
  const double s2 = s * s;
  AttentionCostTerms t;
  t.attention_products = 2.0 * d_model * n * n / s2;
  t.projections = 2.0 * d_model * d_model * n * (1.0 + 1.0 / s2);
  t.reduction = d_model * n * (s + 1.0) * (s + 1.0) / s2;
  t.head_mixing = k * k * n * n / s2;
  return t;
}

}  // namespace rest
