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

#include "rest/blocks.hpp"

#include <array>
#include <stdexcept>
#include <string>

#include "rest/cost.hpp"

namespace rest {

void apply_stat_updates(ParameterSet& params, const ForwardContext& ctx, double momentum) {
  for (const auto& u : ctx.stat_updates) {
    Tensor& mean = params[u.mean].value;
    Tensor& var = params[u.var].value;
    const double correction =
        u.count > 1 ? static_cast<double>(u.count) / static_cast<double>(u.count - 1) : 1.0;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - momentum) * mean[c] + momentum * u.batch_mean[c];
      var[c] = (1.0 - momentum) * var[c] + momentum * u.batch_var[c] * correction;
    }
  }
}

LayerNormParams init_layer_norm(ParameterSet& params, std::string_view prefix, std::size_t dim) {
  const std::string p(prefix);
  return {params.add(p + ".weight", Tensor({dim}, 1.0)), params.add(p + ".bias", Tensor({dim}))};
}

Var layer_norm_forward(const Var& x, const LayerNormParams& p, ForwardContext& ctx) {
  return layer_norm(x, ctx.bind(p.gamma), ctx.bind(p.beta), kLayerNormEpsilon);
}

BatchNormParams init_batch_norm(ParameterSet& params, std::string_view prefix,
                                std::size_t channels) {
  const std::string p(prefix);
  BatchNormParams bn;
  bn.gamma = params.add(p + ".weight", Tensor({channels}, 1.0));
  bn.beta = params.add(p + ".bias", Tensor({channels}));
  bn.running_mean = params.add(p + ".running_mean", Tensor({channels}), ParamKind::kBuffer);
  bn.running_var = params.add(p + ".running_var", Tensor({channels}, 1.0), ParamKind::kBuffer);
  return bn;
}

Var batch_norm_forward(const Var& x, const BatchNormParams& p, ForwardContext& ctx) {
  if (ctx.norm_mode == NormMode::kInference) {
    const ParameterSet& ps = ctx.bind.params();
    return batch_norm(x, ps[p.running_mean].value, ps[p.running_var].value, ctx.bind(p.gamma),
                      ctx.bind(p.beta), kBatchNormEpsilon);
  }
  ForwardContext::StatUpdate u;
  u.mean = p.running_mean;
  u.var = p.running_var;
  u.count = x.dim(0) * x.dim(2) * x.dim(3);
  Var out = batch_norm_train(x, ctx.bind(p.gamma), ctx.bind(p.beta), kBatchNormEpsilon,
                             &u.batch_mean, &u.batch_var);
  ctx.stat_updates.push_back(std::move(u));
  return out;
}

ConvParams init_conv(ParameterSet& params, std::string_view prefix, std::size_t cin,
                     std::size_t cout, std::size_t kernel, Rng& rng, bool bias) {
  const std::string p(prefix);
  ConvParams c;
  c.weight = params.add(p + ".weight", truncated_normal({cout, cin, kernel, kernel}, 0.02, rng));
  if (bias) c.bias = params.add(p + ".bias", Tensor({cout}));
  return c;
}

Var conv_forward(const Var& x, const ConvParams& p, const Conv2dOptions& options,
                 ForwardContext& ctx) {
  if (p.bias) {
    const Var b = ctx.bind(*p.bias);
    return conv2d(x, ctx.bind(p.weight), &b, options);
  }
  return conv2d(x, ctx.bind(p.weight), nullptr, options);
}

FfnParams init_ffn(ParameterSet& params, std::string_view prefix, std::size_t d_model,
                   std::size_t hidden, Rng& rng) {
  if (hidden == 0) throw std::invalid_argument("ffn hidden width must be >= 1");
  const std::string p(prefix);
  FfnParams f;
  f.w1 = params.add(p + ".fc1.weight", truncated_normal({d_model, hidden}, 0.02, rng));
  f.b1 = params.add(p + ".fc1.bias", Tensor({hidden}));
  f.w2 = params.add(p + ".fc2.weight", truncated_normal({hidden, d_model}, 0.02, rng));
  f.b2 = params.add(p + ".fc2.bias", Tensor({d_model}));
  return f;
}

Var ffn_forward(const Var& x, const FfnParams& p, ForwardContext& ctx) {
  Var hidden;
  {
    cost::Scope s("fc1");
    const Var b1 = ctx.bind(p.b1);
    hidden = gelu(linear(x, ctx.bind(p.w1), &b1));
  }
  cost::Scope s("fc2");
  const Var b2 = ctx.bind(p.b2);
  return linear(hidden, ctx.bind(p.w2), &b2);
}

BlockParams init_block(ParameterSet& params, std::string_view prefix, AttentionKind kind,
                       const AttentionConfig& attention, std::size_t mlp_hidden, Rng& rng) {
  const std::string p(prefix);
  BlockParams b;
  b.kind = kind;
  b.attention = attention;
  if (kind == AttentionKind::kMsa) {
    b.attention.reduction = 1;
    b.attention.use_head_conv = false;
    b.attention.use_instance_norm = false;
  }
  b.norm1 = init_layer_norm(params, p + ".norm1", attention.d_model);
  b.attn = init_attention_params(params, p + ".attn", b.attention, rng);
  b.norm2 = init_layer_norm(params, p + ".norm2", attention.d_model);
  b.ffn = init_ffn(params, p + ".ffn", attention.d_model, mlp_hidden, rng);
  return b;
}

Var transformer_block_forward(const Var& x, std::size_t h, std::size_t w, const BlockParams& p,
                              ForwardContext& ctx, AttentionProbe* probe) {
  Var mid;
  {
    Var normed;
    {
      cost::Scope s("norm1");
      normed = layer_norm_forward(x, p.norm1, ctx);
    }
    cost::Scope s("attn");
    const Var a = p.kind == AttentionKind::kMsa
                      ? msa_forward(normed, p.attention, p.attn, ctx.bind)
                      : emsa_forward(normed, h, w, p.attention, p.attn, ctx.bind, probe);
    mid = add(x, a);
  }
  Var normed;
  {
    cost::Scope s("norm2");
    normed = layer_norm_forward(mid, p.norm2, ctx);
  }
  cost::Scope s("ffn");
  return add(mid, ffn_forward(normed, p.ffn, ctx));
}

std::string_view to_string(StemKind kind) {
  switch (kind) {
    case StemKind::kRest: return "rest";
    case StemKind::kResnet: return "resnet";
    case StemKind::kPvt: return "pvt";
  }
  return "?";
}

StemKind parse_stem_kind(std::string_view text) {
  if (text == "rest") return StemKind::kRest;
  if (text == "resnet") return StemKind::kResnet;
  if (text == "pvt") return StemKind::kPvt;
  throw std::invalid_argument("unknown stem '" + std::string(text) +
                              "' (expected rest, resnet or pvt)");
}

StemParams init_stem(ParameterSet& params, std::string_view prefix, StemKind kind,
                     std::size_t channels, Rng& rng) {
  const std::string p(prefix);
  StemParams s;
  s.kind = kind;
  switch (kind) {
    case StemKind::kRest: {
      if (channels % 2 != 0) throw std::invalid_argument("rest stem needs an even width");
      const std::size_t half = channels / 2;
      s.convs.push_back(init_conv(params, p + ".conv1", 3, half, 3, rng));
      s.bns.push_back(init_batch_norm(params, p + ".bn1", half));
      s.convs.push_back(init_conv(params, p + ".conv2", half, half, 3, rng));
      s.bns.push_back(init_batch_norm(params, p + ".bn2", half));
      s.convs.push_back(init_conv(params, p + ".conv3", half, channels, 3, rng));
      break;
    }
    case StemKind::kResnet:
      s.convs.push_back(init_conv(params, p + ".conv1", 3, channels, 7, rng));
      s.bns.push_back(init_batch_norm(params, p + ".bn1", channels));
      break;
    case StemKind::kPvt:
      s.convs.push_back(init_conv(params, p + ".proj", 3, channels, kPvtPatch, rng));
      break;
  }
  return s;
}

Var stem_forward(const Var& image, const StemParams& p, ForwardContext& ctx) {
  if (image.shape().size() != 4 || image.dim(1) != 3) {
    throw ShapeError("stem expects an image [B,3,H,W], got " + to_string(image.shape()));
  }
  const std::size_t h = image.dim(2);
  const std::size_t w = image.dim(3);
  if (h % 4 != 0 || w % 4 != 0) {
    throw DivisibilityError("stem: input " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by 4");
  }
  auto conv_bn_relu = [&](const Var& x, std::size_t i, const Conv2dOptions& o) {
    const std::string n = std::to_string(i + 1);
    Var y;
    {
      cost::Scope s("conv" + n);
      y = conv_forward(x, p.convs[i], o, ctx);
    }
    cost::Scope s("bn" + n);
    return relu(batch_norm_forward(y, p.bns[i], ctx));
  };
  switch (p.kind) {
    case StemKind::kRest: {
      Var x = conv_bn_relu(image, 0, Conv2dOptions{{2, 2}, {1, 1}});
      x = conv_bn_relu(x, 1, Conv2dOptions{{1, 1}, {1, 1}});
      cost::Scope s("conv3");
      return conv_forward(x, p.convs[2], Conv2dOptions{{2, 2}, {1, 1}}, ctx);
    }
    case StemKind::kResnet: {
      const Var x = conv_bn_relu(image, 0, Conv2dOptions{{2, 2}, {3, 3}});
      cost::Scope s("pool");
      return max_pool2d(x, Pool2dOptions{{3, 3}, {2, 2}, {1, 1}});
    }
    case StemKind::kPvt: {
      cost::Scope s("proj");
      return conv_forward(image, p.convs[0], Conv2dOptions{{kPvtPatch, kPvtPatch}, {0, 0}}, ctx);
    }
  }
  throw std::logic_error("unreachable stem kind");
}

Var patch_embed_forward(const Var& x, const ConvParams& p, ForwardContext& ctx) {
  if (x.shape().size() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw DivisibilityError("patch embedding needs even spatial extents, got " +
                            to_string(x.shape()));
  }
  return conv_forward(x, p, Conv2dOptions{{2, 2}, {1, 1}}, ctx);
}

std::string_view to_string(PositionalEncodingKind kind) {
  switch (kind) {
    case PositionalEncodingKind::kNone: return "none";
    case PositionalEncodingKind::kLe: return "le";
    case PositionalEncodingKind::kGl: return "gl";
    case PositionalEncodingKind::kPa: return "pa";
  }
  return "?";
}

PositionalEncodingKind parse_pe_kind(std::string_view text) {
  if (text == "none") return PositionalEncodingKind::kNone;
  if (text == "le") return PositionalEncodingKind::kLe;
  if (text == "gl") return PositionalEncodingKind::kGl;
  if (text == "pa") return PositionalEncodingKind::kPa;
  throw std::invalid_argument("unknown positional encoding '" + std::string(text) +
                              "' (expected none, le, gl or pa)");
}

PositionalParams init_positional(ParameterSet& params, std::string_view prefix,
                                 PositionalEncodingKind kind, std::size_t channels, std::size_t h,
                                 std::size_t w, Rng& rng) {
  const std::string p(prefix);
  PositionalParams pe;
  pe.kind = kind;
  switch (kind) {
    case PositionalEncodingKind::kNone:
      break;
    case PositionalEncodingKind::kLe:
      pe.table = params.add(p + ".table", truncated_normal({channels, h, w}, 0.02, rng));
      break;
    case PositionalEncodingKind::kGl:
      pe.weight = params.add(p + ".weight", Tensor({channels, 1, 1, 1}));
      break;
    case PositionalEncodingKind::kPa:
      pe.weight = params.add(p + ".weight", truncated_normal({channels, 1, 3, 3}, 0.02, rng));
      pe.bias = params.add(p + ".bias", Tensor({channels}));
      break;
  }
  return pe;
}

Var positional_encode(const Var& x, const PositionalParams& p, ForwardContext& ctx) {
  switch (p.kind) {
    case PositionalEncodingKind::kNone:
      return x;
    case PositionalEncodingKind::kLe: {
      const Tensor& table = ctx.bind.params()[*p.table].value;
      if (x.shape().size() != 4 || x.dim(1) != table.dim(0) || x.dim(2) != table.dim(1) ||
          x.dim(3) != table.dim(2)) {
        throw FixedLengthError("learnable position table is fixed at " +
                               to_string(table.shape()) + " but the feature map is " +
                               to_string(x.shape()));
      }
      return add_batch_broadcast(x, ctx.bind(*p.table));
    }
    case PositionalEncodingKind::kGl:
      return add(x, depthwise_conv2d(x, ctx.bind(*p.weight), nullptr, Conv2dOptions{}));
    case PositionalEncodingKind::kPa: {
      const Var b = ctx.bind(*p.bias);
      const Var gate =
          sigmoid(depthwise_conv2d(x, ctx.bind(*p.weight), &b, Conv2dOptions{{1, 1}, {1, 1}}));
      return mul(x, gate);
    }
  }
  throw std::logic_error("unreachable positional encoding kind");
}

Var map_to_tokens(const Var& x) {
  static constexpr std::array<std::size_t, 4> kToLast = {0, 2, 3, 1};
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(permute(x, kToLast), {b, h * w, c});
}

Var tokens_to_map(const Var& x, std::size_t h, std::size_t w) {
  static constexpr std::array<std::size_t, 4> kToFirst = {0, 3, 1, 2};
  const std::size_t b = x.dim(0), c = x.dim(2);
  return permute(reshape(x, {b, h, w, c}), kToFirst);
}

}  // namespace rest
