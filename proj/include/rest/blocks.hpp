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
#include <string_view>
#include <vector>

#include "rest/attention.hpp"
#include "rest/autograd.hpp"
#include "rest/parameter.hpp"
#include "rest/tensor.hpp"

namespace rest {

/// Raised when a fixed-length positional table meets a different token map.
class FixedLengthError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

enum class NormMode {
  kInference,  // batch norm uses running statistics
  kTraining,   // batch norm uses batch statistics and updates running ones
};

/// Per-pass state shared by every layer of one forward.
struct ForwardContext {
  explicit ForwardContext(ParamBinder& b, NormMode m = NormMode::kInference)
      : bind(b), norm_mode(m) {}

  ParamBinder& bind;
  NormMode norm_mode;
  /// Running-statistic buffers to update after a training-mode pass;
  /// collected here so the forward itself never mutates parameters.
  struct StatUpdate {
    ParamRef mean, var;
    Tensor batch_mean, batch_var;  // population variance
    std::size_t count = 0;         // elements per channel
  };
  std::vector<StatUpdate> stat_updates;
};

/// Applies the collected updates: running = (1-m) running + m batch, with
/// the unbiased variance estimate.
void apply_stat_updates(ParameterSet& params, const ForwardContext& ctx,
                        double momentum = kBatchNormMomentum);

// ---- layer norm / batch norm ----------------------------------------------

struct LayerNormParams {
  ParamRef gamma, beta;
};
LayerNormParams init_layer_norm(ParameterSet& params, std::string_view prefix, std::size_t dim);
Var layer_norm_forward(const Var& x, const LayerNormParams& p, ForwardContext& ctx);

struct BatchNormParams {
  ParamRef gamma, beta, running_mean, running_var;  // statistics are buffers
};
BatchNormParams init_batch_norm(ParameterSet& params, std::string_view prefix,
                                std::size_t channels);
Var batch_norm_forward(const Var& x, const BatchNormParams& p, ForwardContext& ctx);

struct ConvParams {
  ParamRef weight;
  std::optional<ParamRef> bias;
};
/// Dense conv weight [cout,cin,k,k] with truncated-normal init and zero bias.
ConvParams init_conv(ParameterSet& params, std::string_view prefix, std::size_t cin,
                     std::size_t cout, std::size_t kernel, Rng& rng, bool bias = true);
Var conv_forward(const Var& x, const ConvParams& p, const Conv2dOptions& options,
                 ForwardContext& ctx);

// ---- feed-forward -----------------------------------------------------------

struct FfnParams {
  ParamRef w1, b1, w2, b2;  // [d,df], [df], [df,d], [d]
};
FfnParams init_ffn(ParameterSet& params, std::string_view prefix, std::size_t d_model,
                   std::size_t hidden, Rng& rng);
/// GELU(x W1 + b1) W2 + b2 on x [...,d].
Var ffn_forward(const Var& x, const FfnParams& p, ForwardContext& ctx);

// ---- transformer block --------------------------------------------------------

enum class AttentionKind { kMsa, kEmsa };

struct BlockParams {
  AttentionKind kind = AttentionKind::kEmsa;
  AttentionConfig attention;
  LayerNormParams norm1;
  AttentionParams attn;
  LayerNormParams norm2;
  FfnParams ffn;
};
BlockParams init_block(ParameterSet& params, std::string_view prefix, AttentionKind kind,
                       const AttentionConfig& attention, std::size_t mlp_hidden, Rng& rng);
/// x' = x + Attn(LN1(x)); y = x' + FFN(LN2(x')). x [B,n,d] with n = h w.
Var transformer_block_forward(const Var& x, std::size_t h, std::size_t w, const BlockParams& p,
                              ForwardContext& ctx, AttentionProbe* probe = nullptr);

// ---- stems and patch embedding ----------------------------------------------

enum class StemKind { kRest, kResnet, kPvt };
std::string_view to_string(StemKind kind);
StemKind parse_stem_kind(std::string_view text);

struct StemParams {
  StemKind kind = StemKind::kRest;
  std::vector<ConvParams> convs;     // rest: 3, resnet: 1, pvt: 1
  std::vector<BatchNormParams> bns;  // rest: 2, resnet: 1, pvt: 0
};
inline constexpr std::size_t kPvtPatch = 4;
StemParams init_stem(ParameterSet& params, std::string_view prefix, StemKind kind,
                     std::size_t channels, Rng& rng);
/// [B,3,H,W] -> [B,C,H/4,W/4]. Throws DivisibilityError unless 4 | H and 4 | W.
Var stem_forward(const Var& image, const StemParams& p, ForwardContext& ctx);

/// 3x3 stride-2 pad-1 conv, [B,C,H,W] -> [B,Cout,H/2,W/2]. Odd extents throw.
Var patch_embed_forward(const Var& x, const ConvParams& p, ForwardContext& ctx);

// ---- positional encodings -----------------------------------------------------

enum class PositionalEncodingKind { kNone, kLe, kGl, kPa };
std::string_view to_string(PositionalEncodingKind kind);
PositionalEncodingKind parse_pe_kind(std::string_view text);

struct PositionalParams {
  PositionalEncodingKind kind = PositionalEncodingKind::kNone;
  std::optional<ParamRef> table;   // LE: [C,H,W]
  std::optional<ParamRef> weight;  // GL: [C,1,1,1]; PA: [C,1,3,3]
  std::optional<ParamRef> bias;    // PA: [C]
};
/// `h`, `w` fix the LE table size and are ignored by other kinds.
PositionalParams init_positional(ParameterSet& params, std::string_view prefix,
                                 PositionalEncodingKind kind, std::size_t channels, std::size_t h,
                                 std::size_t w, Rng& rng);
/// x [B,C,H,W] -> same shape.
Var positional_encode(const Var& x, const PositionalParams& p, ForwardContext& ctx);

// ---- layout helpers -----------------------------------------------------------

/// [B,C,H,W] -> [B,HW,C]
Var map_to_tokens(const Var& x);
/// [B,HW,C] -> [B,C,H,W]
Var tokens_to_map(const Var& x, std::size_t h, std::size_t w);

}  // namespace rest
