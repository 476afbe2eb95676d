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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rest/attention.hpp"
#include "rest/blocks.hpp"
#include "rest/parameter.hpp"
#include "rest/tensor.hpp"

namespace rest {

inline constexpr std::size_t kStageCount = 4;

struct StageSpec {
  std::size_t depth = 1;
  std::size_t heads = 1;
  std::size_t reduction = 1;
  std::size_t channels = 64;
  std::size_t mlp_width = 256;
  PositionalEncodingKind pe_kind = PositionalEncodingKind::kPa;
  ReductionKind reduction_kind = ReductionKind::kDepthwiseConv;
};

struct ModelConfig {
  std::string variant = "custom";
  std::size_t base_width = 64;
  std::array<std::size_t, kStageCount> depths = {2, 2, 2, 2};
  std::array<std::size_t, kStageCount> heads = {1, 2, 4, 8};
  std::array<std::size_t, kStageCount> reductions = {8, 4, 2, 1};
  std::size_t mlp_ratio = 4;
  StemKind stem = StemKind::kRest;
  PositionalEncodingKind pe = PositionalEncodingKind::kPa;
  ReductionKind reduction_kind = ReductionKind::kDepthwiseConv;
  std::size_t num_classes = 1000;
  bool head_conv = true;
  bool instance_norm = true;
  /// Input side the LE tables are built for; other encodings ignore it.
  std::size_t image_size = 224;

  /// Channels C, 2C, 4C, 8C; MLP width mlp_ratio times channels.
  std::vector<StageSpec> stages() const;
  AttentionConfig attention_config(std::size_t stage) const;
  /// Throws std::invalid_argument naming the offending field and value.
  void validate() const;
};

/// Named variants: lite, small, base, large.
ModelConfig variant_config(std::string_view name);

/// Parses `key = value` lines with `#` comments. Unlisted keys keep the
/// defaults of the variant named by `variant` (or of ModelConfig).
ModelConfig parse_model_config(std::string_view text);
ModelConfig load_model_config(const std::filesystem::path& path);
std::string format_model_config(const ModelConfig& config);

struct StageParams {
  StageSpec spec;
  std::optional<ConvParams> embed;  // absent for stage 1 (the stem embeds)
  PositionalParams pe;
  std::vector<BlockParams> blocks;
};

struct Model {
  ModelConfig config;
  ParameterSet params;
  StemParams stem;
  std::vector<StageParams> stages;
  ParamRef head_weight, head_bias;  // [8C, classes], [classes]
};

/// Deterministic in (config, seed).
Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Probe request for one attention layer (zero-based stage and block).
struct ProbeRequest {
  std::size_t stage = 0;
  std::size_t block = 0;
  AttentionProbe* out = nullptr;
};

/// Spatial side of each stage map for an h x w input; throws
/// DivisibilityError naming the first stage whose geometry does not divide.
std::vector<std::array<std::size_t, 2>> stage_geometry(const ModelConfig& config, std::size_t h,
                                                       std::size_t w);

/// image [B,3,H,W] -> logits [B,classes].
Var model_forward(const Model& model, const Var& image, ForwardContext& ctx,
                  const ProbeRequest* probe = nullptr);
/// Inference convenience: running statistics, no gradient recording.
Tensor model_forward(const Model& model, const Tensor& image,
                     const ProbeRequest* probe = nullptr);

// RESTW1 weight files.
class WeightFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
void save_weights(const ParameterSet& params, const std::filesystem::path& path);
/// Replaces the values of `params` (names and shapes must match in order).
void load_weights(ParameterSet& params, const std::filesystem::path& path);
std::string encode_weights(const ParameterSet& params);
void decode_weights(ParameterSet& params, std::string_view bytes);

}  // namespace rest
