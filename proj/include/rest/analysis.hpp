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
#include <string>
#include <string_view>
#include <vector>

#include "rest/attention.hpp"
#include "rest/model.hpp"
#include "rest/tensor.hpp"

namespace rest {

// ---- head diversity -------------------------------------------------------

/// k x k cosine similarities between flattened head maps of `maps`
/// [B,k,n,n'], averaged over the batch. A zero-norm head is similar only
/// to itself.
Tensor head_similarity(const Tensor& maps);
/// Mean of the off-diagonal entries (0 when k == 1).
double mean_off_diagonal(const Tensor& matrix);

struct DiversityReport {
  std::size_t stage = 0, block = 0, heads = 0;  // zero-based indices
  /// Before the head convolution, after it, after instance norm.
  std::array<Tensor, 3> matrices;
  std::array<double, 3> mean_similarity{};

  static constexpr std::array<std::string_view, 3> kProbeNames = {"pre_conv", "post_conv",
                                                                  "post_in"};
  std::string csv() const;  // probe,i,j,similarity
};
DiversityReport diversity(const Model& model, const Tensor& image, std::size_t stage,
                          std::size_t block);
/// Renders the three matrices side by side; -1 blue, 0 white, +1 red.
void write_heatmap_ppm(const DiversityReport& report, const std::filesystem::path& path,
                       std::size_t cell_pixels = 24);

// ---- gradient checking ----------------------------------------------------

enum class GradcheckScope { kPrimitive, kAttention, kBlock, kModel };
std::string_view to_string(GradcheckScope scope);
GradcheckScope parse_gradcheck_scope(std::string_view text);  // accepts "emsa" for attention

inline constexpr double kGradcheckStep = 1e-5;
/// |a - f| / max(|a|, |f|, 1e-8)
double relative_error(double analytic, double numeric);
/// Same guard applied to whole tensors: ||a - f|| / max(||a||, ||f||, 1e-8).
double relative_error_norm(double diff_norm, double analytic_norm, double numeric_norm);

/// Smallest gradient central differences can resolve given the two perturbed
/// losses: kFdResolutionUlps * eps * max|L| / 2h. Exactly-zero gradients
/// (softmax-invariant biases, biases ahead of batch-statistics
/// normalization) only ever show noise below this level.
inline constexpr double kFdResolutionUlps = 256.0;
double fd_resolution(double loss_up, double loss_down);

struct GradcheckEntry {
  std::string name;  // construct/tensor
  std::size_t elements = 0;
  std::size_t checked = 0;
  double norm_rel_error = 0;  // verdict metric
  double max_rel_error = 0;   // elementwise maximum, informational
  /// Both gradients below fd_resolution everywhere; then the verdict is
  /// max |a - f| <= fd_resolution.
  bool zero_gradient = false;
  bool passed = false;
};

struct GradcheckReport {
  GradcheckScope scope = GradcheckScope::kPrimitive;
  double tolerance = 0;
  std::vector<GradcheckEntry> entries;

  bool passed() const;
  double worst() const;
  std::string text() const;
};

/// Compares backward against central differences with loss = sum of
/// squared outputs for every differentiable tensor of the scoped constructs.
/// `max_coords` > 0 checks that many seeded coordinates per tensor instead
/// of all of them.
GradcheckReport gradcheck_campaign(GradcheckScope scope, std::uint64_t seed, double tolerance,
                                   std::size_t max_coords = 0);

/// Tiny end-to-end configuration used by the model scope: C=8, one block
/// per stage, 3 classes, 32x32 input.
ModelConfig gradcheck_model_config();

// ---- benchmark ------------------------------------------------------------

enum class Precision { kF64, kF32 };
std::string_view to_string(Precision precision);
Precision parse_precision(std::string_view text);

struct BenchGeometry {
  std::size_t n = 3136;  // must be a perfect square (h = w)
  std::size_t d_model = 64;
  std::size_t heads = 1;
  std::size_t reduction = 8;
  ReductionKind reduction_kind = ReductionKind::kDepthwiseConv;
};

struct BenchResult {
  AttentionKind kind = AttentionKind::kEmsa;
  BenchGeometry geometry;
  Precision precision = Precision::kF32;
  std::size_t iterations = 0;
  double median_seconds = 0;
  std::vector<double> seconds;  // per timed iteration
  std::uint64_t macs = 0;       // one forward, from the shared counter

  static std::string csv_header();  // kind,n,d_model,heads,s,precision,iterations,median_s,macs
  std::string csv_row() const;
};

inline constexpr std::size_t kBenchWarmups = 2;
/// Batch-1 forward timings on seeded inputs after kBenchWarmups untimed runs.
BenchResult bench_attention(AttentionKind kind, const BenchGeometry& geometry,
                            std::size_t iterations, Precision precision, std::uint64_t seed);

// ---- toy training ---------------------------------------------------------

struct ToyTask {
  std::size_t classes = 0;
  std::size_t size = 0;
  Tensor images;                    // [N,3,S,S]
  std::vector<std::size_t> labels;  // balanced, N = classes * per_class
};
/// Oriented Gabor-like patterns: class c fixes an orientation and the
/// envelope position; Gaussian noise on top.
ToyTask make_toy_task(std::size_t classes, std::size_t size, std::size_t per_class,
                      std::uint64_t seed, double noise = 0.3);

/// Tiny training configuration: C=16, one block per stage.
ModelConfig toy_model_config(std::size_t classes, PositionalEncodingKind pe,
                             StemKind stem = StemKind::kRest);

struct TrainResult {
  std::vector<double> losses;  // full-batch cross-entropy before each update
  double final_loss = 0;       // after the last update
  double final_accuracy = 0;
  std::optional<std::size_t> diverged_at;  // first step with a non-finite loss

  std::string csv() const;  // step,loss
};
/// Full-batch SGD with momentum 0.9; batch norm uses batch statistics.
TrainResult toy_train(const ModelConfig& config, const ToyTask& task, std::size_t steps,
                      double lr, std::uint64_t seed, double momentum = 0.9);

}  // namespace rest
