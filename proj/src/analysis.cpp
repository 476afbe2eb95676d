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

#include "rest/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

#include "rest/autograd.hpp"
#include "rest/blocks.hpp"
#include "rest/cost.hpp"

namespace rest {

// ---- head diversity -------------------------------------------------------

Tensor head_similarity(const Tensor& maps) {
  if (maps.rank() != 4) {
    throw ShapeError("head_similarity expects maps [B,k,n,n'], got " + to_string(maps.shape()));
  }
  const std::size_t batch = maps.dim(0);
  const std::size_t heads = maps.dim(1);
  const std::size_t m = maps.dim(2) * maps.dim(3);
  Tensor out({heads, heads});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* base = maps.data() + b * heads * m;
    std::vector<double> norms(heads);
    for (std::size_t i = 0; i < heads; ++i) {
      double s = 0;
      for (std::size_t t = 0; t < m; ++t) s += base[i * m + t] * base[i * m + t];
      norms[i] = std::sqrt(s);
    }
    for (std::size_t i = 0; i < heads; ++i) {
      for (std::size_t j = i; j < heads; ++j) {
        double sim;
        if (i == j) {
          sim = 1.0;
        } else if (norms[i] == 0.0 || norms[j] == 0.0) {
          sim = 0.0;
        } else {
          double dot = 0;
          for (std::size_t t = 0; t < m; ++t) dot += base[i * m + t] * base[j * m + t];
          sim = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
        }
        out[i * heads + j] += sim;
        if (i != j) out[j * heads + i] += sim;
      }
    }
  }
  for (double& v : out.values()) v /= static_cast<double>(batch);
  return out;
}

double mean_off_diagonal(const Tensor& matrix) {
  const std::size_t k = matrix.dim(0);
  if (k < 2) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) s += matrix[i * k + j];
    }
  }
  return s / static_cast<double>(k * (k - 1));
}

std::string DiversityReport::csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "probe,i,j,similarity\n";
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t i = 0; i < heads; ++i) {
      for (std::size_t j = 0; j < heads; ++j) {
        out << kProbeNames[p] << ',' << i << ',' << j << ',' << matrices[p][i * heads + j]
            << '\n';
      }
    }
  }
  return out.str();
}

DiversityReport diversity(const Model& model, const Tensor& image, std::size_t stage,
                          std::size_t block) {
  if (stage >= model.stages.size() || block >= model.stages[stage].blocks.size()) {
    throw std::invalid_argument("no attention layer at stage " + std::to_string(stage + 1) +
                                " block " + std::to_string(block));
  }
  AttentionProbe probe;
  const ProbeRequest request{stage, block, &probe};
  model_forward(model, image, &request);
  DiversityReport r;
  r.stage = stage;
  r.block = block;
  r.heads = model.stages[stage].blocks[block].attention.heads;
  const std::array<const Tensor*, 3> maps = {&probe.logits_pre_conv, &probe.logits_post_conv,
                                             &probe.attn_post_in};
  for (std::size_t p = 0; p < 3; ++p) {
    r.matrices[p] = head_similarity(*maps[p]);
    r.mean_similarity[p] = mean_off_diagonal(r.matrices[p]);
  }
  return r;
}

void write_heatmap_ppm(const DiversityReport& report, const std::filesystem::path& path,
                       std::size_t cell_pixels) {
  const std::size_t k = report.heads;
  const std::size_t gap = cell_pixels / 2 + 1;
  const std::size_t panel = k * cell_pixels;
  const std::size_t width = 3 * panel + 2 * gap;
  const std::size_t height = panel;
  std::string pixels(width * height * 3, static_cast<char>(255));
  for (std::size_t p = 0; p < 3; ++p) {
    const std::size_t x0 = p * (panel + gap);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < panel; ++x) {
        const double v = std::clamp(
            report.matrices[p][(y / cell_pixels) * k + (x / cell_pixels)], -1.0, 1.0);
        const auto fade = static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::abs(v))));
        const std::size_t at = (y * width + x0 + x) * 3;
        pixels[at + 0] = static_cast<char>(v >= 0 ? 255 : fade);
        pixels[at + 1] = static_cast<char>(fade);
        pixels[at + 2] = static_cast<char>(v >= 0 ? fade : 255);
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
}

// ---- gradient checking ----------------------------------------------------

std::string_view to_string(GradcheckScope scope) {
  switch (scope) {
    case GradcheckScope::kPrimitive: return "primitive";
    case GradcheckScope::kAttention: return "attention";
    case GradcheckScope::kBlock: return "block";
    case GradcheckScope::kModel: return "model";
  }
  return "?";
}

GradcheckScope parse_gradcheck_scope(std::string_view text) {
  if (text == "primitive") return GradcheckScope::kPrimitive;
  if (text == "attention" || text == "emsa") return GradcheckScope::kAttention;
  if (text == "block") return GradcheckScope::kBlock;
  if (text == "model") return GradcheckScope::kModel;
  throw std::invalid_argument("unknown gradcheck scope '" + std::string(text) +
                              "' (expected primitive, attention, block or model)");
}

double fd_resolution(double loss_up, double loss_down) {
  const double scale = std::max(std::abs(loss_up), std::abs(loss_down));
  return kFdResolutionUlps * std::numeric_limits<double>::epsilon() * scale /
         (2.0 * kGradcheckStep);
}

double relative_error_norm(double diff_norm, double analytic_norm, double numeric_norm) {
  return diff_norm / std::max({analytic_norm, numeric_norm, 1e-8});
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradcheckReport::worst() const {
  double w = 0;
  for (const auto& e : entries) {
    if (!e.zero_gradient) w = std::max(w, e.norm_rel_error);
  }
  return w;
}

std::string GradcheckReport::text() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-48s %8s %8s %12s %12s  %s\n", "tensor", "elements",
                "checked", "rel_err", "max_elem_rel", "status");
  out << line;
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-48s %8zu %8zu %12.3e %12.3e  %s\n", e.name.c_str(),
                  e.elements, e.checked, e.norm_rel_error, e.max_rel_error,
                  !e.passed ? "FAIL" : e.zero_gradient ? "ok (zero)" : "ok");
    out << line;
  }
  std::snprintf(line, sizeof line, "scope %s: %zu tensors, worst %.3e, tolerance %.1e -> %s\n",
                std::string(to_string(scope)).c_str(), entries.size(), worst(), tolerance,
                passed() ? "PASS" : "FAIL");
  out << line;
  return out.str();
}

namespace {

/// A differentiable construct: every learnable tensor of `params` is checked.
struct Construct {
  std::string name;
  std::shared_ptr<Model> model;  // when set, its parameters are used
  ParameterSet own;
  std::function<Var(ParamBinder&)> forward;

  ParameterSet& params() { return model ? model->params : own; }
};

double loss_of(Construct& c) {
  ParamBinder bind(c.params());
  return sum_squares(c.forward(bind)).value().item();
}

void check_construct(Construct& c, double tolerance, std::size_t max_coords, Rng& rng,
                     std::vector<GradcheckEntry>& out) {
  ParameterSet& ps = c.params();
  ps.zero_grad();
  {
    GradTape tape;
    ParamBinder bind(ps, tape);
    const Var loss = sum_squares(c.forward(bind));
    tape.backward(loss);
  }
  for (auto& p : ps) {
    if (p.kind != ParamKind::kLearnable) continue;
    GradcheckEntry e;
    e.name = c.name + "/" + p.name;
    e.elements = p.value.size();
    std::vector<std::size_t> coords(e.elements);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords > 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
      std::sort(coords.begin(), coords.end());
    }
    const Tensor analytic = p.grad;
    double diff_sq = 0, a_sq = 0, f_sq = 0, resolution = 0, largest = 0, worst_diff = 0;
    for (std::size_t i : coords) {
      const double orig = p.value[i];
      p.value[i] = orig + kGradcheckStep;
      const double up = loss_of(c);
      p.value[i] = orig - kGradcheckStep;
      const double down = loss_of(c);
      p.value[i] = orig;
      const double a = analytic[i];
      const double f = (up - down) / (2.0 * kGradcheckStep);
      e.max_rel_error = std::max(e.max_rel_error, relative_error(a, f));
      diff_sq += (a - f) * (a - f);
      a_sq += a * a;
      f_sq += f * f;
      resolution = std::max(resolution, fd_resolution(up, down));
      largest = std::max({largest, std::abs(a), std::abs(f)});
      worst_diff = std::max(worst_diff, std::abs(a - f));
    }
    e.checked = coords.size();
    e.norm_rel_error = relative_error_norm(std::sqrt(diff_sq), std::sqrt(a_sq), std::sqrt(f_sq));
    e.zero_gradient = largest <= resolution;
    e.passed = e.zero_gradient ? worst_diff <= resolution : e.norm_rel_error < tolerance;
    out.push_back(std::move(e));
  }
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  return uniform(shape, lo, hi, rng);
}

/// Keeps inputs of kinked functions away from the kink by more than the step.
Tensor away_from_zero(Tensor t) {
  for (double& v : t.values()) {
    if (std::abs(v) < 1e-2) v = v < 0 ? v - 0.1 : v + 0.1;
  }
  return t;
}

void randomize_learnables(ParameterSet& ps, Rng& rng, double std) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& p : ps) {
    if (p.kind != ParamKind::kLearnable) continue;
    for (double& v : p.value.values()) v = dist(rng);
  }
}

std::vector<Construct> primitive_constructs(Rng& rng) {
  std::vector<Construct> cs;
  auto make = [&](std::string name) -> Construct& {
    cs.push_back(Construct{std::move(name), nullptr, {}, {}});
    return cs.back();
  };
  {
    auto& c = make("conv2d");
    const auto x = c.own.add("x", random_tensor({2, 3, 5, 5}, rng));
    const auto w = c.own.add("weight", random_tensor({4, 3, 3, 3}, rng));
    const auto b = c.own.add("bias", random_tensor({4}, rng));
    c.forward = [=](ParamBinder& p) {
      const Var bias = p(b);
      return conv2d(p(x), p(w), &bias, Conv2dOptions{{2, 2}, {1, 1}});
    };
  }
  {
    auto& c = make("depthwise_conv2d");
    const auto x = c.own.add("x", random_tensor({2, 3, 5, 5}, rng));
    const auto w = c.own.add("weight", random_tensor({3, 1, 3, 3}, rng));
    const auto b = c.own.add("bias", random_tensor({3}, rng));
    c.forward = [=](ParamBinder& p) {
      const Var bias = p(b);
      return depthwise_conv2d(p(x), p(w), &bias, Conv2dOptions{{1, 1}, {1, 1}});
    };
  }
  {
    auto& c = make("matmul");
    const auto a = c.own.add("a", random_tensor({2, 3, 4}, rng));
    const auto b = c.own.add("b", random_tensor({1, 4, 2}, rng));
    c.forward = [=](ParamBinder& p) { return matmul(p(a), p(b)); };
  }
  {
    auto& c = make("linear");
    const auto x = c.own.add("x", random_tensor({2, 3, 4}, rng));
    const auto w = c.own.add("weight", random_tensor({4, 5}, rng));
    const auto b = c.own.add("bias", random_tensor({5}, rng));
    c.forward = [=](ParamBinder& p) {
      const Var bias = p(b);
      return linear(p(x), p(w), &bias);
    };
  }
  {
    auto& c = make("softmax");
    const auto x = c.own.add("x", random_tensor({2, 3, 4}, rng));
    c.forward = [=](ParamBinder& p) { return softmax(p(x), -1); };
  }
  {
    // A fixed random weighting keeps the squared-output loss from being
    // nearly constant under normalization.
    auto& c = make("instance_norm");
    const auto x = c.own.add("x", random_tensor({2, 2, 3, 3}, rng));
    const Tensor r = random_tensor({2, 2, 3, 3}, rng);
    c.forward = [=](ParamBinder& p) { return mul(instance_norm(p(x), 1e-5), constant(r)); };
  }
  {
    auto& c = make("layer_norm");
    const auto x = c.own.add("x", random_tensor({2, 3, 4}, rng));
    const auto g = c.own.add("gamma", random_tensor({4}, rng));
    const auto b = c.own.add("beta", random_tensor({4}, rng));
    c.forward = [=](ParamBinder& p) { return layer_norm(p(x), p(g), p(b), 1e-5); };
  }
  {
    auto& c = make("batch_norm");
    const auto x = c.own.add("x", random_tensor({2, 3, 2, 2}, rng));
    const auto g = c.own.add("gamma", random_tensor({3}, rng));
    const auto b = c.own.add("beta", random_tensor({3}, rng));
    const Tensor mean = random_tensor({3}, rng, -0.5, 0.5);
    const Tensor var = random_tensor({3}, rng, 0.5, 2.0);
    c.forward = [=](ParamBinder& p) { return batch_norm(p(x), mean, var, p(g), p(b), 1e-5); };
  }
  {
    auto& c = make("batch_norm_train");
    const auto x = c.own.add("x", random_tensor({3, 2, 2, 2}, rng));
    const auto g = c.own.add("gamma", random_tensor({2}, rng));
    const auto b = c.own.add("beta", random_tensor({2}, rng));
    const Tensor r = random_tensor({3, 2, 2, 2}, rng);
    c.forward = [=](ParamBinder& p) {
      return mul(batch_norm_train(p(x), p(g), p(b), 1e-5), constant(r));
    };
  }
  {
    auto& c = make("gelu");
    const auto x = c.own.add("x", random_tensor({7}, rng));
    c.forward = [=](ParamBinder& p) { return gelu(p(x)); };
  }
  {
    auto& c = make("relu");
    const auto x = c.own.add("x", away_from_zero(random_tensor({7}, rng)));
    c.forward = [=](ParamBinder& p) { return relu(p(x)); };
  }
  {
    auto& c = make("sigmoid");
    const auto x = c.own.add("x", random_tensor({7}, rng));
    c.forward = [=](ParamBinder& p) { return sigmoid(p(x)); };
  }
  {
    auto& c = make("avg_pool2d");
    const auto x = c.own.add("x", random_tensor({1, 2, 5, 5}, rng));
    c.forward = [=](ParamBinder& p) {
      return avg_pool2d(p(x), Pool2dOptions{{3, 3}, {2, 2}, {1, 1}});
    };
  }
  {
    auto& c = make("max_pool2d");
    const auto x = c.own.add("x", random_tensor({1, 2, 4, 4}, rng));
    c.forward = [=](ParamBinder& p) {
      return max_pool2d(p(x), Pool2dOptions{{2, 2}, {2, 2}, {0, 0}});
    };
  }
  {
    auto& c = make("global_avg_pool");
    const auto x = c.own.add("x", random_tensor({2, 3, 2, 2}, rng));
    c.forward = [=](ParamBinder& p) { return global_avg_pool(p(x)); };
  }
  {
    auto& c = make("permute_reshape");
    const auto x = c.own.add("x", random_tensor({2, 3, 4}, rng));
    const Tensor r = random_tensor({4, 6}, rng);
    c.forward = [=](ParamBinder& p) {
      static constexpr std::array<std::size_t, 3> kAxes = {2, 0, 1};
      return mul(reshape(permute(p(x), kAxes), {4, 6}), constant(r));
    };
  }
  {
    auto& c = make("add_mul_scale");
    const auto a = c.own.add("a", random_tensor({3, 4}, rng));
    const auto b = c.own.add("b", random_tensor({3, 4}, rng));
    c.forward = [=](ParamBinder& p) { return scale(mul(add(p(a), p(b)), p(b)), 1.7); };
  }
  {
    auto& c = make("add_batch_broadcast");
    const auto x = c.own.add("x", random_tensor({2, 3, 4}, rng));
    const auto t = c.own.add("table", random_tensor({3, 4}, rng));
    c.forward = [=](ParamBinder& p) { return add_batch_broadcast(p(x), p(t)); };
  }
  {
    auto& c = make("sum");
    const auto x = c.own.add("x", random_tensor({5}, rng));
    c.forward = [=](ParamBinder& p) { return sum(p(x)); };
  }
  {
    auto& c = make("cross_entropy");
    const auto z = c.own.add("logits", random_tensor({3, 4}, rng));
    c.forward = [=](ParamBinder& p) {
      static constexpr std::array<std::size_t, 3> kLabels = {0, 3, 1};
      return cross_entropy(p(z), kLabels);
    };
  }
  return cs;
}

constexpr std::size_t kTinySide = 4;
constexpr std::size_t kTinyDim = 8;

AttentionConfig tiny_attention(ReductionKind kind) {
  AttentionConfig a;
  a.d_model = kTinyDim;
  a.heads = 2;
  a.reduction = 2;
  a.reduction_kind = kind;
  return a;
}

std::vector<Construct> attention_constructs(Rng& rng) {
  std::vector<Construct> cs;
  for (ReductionKind kind :
       {ReductionKind::kDepthwiseConv, ReductionKind::kAvgPool, ReductionKind::kMaxPool}) {
    Construct c{"emsa_" + std::string(to_string(kind)), nullptr, {}, {}};
    const AttentionConfig cfg = tiny_attention(kind);
    const auto params = init_attention_params(c.own, "attn", cfg, rng);
    randomize_learnables(c.own, rng, 0.5);
    const auto x =
        c.own.add("x", random_tensor({2, kTinySide * kTinySide, kTinyDim}, rng, -1.0, 1.0));
    c.forward = [=](ParamBinder& p) {
      return emsa_forward(p(x), kTinySide, kTinySide, cfg, params, p);
    };
    cs.push_back(std::move(c));
  }
  {
    Construct c{"msa", nullptr, {}, {}};
    AttentionConfig cfg = tiny_attention(ReductionKind::kBypass);
    cfg.reduction = 1;
    cfg.use_head_conv = false;
    cfg.use_instance_norm = false;
    const auto params = init_attention_params(c.own, "attn", cfg, rng);
    randomize_learnables(c.own, rng, 0.5);
    const auto x = c.own.add("x", random_tensor({2, 5, kTinyDim}, rng, -1.0, 1.0));
    c.forward = [=](ParamBinder& p) { return msa_forward(p(x), cfg, params, p); };
    cs.push_back(std::move(c));
  }
  return cs;
}

std::vector<Construct> block_constructs(Rng& rng) {
  std::vector<Construct> cs;
  {
    Construct c{"transformer_block", nullptr, {}, {}};
    const auto block = init_block(c.own, "block", AttentionKind::kEmsa,
                                  tiny_attention(ReductionKind::kDepthwiseConv), 4 * kTinyDim,
                                  rng);
    randomize_learnables(c.own, rng, 0.3);
    const auto x =
        c.own.add("x", random_tensor({2, kTinySide * kTinySide, kTinyDim}, rng, -1.0, 1.0));
    c.forward = [=](ParamBinder& p) {
      ForwardContext ctx(p);
      return transformer_block_forward(p(x), kTinySide, kTinySide, block, ctx);
    };
    cs.push_back(std::move(c));
  }
  {
    Construct c{"ffn", nullptr, {}, {}};
    const auto ffn = init_ffn(c.own, "ffn", kTinyDim, 2 * kTinyDim, rng);
    randomize_learnables(c.own, rng, 0.5);
    const auto x = c.own.add("x", random_tensor({2, 3, kTinyDim}, rng, -1.0, 1.0));
    c.forward = [=](ParamBinder& p) {
      ForwardContext ctx(p);
      return ffn_forward(p(x), ffn, ctx);
    };
    cs.push_back(std::move(c));
  }
  for (StemKind kind : {StemKind::kRest, StemKind::kResnet, StemKind::kPvt}) {
    for (NormMode mode : {NormMode::kInference, NormMode::kTraining}) {
      if (kind == StemKind::kPvt && mode == NormMode::kTraining) continue;  // no norm layers
      const std::string suffix = mode == NormMode::kTraining ? "_batchstats" : "";
      Construct c{"stem_" + std::string(to_string(kind)) + suffix, nullptr, {}, {}};
      const auto stem = init_stem(c.own, "stem", kind, 8, rng);
      randomize_learnables(c.own, rng, 1.0);
      const auto x = c.own.add("x", random_tensor({2, 3, 8, 8}, rng, -1.0, 1.0));
      c.forward = [=](ParamBinder& p) {
        ForwardContext ctx(p, mode);
        return stem_forward(p(x), stem, ctx);
      };
      cs.push_back(std::move(c));
    }
  }
  {
    Construct c{"patch_embed", nullptr, {}, {}};
    const auto embed = init_conv(c.own, "embed", 3, 6, 3, rng);
    randomize_learnables(c.own, rng, 0.3);
    const auto x = c.own.add("x", random_tensor({2, 3, 4, 4}, rng, -1.0, 1.0));
    c.forward = [=](ParamBinder& p) {
      ForwardContext ctx(p);
      return patch_embed_forward(p(x), embed, ctx);
    };
    cs.push_back(std::move(c));
  }
  for (PositionalEncodingKind kind :
       {PositionalEncodingKind::kLe, PositionalEncodingKind::kGl, PositionalEncodingKind::kPa}) {
    Construct c{"pe_" + std::string(to_string(kind)), nullptr, {}, {}};
    const auto pe = init_positional(c.own, "pe", kind, 4, 3, 3, rng);
    randomize_learnables(c.own, rng, 0.5);
    const auto x = c.own.add("x", random_tensor({2, 4, 3, 3}, rng, -1.0, 1.0));
    c.forward = [=](ParamBinder& p) {
      ForwardContext ctx(p);
      return positional_encode(p(x), pe, ctx);
    };
    cs.push_back(std::move(c));
  }
  return cs;
}

std::vector<Construct> model_constructs(Rng& rng) {
  Construct c{"tiny_model", nullptr, {}, {}};
  c.model = std::make_shared<Model>(build_model(gradcheck_model_config(), rng()));
  // Default init leaves the logits near 1e-6, where every gradient sits at
  // the relative-error floor; redraw so the outputs are of order one.
  randomize_learnables(c.model->params, rng, 0.2);
  const Tensor image = uniform({2, 3, 32, 32}, -1.0, 1.0, rng);
  const Model* model = c.model.get();
  c.forward = [model, image](ParamBinder& p) {
    ForwardContext ctx(p);
    return model_forward(*model, constant(image), ctx);
  };
  std::vector<Construct> cs;
  cs.push_back(std::move(c));
  return cs;
}

}  // namespace

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.variant = "gradcheck-tiny";
  c.base_width = 8;
  c.depths = {1, 1, 1, 1};
  c.num_classes = 3;
  c.image_size = 32;
  return c;
}

GradcheckReport gradcheck_campaign(GradcheckScope scope, std::uint64_t seed, double tolerance,
                                   std::size_t max_coords) {
  Rng rng(seed);
  std::vector<Construct> constructs;
  switch (scope) {
    case GradcheckScope::kPrimitive: constructs = primitive_constructs(rng); break;
    case GradcheckScope::kAttention: constructs = attention_constructs(rng); break;
    case GradcheckScope::kBlock: constructs = block_constructs(rng); break;
    case GradcheckScope::kModel: constructs = model_constructs(rng); break;
  }
  GradcheckReport report;
  report.scope = scope;
  report.tolerance = tolerance;
  for (auto& c : constructs) check_construct(c, tolerance, max_coords, rng, report.entries);
  return report;
}

// ---- benchmark ------------------------------------------------------------

std::string_view to_string(Precision precision) {
  return precision == Precision::kF32 ? "f32" : "f64";
}

Precision parse_precision(std::string_view text) {
  if (text == "f32") return Precision::kF32;
  if (text == "f64") return Precision::kF64;
  throw std::invalid_argument("unknown precision '" + std::string(text) +
                              "' (expected f64 or f32)");
}

std::string BenchResult::csv_header() {
  return "kind,n,d_model,heads,s,precision,iterations,median_s,macs";
}

std::string BenchResult::csv_row() const {
  char line[256];
  std::snprintf(line, sizeof line, "%s,%zu,%zu,%zu,%zu,%s,%zu,%.6f,%llu",
                kind == AttentionKind::kMsa ? "msa" : "emsa", geometry.n, geometry.d_model,
                geometry.heads, kind == AttentionKind::kMsa ? std::size_t{1} : geometry.reduction,
                std::string(to_string(precision)).c_str(), iterations, median_seconds,
                static_cast<unsigned long long>(macs));
  return line;
}

namespace {

template <typename T>
BenchResult run_bench(AttentionKind kind, const BenchGeometry& g, std::size_t iterations,
                      Precision precision, std::uint64_t seed) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(g.n))));
  if (side * side != g.n) {
    throw std::invalid_argument("bench token count n = " + std::to_string(g.n) +
                                " is not a perfect square");
  }
  if (iterations < 3) throw std::invalid_argument("bench needs at least 3 iterations");
  AttentionConfig cfg;
  cfg.d_model = g.d_model;
  cfg.heads = g.heads;
  cfg.reduction = kind == AttentionKind::kMsa ? 1 : g.reduction;
  cfg.reduction_kind = g.reduction_kind;
  if (kind == AttentionKind::kMsa) {
    cfg.use_head_conv = false;
    cfg.use_instance_norm = false;
  }
  cfg.validate();
  Rng rng(seed);
  ParameterSet params;
  const AttentionParams ap = init_attention_params(params, "attn", cfg, rng);
  const std::vector<BasicTensor<T>> values = params.values_as<T>();
  const BasicTensor<T> x = uniform({1, g.n, g.d_model}, -1.0, 1.0, rng).template cast<T>();

  auto run = [&] {
    return kind == AttentionKind::kMsa
               ? msa_forward<T>(x, cfg, ap, values)
               : emsa_forward<T>(x, side, side, cfg, ap, values);
  };

  BenchResult r;
  r.kind = kind;
  r.geometry = g;
  r.precision = precision;
  r.iterations = iterations;
  {
    cost::Collector counter(/*dry_run=*/true);
    run();
    r.macs = counter.total().macs;
  }
  for (std::size_t i = 0; i < kBenchWarmups; ++i) run();
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = run();
    const auto t1 = std::chrono::steady_clock::now();
    if (!out.all_finite()) throw std::runtime_error("bench produced non-finite output");
    r.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::vector<double> sorted = r.seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_seconds =
      sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return r;
}

}  // namespace

BenchResult bench_attention(AttentionKind kind, const BenchGeometry& geometry,
                            std::size_t iterations, Precision precision, std::uint64_t seed) {
  return precision == Precision::kF32
             ? run_bench<float>(kind, geometry, iterations, precision, seed)
             : run_bench<double>(kind, geometry, iterations, precision, seed);
}

// ---- toy training ---------------------------------------------------------

ToyTask make_toy_task(std::size_t classes, std::size_t size, std::size_t per_class,
                      std::uint64_t seed, double noise) {
  if (classes < 2) throw std::invalid_argument("toy task needs at least 2 classes");
  if (size < 8 || size % 4 != 0) {
    throw std::invalid_argument("toy task image size must be a multiple of 4, >= 8");
  }
  if (per_class == 0) throw std::invalid_argument("toy task needs at least one sample per class");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t orientations = (classes + 1) / 2;
  const double s = static_cast<double>(size);
  const double sigma = s / 6.0;
  const double wavelength = s / 5.0;
  const std::array<double, 3> gain = {1.0, 0.8, 0.6};

  ToyTask task;
  task.classes = classes;
  task.size = size;
  const std::size_t count = classes * per_class;
  task.images = Tensor({count, 3, size, size});
  task.labels.resize(count);
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % classes;  // interleaved, hence balanced
    task.labels[i] = c;
    const double theta = std::numbers::pi * static_cast<double>(c / 2) /
                         static_cast<double>(orientations);
    const double cx = (c % 2 == 0 ? 0.3 : 0.7) * s + (unit(rng) - 0.5) * s / 8.0;
    const double cy = 0.5 * s + (unit(rng) - 0.5) * s / 8.0;
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double along = dx * std::cos(theta) + dy * std::sin(theta);
        const double envelope = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        const double v = envelope * std::cos(2.0 * std::numbers::pi * along / wavelength + phase);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          task.images[(i * 3 + ch) * plane + y * size + x] = gain[ch] * v + noise * gauss(rng);
        }
      }
    }
  }
  return task;
}

ModelConfig toy_model_config(std::size_t classes, PositionalEncodingKind pe, StemKind stem) {
  ModelConfig c;
  c.variant = "toy";
  c.base_width = 16;
  c.depths = {1, 1, 1, 1};
  c.num_classes = classes;
  c.pe = pe;
  c.stem = stem;
  c.image_size = 64;
  return c;
}

std::string TrainResult::csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
  out << losses.size() << ',' << final_loss << '\n';
  return out.str();
}

TrainResult toy_train(const ModelConfig& config, const ToyTask& task, std::size_t steps,
                      double lr, std::uint64_t seed, double momentum) {
  if (config.num_classes != task.classes) {
    throw std::invalid_argument("model has " + std::to_string(config.num_classes) +
                                " classes but the task has " + std::to_string(task.classes));
  }
  if (!(lr >= 0)) throw std::invalid_argument("learning rate must be >= 0");
  Model model = build_model(config, seed);
  std::vector<Tensor> velocity;
  for (const auto& p : model.params) velocity.emplace_back(p.value.shape());

  // One full-batch pass; returns (loss, accuracy) and leaves gradients in
  // the parameters when `update` is set.
  auto pass = [&](bool update) {
    model.params.zero_grad();
    GradTape tape;
    ParamBinder bind(model.params, tape);
    ForwardContext ctx(bind, NormMode::kTraining);
    const Var logits = model_forward(model, constant_ref(task.images), ctx);
    const Var loss = cross_entropy(logits, task.labels);
    std::size_t correct = 0;
    const Tensor& z = logits.value();
    for (std::size_t b = 0; b < task.labels.size(); ++b) {
      const double* row = z.data() + b * task.classes;
      const auto best = static_cast<std::size_t>(std::max_element(row, row + task.classes) - row);
      correct += best == task.labels[b] ? 1 : 0;
    }
    if (update) {
      tape.backward(loss);
      apply_stat_updates(model.params, ctx);
    }
    return std::pair{loss.value().item(),
                     static_cast<double>(correct) / static_cast<double>(task.labels.size())};
  };

  TrainResult r;
  for (std::size_t step = 0; step < steps; ++step) {
    const double loss = pass(true).first;
    r.losses.push_back(loss);
    if (!std::isfinite(loss)) {
      r.diverged_at = step;
      r.final_loss = loss;
      return r;
    }
    std::size_t i = 0;
    for (auto& p : model.params) {
      Tensor& v = velocity[i++];
      if (p.kind != ParamKind::kLearnable) continue;
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum * v[j] + p.grad[j];
        p.value[j] -= lr * v[j];
      }
    }
  }
  const auto [loss, accuracy] = pass(false);
  r.final_loss = loss;
  r.final_accuracy = accuracy;
  if (!std::isfinite(loss)) r.diverged_at = steps;
  return r;
}

}  // namespace rest
