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

#include "rest/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "rest/cost.hpp"

namespace rest {

std::vector<StageSpec> ModelConfig::stages() const {
  std::vector<StageSpec> out;
  for (std::size_t i = 0; i < kStageCount; ++i) {
    StageSpec s;
    s.depth = depths[i];
    s.heads = heads[i];
    s.reduction = reductions[i];
    s.channels = base_width << i;
    s.mlp_width = mlp_ratio * s.channels;
    s.pe_kind = pe;
    s.reduction_kind = reduction_kind;
    out.push_back(s);
  }
  return out;
}

AttentionConfig ModelConfig::attention_config(std::size_t stage) const {
  const StageSpec s = stages().at(stage);
  AttentionConfig a;
  a.d_model = s.channels;
  a.heads = s.heads;
  a.reduction = s.reduction;
  a.reduction_kind = s.reduction_kind;
  a.use_head_conv = head_conv;
  a.use_instance_norm = instance_norm;
  return a;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  if (base_width == 0) fail("base_width must be >= 1");
  if (stem == StemKind::kRest && base_width % 2 != 0) {
    fail("base_width " + std::to_string(base_width) + " must be even for the rest stem");
  }
  if (mlp_ratio == 0) fail("mlp_ratio must be >= 1");
  if (num_classes == 0) fail("num_classes must be >= 1");
  if (image_size == 0) fail("image_size must be >= 1");
  for (std::size_t i = 0; i < kStageCount; ++i) {
    const std::string stage = "stage " + std::to_string(i + 1) + ": ";
    if (depths[i] == 0) fail(stage + "depth must be >= 1");
    if (heads[i] == 0) fail(stage + "heads must be >= 1");
    if (reductions[i] == 0) fail(stage + "reduction must be >= 1");
    const std::size_t c = base_width << i;
    if (c % heads[i] != 0) {
      fail(stage + "channels " + std::to_string(c) + " not divisible by heads " +
           std::to_string(heads[i]));
    }
    if (reductions[i] > 1 && reduction_kind == ReductionKind::kBypass) {
      fail(stage + "bypass reduction requires s == 1, got " + std::to_string(reductions[i]));
    }
  }
}

ModelConfig variant_config(std::string_view name) {
  ModelConfig c;
  c.variant = std::string(name);
  if (name == "lite") {
    c.base_width = 64;
    c.depths = {2, 2, 2, 2};
  } else if (name == "small") {
    c.base_width = 64;
    c.depths = {2, 2, 6, 2};
  } else if (name == "base") {
    c.base_width = 96;
    c.depths = {2, 2, 6, 2};
  } else if (name == "large") {
    c.base_width = 96;
    c.depths = {2, 2, 18, 2};
  } else {
    throw std::invalid_argument("unknown variant '" + std::string(name) +
                                "' (expected lite, small, base or large)");
  }
  return c;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != value.size() || value.front() == '-') {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" +
                                value + "'");
  }
  return static_cast<std::size_t>(v);
}

std::array<std::size_t, kStageCount> parse_quad(const std::string& key, const std::string& value) {
  std::array<std::size_t, kStageCount> out{};
  std::stringstream ss(value);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == kStageCount) break;
    out[i++] = parse_count(key, trim(item));
  }
  if (i != kStageCount || std::getline(ss, item, ',')) {
    throw std::invalid_argument("config: " + key + " expects 4 comma-separated values, got '" +
                                value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1") return true;
  if (value == "false" || value == "off" || value == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + value + "'");
}

std::string join(const std::array<std::size_t, kStageCount>& a) {
  std::string out;
  for (std::size_t i = 0; i < a.size(); ++i) out += (i ? "," : "") + std::to_string(a[i]);
  return out;
}

}  // namespace

ModelConfig parse_model_config(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + body + "'");
    }
    entries.emplace_back(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }

  ModelConfig c;
  for (const auto& [key, value] : entries) {
    if (key == "variant" && value != "custom") c = variant_config(value);
  }
  for (const auto& [key, value] : entries) {
    if (key == "variant") {
      c.variant = value;
    } else if (key == "base_width") {
      c.base_width = parse_count(key, value);
    } else if (key == "depths") {
      c.depths = parse_quad(key, value);
    } else if (key == "heads") {
      c.heads = parse_quad(key, value);
    } else if (key == "reductions") {
      c.reductions = parse_quad(key, value);
    } else if (key == "stem") {
      c.stem = parse_stem_kind(value);
    } else if (key == "pe") {
      c.pe = parse_pe_kind(value);
    } else if (key == "reduction_kind") {
      c.reduction_kind = parse_reduction_kind(value);
    } else if (key == "num_classes") {
      c.num_classes = parse_count(key, value);
    } else if (key == "mlp_ratio") {
      c.mlp_ratio = parse_count(key, value);
    } else if (key == "head_conv") {
      c.head_conv = parse_bool(key, value);
    } else if (key == "instance_norm") {
      c.instance_norm = parse_bool(key, value);
    } else if (key == "image_size") {
      c.image_size = parse_count(key, value);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

std::string format_model_config(const ModelConfig& c) {
  std::ostringstream out;
  out << "variant = " << c.variant << "\n"
      << "base_width = " << c.base_width << "\n"
      << "depths = " << join(c.depths) << "\n"
      << "heads = " << join(c.heads) << "\n"
      << "reductions = " << join(c.reductions) << "\n"
      << "mlp_ratio = " << c.mlp_ratio << "\n"
      << "stem = " << to_string(c.stem) << "\n"
      << "pe = " << to_string(c.pe) << "\n"
      << "reduction_kind = " << to_string(c.reduction_kind) << "\n"
      << "head_conv = " << (c.head_conv ? "true" : "false") << "\n"
      << "instance_norm = " << (c.instance_norm ? "true" : "false") << "\n"
      << "num_classes = " << c.num_classes << "\n"
      << "image_size = " << c.image_size << "\n";
  return out.str();
}

std::vector<std::array<std::size_t, 2>> stage_geometry(const ModelConfig& config, std::size_t h,
                                                       std::size_t w) {
  if (h % 4 != 0 || w % 4 != 0) {
    throw DivisibilityError("stem: input " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not divisible by 4");
  }
  std::vector<std::array<std::size_t, 2>> out;
  h /= 4;
  w /= 4;
  for (std::size_t i = 0; i < kStageCount; ++i) {
    const std::string stage = "stage " + std::to_string(i + 1) + ": ";
    if (i > 0) {
      if (h % 2 != 0 || w % 2 != 0) {
        throw DivisibilityError(stage + "patch embedding needs even extents, got " +
                                std::to_string(h) + "x" + std::to_string(w));
      }
      h /= 2;
      w /= 2;
    }
    const std::size_t s = config.reductions[i];
    if (h % s != 0 || w % s != 0) {
      throw DivisibilityError(stage + "map " + std::to_string(h) + "x" + std::to_string(w) +
                              " is not divisible by reduction factor " + std::to_string(s));
    }
    out.push_back({h, w});
  }
  return out;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(seed);
  const auto specs = config.stages();
  m.stem = init_stem(m.params, "stem", config.stem, config.base_width, rng);
  std::size_t side = config.image_size / 4;
  for (std::size_t i = 0; i < kStageCount; ++i) {
    const StageSpec& spec = specs[i];
    const std::string prefix = "stage" + std::to_string(i + 1);
    StageParams st;
    st.spec = spec;
    if (i > 0) {
      st.embed = init_conv(m.params, prefix + ".embed", specs[i - 1].channels, spec.channels, 3,
                           rng);
      side /= 2;
    }
    st.pe = init_positional(m.params, prefix + ".pe", spec.pe_kind, spec.channels,
                            std::max<std::size_t>(side, 1), std::max<std::size_t>(side, 1), rng);
    const AttentionConfig attn = config.attention_config(i);
    for (std::size_t j = 0; j < spec.depth; ++j) {
      st.blocks.push_back(init_block(m.params, prefix + ".block" + std::to_string(j),
                                     AttentionKind::kEmsa, attn, spec.mlp_width, rng));
    }
    m.stages.push_back(std::move(st));
  }
  const std::size_t last = specs.back().channels;
  m.head_weight =
      m.params.add("head.weight", truncated_normal({last, config.num_classes}, 0.02, rng));
  m.head_bias = m.params.add("head.bias", Tensor({config.num_classes}));
  return m;
}

Var model_forward(const Model& model, const Var& image, ForwardContext& ctx,
                  const ProbeRequest* probe) {
  if (image.shape().size() != 4 || image.dim(1) != 3) {
    throw ShapeError("model expects an image [B,3,H,W], got " + to_string(image.shape()));
  }
  if (probe != nullptr &&
      (probe->stage >= model.stages.size() ||
       probe->block >= model.stages[probe->stage].blocks.size())) {
    throw std::invalid_argument("probe target stage " + std::to_string(probe->stage + 1) +
                                " block " + std::to_string(probe->block) + " does not exist");
  }
  const auto geometry = stage_geometry(model.config, image.dim(2), image.dim(3));
  Var x;
  {
    cost::Scope s("stem");
    x = stem_forward(image, model.stem, ctx);
  }
  for (std::size_t i = 0; i < model.stages.size(); ++i) {
    const StageParams& st = model.stages[i];
    cost::Scope stage_scope("stage" + std::to_string(i + 1));
    if (st.embed) {
      cost::Scope s("embed");
      x = patch_embed_forward(x, *st.embed, ctx);
    }
    {
      cost::Scope s("pe");
      x = positional_encode(x, st.pe, ctx);
    }
    const auto [h, w] = geometry[i];
    Var tokens = map_to_tokens(x);
    for (std::size_t j = 0; j < st.blocks.size(); ++j) {
      cost::Scope s("block" + std::to_string(j));
      AttentionProbe* out =
          probe != nullptr && probe->stage == i && probe->block == j ? probe->out : nullptr;
      tokens = transformer_block_forward(tokens, h, w, st.blocks[j], ctx, out);
    }
    x = tokens_to_map(tokens, h, w);
  }
  cost::Scope s("head");
  const Var pooled = global_avg_pool(x);
  const Var b = ctx.bind(model.head_bias);
  return linear(pooled, ctx.bind(model.head_weight), &b);
}

Tensor model_forward(const Model& model, const Tensor& image, const ProbeRequest* probe) {
  ParamBinder bind(model.params);
  ForwardContext ctx(bind);
  return model_forward(model, constant_ref(image), ctx, probe).value();
}

}  // namespace rest
