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

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "oracles.hpp"
#include "rest/audit.hpp"
#include "rest/model.hpp"

using namespace rest;

namespace {

ModelConfig tiny_config(PositionalEncodingKind pe = PositionalEncodingKind::kPa) {
  ModelConfig c;
  c.variant = "tiny";
  c.base_width = 8;
  c.depths = {1, 1, 1, 1};
  c.num_classes = 5;
  c.pe = pe;
  c.image_size = 64;
  return c;
}

Tensor image(std::size_t b, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  return uniform({b, 3, side, side}, -1.0, 1.0, rng);
}

}  // namespace

TEST_CASE("named variants") {
  const ModelConfig lite = variant_config("lite");
  CHECK(lite.base_width == 64);
  CHECK(lite.depths == std::array<std::size_t, 4>{2, 2, 2, 2});
  CHECK(variant_config("small").depths == std::array<std::size_t, 4>{2, 2, 6, 2});
  CHECK(variant_config("base").base_width == 96);
  CHECK(variant_config("large").depths == std::array<std::size_t, 4>{2, 2, 18, 2});
  CHECK_THROWS_AS(variant_config("huge"), std::invalid_argument);
  for (const char* v : {"lite", "small", "base", "large"}) {
    const ModelConfig c = variant_config(v);
    CHECK(c.heads == std::array<std::size_t, 4>{1, 2, 4, 8});
    CHECK(c.reductions == std::array<std::size_t, 4>{8, 4, 2, 1});
    const auto stages = c.stages();
    REQUIRE(stages.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(stages[i].channels == (c.base_width << i));
      CHECK(stages[i].mlp_width == 4 * stages[i].channels);
    }
  }
}

TEST_CASE("config text round trip and overrides") {
  const ModelConfig c = parse_model_config(
      "# comment\nvariant = small\npe = gl   # trailing\nnum_classes = 10\nreduction_kind = avg\n");
  CHECK(c.depths == std::array<std::size_t, 4>{2, 2, 6, 2});
  CHECK(c.pe == PositionalEncodingKind::kGl);
  CHECK(c.num_classes == 10);
  CHECK(c.reduction_kind == ReductionKind::kAvgPool);
  const ModelConfig again = parse_model_config(format_model_config(c));
  CHECK(format_model_config(again) == format_model_config(c));

  CHECK_THROWS_AS(parse_model_config("nonsense"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("colour = red"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("depths = 1,2,3"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("num_classes = -3"), std::invalid_argument);
  CHECK_THROWS_AS(parse_model_config("head_conv = maybe"), std::invalid_argument);
}

TEST_CASE("config validation names the field") {
  auto message = [](ModelConfig c) {
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  ModelConfig c = tiny_config();
  CHECK(message(c).empty());
  c.heads = {3, 2, 4, 8};
  CHECK(message(c).find("heads") != std::string::npos);
  c = tiny_config();
  c.reduction_kind = ReductionKind::kBypass;
  CHECK(message(c).find("bypass") != std::string::npos);
  c.reductions = {1, 1, 1, 1};
  CHECK(message(c).empty());
  c = tiny_config();
  c.base_width = 7;
  CHECK(message(c).find("even") != std::string::npos);
  c = tiny_config();
  c.depths[2] = 0;
  CHECK(message(c).find("stage 3") != std::string::npos);
}

TEST_CASE("stage geometry") {
  const auto g = stage_geometry(variant_config("lite"), 224, 224);
  REQUIRE(g.size() == 4);
  CHECK(g[0] == std::array<std::size_t, 2>{56, 56});
  CHECK(g[3] == std::array<std::size_t, 2>{7, 7});
  CHECK(stage_geometry(variant_config("lite"), 256, 320)[3] == std::array<std::size_t, 2>{8, 10});
  CHECK_THROWS_AS(stage_geometry(variant_config("lite"), 225, 224), DivisibilityError);
  CHECK_THROWS_AS(stage_geometry(variant_config("lite"), 208, 224), DivisibilityError);
}

TEST_CASE("forward shapes, finiteness and determinism") {
  const Model m = build_model(tiny_config(), 3);
  const Tensor x = image(2, 64, 1);
  const Tensor y = model_forward(m, x);
  CHECK(y.shape() == Shape{2, 5});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor z = model_forward(build_model(tiny_config(), seed), image(1, 32, seed));
    for (double v : z.values()) CHECK(std::isfinite(v));
  }
  const Model again = build_model(tiny_config(), 3);
  CHECK(again.params.checksum() == m.params.checksum());
  CHECK(oracle::max_abs_diff(model_forward(again, x), y) == 0.0);
  CHECK(build_model(tiny_config(), 4).params.checksum() != m.params.checksum());
  CHECK_THROWS_AS(model_forward(m, image(1, 60, 0)), DivisibilityError);
  CHECK_THROWS_AS(model_forward(m, Tensor({1, 1, 64, 64})), ShapeError);
}

TEST_CASE("batch entries are independent") {
  const Model m = build_model(tiny_config(), 9);
  const Tensor x = image(2, 32, 2);
  const Tensor both = model_forward(m, x);
  Tensor first({1, 3, 32, 32});
  std::copy(x.values().begin(), x.values().begin() + first.size(), first.values().begin());
  const Tensor one = model_forward(m, first);
  for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(one[k] - both[k]) <= 1e-12);
}

TEST_CASE("every stem and encoding builds and runs") {
  for (StemKind stem : {StemKind::kRest, StemKind::kResnet, StemKind::kPvt})
    for (PositionalEncodingKind pe : {PositionalEncodingKind::kNone, PositionalEncodingKind::kLe,
                                      PositionalEncodingKind::kGl, PositionalEncodingKind::kPa}) {
      ModelConfig c = tiny_config(pe);
      c.stem = stem;
      const Model m = build_model(c, 1);
      CHECK(model_forward(m, image(1, 64, 0)).shape() == Shape{1, 5});
    }
}

TEST_CASE("LE models are tied to their input size") {
  const Model le = build_model(tiny_config(PositionalEncodingKind::kLe), 0);
  CHECK_NOTHROW(model_forward(le, image(1, 64, 0)));
  CHECK_THROWS_AS(model_forward(le, image(1, 96, 0)), FixedLengthError);
  const Model pa = build_model(tiny_config(PositionalEncodingKind::kPa), 0);
  CHECK(model_forward(pa, image(1, 96, 0)).shape() == Shape{1, 5});
}

TEST_CASE("weight files") {
  Model m = build_model(tiny_config(), 5);
  const std::string bytes = encode_weights(m.params);

  SUBCASE("round trip restores float-rounded values") {
    Model other = build_model(tiny_config(), 6);
    decode_weights(other.params, bytes);
    auto it = other.params.begin();
    for (const auto& p : m.params) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        CHECK(it->value[i] == static_cast<double>(static_cast<float>(p.value[i])));
      }
      ++it;
    }
    CHECK(encode_weights(other.params) == bytes);
  }
  SUBCASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "rest_unit_weights.bin";
    save_weights(m.params, path);
    Model other = build_model(tiny_config(), 6);
    load_weights(other.params, path);
    CHECK(encode_weights(other.params) == bytes);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_weights(other.params, path), WeightFormatError);
  }
  SUBCASE("malformed files are rejected and leave the model untouched") {
    const std::uint64_t before = m.params.checksum();
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_weights(m.params, bad), WeightFormatError);
    CHECK_THROWS_AS(decode_weights(m.params, bytes.substr(0, bytes.size() - 3)), WeightFormatError);
    CHECK_THROWS_AS(decode_weights(m.params, bytes.substr(0, 5)), WeightFormatError);
    CHECK_THROWS_AS(decode_weights(m.params, bytes + "x"), WeightFormatError);
    CHECK(m.params.checksum() == before);
  }
  SUBCASE("mismatched models are rejected") {
    ModelConfig wider = tiny_config();
    wider.base_width = 16;
    Model w = build_model(wider, 0);
    CHECK_THROWS_AS(decode_weights(w.params, bytes), WeightFormatError);  // shapes
    ModelConfig deeper = tiny_config();
    deeper.depths = {2, 1, 1, 1};
    Model d = build_model(deeper, 0);
    CHECK_THROWS_AS(decode_weights(d.params, bytes), WeightFormatError);  // count
    ModelConfig gl = tiny_config(PositionalEncodingKind::kGl);
    Model g = build_model(gl, 0);
    // PA carries a bias the GL encoding lacks.
    CHECK_THROWS_AS(decode_weights(g.params, bytes), WeightFormatError);
  }
}
