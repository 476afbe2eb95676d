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

#include <random>

#include "oracles.hpp"
#include "rest/audit.hpp"
#include "rest/blocks.hpp"

using namespace rest;

namespace {

Tensor eval(const std::function<Var(ForwardContext&)>& f, const ParameterSet& ps) {
  ParamBinder bind(ps);
  ForwardContext ctx(bind);
  return f(ctx).value();
}

void fill(ParameterSet& ps, ParamRef r, double v) {
  std::fill(ps[r].value.values().begin(), ps[r].value.values().end(), v);
}

}  // namespace

TEST_CASE("ffn") {
  ParameterSet ps;
  Rng rng(0);
  SUBCASE("zero weights give zero output") {
    const FfnParams p = init_ffn(ps, "ffn", 4, 16, rng);
    for (auto r : {p.w1, p.b1, p.w2, p.b2}) fill(ps, r, 0.0);
    std::mt19937_64 g(1);
    const Tensor x = oracle::random_tensor({2, 3, 4}, g);
    const Tensor y = eval([&](ForwardContext& c) { return ffn_forward(constant(x), p, c); }, ps);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("GELU saturation with identity weights") {
    const FfnParams p = init_ffn(ps, "ffn", 2, 2, rng);
    for (auto r : {p.w1, p.b1, p.w2, p.b2}) fill(ps, r, 0.0);
    ps[p.w1].value[0] = ps[p.w1].value[3] = 1.0;
    ps[p.w2].value[0] = ps[p.w2].value[3] = 1.0;
    const Tensor x({1, 1, 2}, std::vector<double>{100.0, -100.0});
    const Tensor y = eval([&](ForwardContext& c) { return ffn_forward(constant(x), p, c); }, ps);
    CHECK(y[0] == doctest::Approx(100.0));
    CHECK(std::abs(y[1]) < 1e-12);
  }
  SUBCASE("random case matches the formula") {
    const FfnParams p = init_ffn(ps, "ffn", 3, 5, rng);
    std::mt19937_64 g(2);
    oracle::randomize(ps, g);
    const Tensor x = oracle::random_tensor({1, 2, 3}, g);
    const Tensor y = eval([&](ForwardContext& c) { return ffn_forward(constant(x), p, c); }, ps);
    const Tensor& w1 = ps[p.w1].value;
    const Tensor& b1 = ps[p.b1].value;
    const Tensor& w2 = ps[p.w2].value;
    const Tensor& b2 = ps[p.b2].value;
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t o = 0; o < 3; ++o) {
        double acc = b2[o];
        for (std::size_t hdn = 0; hdn < 5; ++hdn) {
          double pre = b1[hdn];
          for (std::size_t i = 0; i < 3; ++i) pre += x[t * 3 + i] * w1[i * 5 + hdn];
          acc += oracle::gelu(pre) * w2[hdn * 3 + o];
        }
        CHECK(std::abs(y[t * 3 + o] - acc) <= 1e-12);
      }
  }
}

TEST_CASE("transformer block is the identity with zero output weights") {
  for (AttentionKind kind : {AttentionKind::kMsa, AttentionKind::kEmsa}) {
    ParameterSet ps;
    Rng rng(1);
    AttentionConfig a;
    a.d_model = 8;
    a.heads = 2;
    a.reduction = 2;
    const BlockParams p = init_block(ps, "block", kind, a, 32, rng);
    std::mt19937_64 g(3);
    oracle::randomize(ps, g);
    fill(ps, p.attn.proj_weight, 0.0);
    fill(ps, p.attn.proj_bias, 0.0);
    fill(ps, p.ffn.w2, 0.0);
    fill(ps, p.ffn.b2, 0.0);
    const Tensor x = oracle::random_tensor({2, 16, 8}, g);
    const Tensor y = eval(
        [&](ForwardContext& c) { return transformer_block_forward(constant(x), 4, 4, p, c); }, ps);
    CHECK(oracle::max_abs_diff(x, y) == 0.0);
  }
}

TEST_CASE("block output shape at every stage geometry") {
  const std::size_t sides[] = {56, 28, 14, 7};
  const std::size_t heads[] = {1, 2, 4, 8};
  const std::size_t red[] = {8, 4, 2, 1};
  for (int i = 0; i < 4; ++i) {
    ParameterSet ps;
    Rng rng(i);
    AttentionConfig a;
    a.d_model = 8 * heads[i];
    a.heads = heads[i];
    a.reduction = red[i];
    const BlockParams p = init_block(ps, "b", AttentionKind::kEmsa, a, 4 * a.d_model, rng);
    const std::size_t n = sides[i] * sides[i];
    cost::Collector dry(true);
    const Tensor y = eval(
        [&](ForwardContext& c) {
          return transformer_block_forward(constant(Tensor({1, n, a.d_model})), sides[i], sides[i],
                                           p, c);
        },
        ps);
    CHECK(y.shape() == Shape{1, n, a.d_model});
  }
}

TEST_CASE("stems") {
  for (StemKind kind : {StemKind::kRest, StemKind::kResnet, StemKind::kPvt}) {
    ParameterSet ps;
    Rng rng(0);
    const StemParams p = init_stem(ps, "stem", kind, 8, rng);
    const Tensor y = eval(
        [&](ForwardContext& c) { return stem_forward(constant(Tensor({1, 3, 64, 64})), p, c); }, ps);
    CHECK(y.shape() == Shape{1, 8, 16, 16});
    CHECK_THROWS_AS(
        eval([&](ForwardContext& c) { return stem_forward(constant(Tensor({1, 3, 66, 64})), p, c); },
             ps),
        DivisibilityError);
  }
  SUBCASE("224 input gives a 56x56 map") {
    ParameterSet ps;
    Rng rng(0);
    const StemParams p = init_stem(ps, "stem", StemKind::kRest, 64, rng);
    cost::Collector dry(true);
    const Tensor y = eval(
        [&](ForwardContext& c) { return stem_forward(constant(Tensor({1, 3, 224, 224})), p, c); },
        ps);
    CHECK(y.shape() == Shape{1, 64, 56, 56});
  }
  SUBCASE("rest stem parameter count") {
    const std::uint64_t C = 64, h = C / 2;
    ParameterSet ps;
    Rng rng(0);
    init_stem(ps, "stem", StemKind::kRest, C, rng);
    const ParamCount pc = count_params(ps);
    const std::uint64_t convs = (3 * h * 9 + h) + (h * h * 9 + h) + (h * C * 9 + C);
    CHECK(pc.learnable == convs + 2 * (2 * h));  // two BN affine pairs
    CHECK(pc.buffers == 2 * (2 * h));             // two BN running stat pairs
  }
}

TEST_CASE("patch embedding") {
  ParameterSet ps;
  Rng rng(0);
  const ConvParams p = init_conv(ps, "embed", 2, 4, 3, rng);
  SUBCASE("halves the sides and doubles the channels") {
    const Tensor y = eval(
        [&](ForwardContext& c) { return patch_embed_forward(constant(Tensor({1, 2, 56, 56})), p, c); },
        ps);
    CHECK(y.shape() == Shape{1, 4, 28, 28});
  }
  SUBCASE("constant input and uniform kernel") {
    fill(ps, p.weight, 0.5);
    fill(ps, *p.bias, 0.0);
    const Tensor y = eval(
        [&](ForwardContext& c) {
          return patch_embed_forward(constant(Tensor({1, 2, 8, 8}, 3.0)), p, c);
        },
        ps);
    // Interior output (1,1) sees a full 3x3 window: 2 channels * 9 taps * 0.5 * 3.
    CHECK(y.at({0, 0, 1, 1}) == doctest::Approx(27.0));
  }
  SUBCASE("odd extents are rejected") {
    CHECK_THROWS_AS(
        eval([&](ForwardContext& c) { return patch_embed_forward(constant(Tensor({1, 2, 7, 8})), p, c); },
             ps),
        DivisibilityError);
  }
}

TEST_CASE("positional encodings") {
  std::mt19937_64 g(5);
  const Tensor x = oracle::random_tensor({2, 4, 3, 5}, g);
  auto run = [&](const PositionalParams& p, const ParameterSet& ps, const Tensor& in) {
    return eval([&](ForwardContext& c) { return positional_encode(constant(in), p, c); }, ps);
  };
  SUBCASE("PA with zero conv is 0.5 x, gates lie in (0,1)") {
    ParameterSet ps;
    Rng rng(0);
    const PositionalParams p = init_positional(ps, "pe", PositionalEncodingKind::kPa, 4, 0, 0, rng);
    fill(ps, *p.weight, 0.0);
    fill(ps, *p.bias, 0.0);
    const Tensor y = run(p, ps, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == 0.5 * x[i]);
    oracle::randomize(ps, g, 3.0);
    const Tensor z = run(p, ps, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(z[i]) < std::abs(x[i]));
    CHECK(run(p, ps, Tensor({1, 4, 7, 2})).shape() == Shape{1, 4, 7, 2});
  }
  SUBCASE("GL closed forms and dense-matrix oracle") {
    ParameterSet ps;
    Rng rng(0);
    const PositionalParams p = init_positional(ps, "pe", PositionalEncodingKind::kGl, 4, 0, 0, rng);
    CHECK(oracle::max_abs_diff(run(p, ps, x), x) == 0.0);  // zero init is the identity
    fill(ps, *p.weight, 1.0);
    const Tensor twice = run(p, ps, x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(twice[i] == 2.0 * x[i]);
    oracle::randomize(ps, g);
    // Block-diagonal dense map: y[c] = sum_c' (I + diag(w))[c,c'] x[c'].
    const Tensor y = run(p, ps, x);
    const Tensor& w = ps[*p.weight].value;
    double worst = 0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t s = 0; s < 15; ++s) {
          double acc = 0;
          for (std::size_t c2 = 0; c2 < 4; ++c2) {
            const double m = (c == c2 ? 1.0 : 0.0) + (c == c2 ? w[c] : 0.0);
            acc += m * x[(b * 4 + c2) * 15 + s];
          }
          worst = std::max(worst, std::abs(acc - y[(b * 4 + c) * 15 + s]));
        }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("LE adds the table and rejects other lengths") {
    ParameterSet ps;
    Rng rng(0);
    const PositionalParams p = init_positional(ps, "pe", PositionalEncodingKind::kLe, 4, 3, 5, rng);
    fill(ps, *p.table, 0.0);
    CHECK(oracle::max_abs_diff(run(p, ps, x), x) == 0.0);
    oracle::randomize(ps, g);
    const Tensor y = run(p, ps, x);
    const Tensor& t = ps[*p.table].value;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 60; ++i) CHECK(y[b * 60 + i] == x[b * 60 + i] + t[i]);
    CHECK_THROWS_AS(run(p, ps, Tensor({1, 4, 5, 3})), FixedLengthError);
  }
  SUBCASE("none is the identity") {
    ParameterSet ps;
    Rng rng(0);
    const PositionalParams p = init_positional(ps, "pe", PositionalEncodingKind::kNone, 4, 0, 0, rng);
    CHECK(ps.size() == 0);
    CHECK(oracle::max_abs_diff(run(p, ps, x), x) == 0.0);
  }
}

TEST_CASE("batch norm statistics updates") {
  ParameterSet ps;
  const BatchNormParams p = init_batch_norm(ps, "bn", 1);
  GradTape tape;
  ParamBinder bind(ps, tape);
  ForwardContext ctx(bind, NormMode::kTraining);
  const Tensor x({2, 1, 1, 2}, std::vector<double>{1, 2, 3, 6});
  const Tensor y = batch_norm_forward(constant(x), p, ctx).value();
  double mean = 0;
  for (double v : y.values()) mean += v / 4;
  CHECK(std::abs(mean) < 1e-12);
  apply_stat_updates(ps, ctx, 0.1);
  CHECK(ps[p.running_mean].value[0] == doctest::Approx(0.9 * 0 + 0.1 * 3.0));
  // Unbiased variance of {1,2,3,6} is 14/3.
  CHECK(ps[p.running_var].value[0] == doctest::Approx(0.9 * 1 + 0.1 * 14.0 / 3.0));
}
