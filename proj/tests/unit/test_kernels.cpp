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
#include <functional>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "rest/autograd.hpp"
#include "rest/cost.hpp"
#include "rest/kernels.hpp"

using namespace rest;

namespace {

const Tensor* const kNoBias = nullptr;

Tensor T(Shape s, std::vector<double> v) { return Tensor(std::move(s), std::move(v)); }

}  // namespace

TEST_CASE("conv2d examples and loop oracle") {
  SUBCASE("1x1 identity kernel is the identity") {
    std::mt19937_64 rng(1);
    const Tensor x = oracle::random_tensor({1, 1, 3, 3}, rng);
    const Tensor y = conv2d(x, T({1, 1, 1, 1}, {1.0}), kNoBias, {});
    CHECK(oracle::max_abs_diff(x, y) == 0.0);
  }
  SUBCASE("3x3 ones kernel with padding 1 sums neighbourhoods") {
    const Tensor x({1, 1, 3, 3}, 1.0);
    const Tensor y = conv2d(x, Tensor({1, 1, 3, 3}, 1.0), kNoBias, {{1, 1}, {1, 1}});
    CHECK(y.at({0, 0, 0, 0}) == 4.0);
    CHECK(y.at({0, 0, 0, 1}) == 6.0);
    CHECK(y.at({0, 0, 1, 1}) == 9.0);
  }
  SUBCASE("random cases match the six-loop oracle") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> ext(1, 4), side(3, 9), k(1, 3), st(1, 2), pd(0, 1);
    for (int i = 0; i < 50; ++i) {
      const std::size_t b = ext(rng), ci = ext(rng), co = ext(rng), h = side(rng), w = side(rng);
      const std::size_t kk = k(rng), s = st(rng), p = pd(rng);
      const Tensor x = oracle::random_tensor({b, ci, h, w}, rng);
      const Tensor wt = oracle::random_tensor({co, ci, kk, kk}, rng);
      const Tensor bias = oracle::random_tensor({co}, rng);
      const Tensor got = conv2d(x, wt, &bias, {{s, s}, {p, p}});
      CHECK(oracle::max_abs_diff(got, oracle::conv2d(x, wt, &bias, s, s, p, p)) <= 1e-10);
    }
  }
  SUBCASE("channel mismatch is a shape error") {
    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 1, 1}), kNoBias, {}), ShapeError);
  }
}

TEST_CASE("depthwise conv matches the per-channel oracle") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 30; ++i) {
    const std::size_t c = 1 + i % 4, s = 1 + i % 3, kk = s + 1, h = 4 + (i % 3) * s;
    const Tensor x = oracle::random_tensor({2, c, h, h}, rng);
    const Tensor wt = oracle::random_tensor({c, 1, kk, kk}, rng);
    const Tensor bias = oracle::random_tensor({c}, rng);
    const Tensor got = depthwise_conv2d(x, wt, &bias, {{s, s}, {s / 2, s / 2}});
    CHECK(oracle::max_abs_diff(got, oracle::depthwise_conv2d(x, wt, &bias, s, s, s / 2, s / 2)) <=
          1e-10);
  }
}

TEST_CASE("matmul") {
  SUBCASE("identity leaves the operand unchanged") {
    const Tensor eye = T({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor b = T({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK(oracle::max_abs_diff(matmul(eye, b), b) == 0.0);
  }
  SUBCASE("hand arithmetic") {
    const Tensor y = matmul(T({2, 2}, {1, 2, 3, 4}), T({2, 1}, {5, 6}));
    CHECK(y[0] == 17.0);
    CHECK(y[1] == 39.0);
  }
  SUBCASE("batched random cases match the triple loop") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 30; ++i) {
      const std::size_t s = 1 + i % 3, m = 1 + i % 5, k = 2 + i % 4, n = 1 + i % 6;
      const Tensor a = oracle::random_tensor({s, 2, m, k}, rng);
      const Tensor b = oracle::random_tensor({s, 2, k, n}, rng);
      CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) <= 1e-12);
    }
  }
  SUBCASE("leading extent 1 broadcasts") {
    std::mt19937_64 rng(5);
    const Tensor a = oracle::random_tensor({3, 2, 4}, rng);
    const Tensor b = oracle::random_tensor({1, 4, 5}, rng);
    const Tensor y = matmul(a, b);
    CHECK(y.shape() == Shape{3, 2, 5});
  }
  SUBCASE("inner mismatch is a shape error") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({4, 2})), ShapeError);
  }
}

TEST_CASE("softmax") {
  const Tensor u = softmax(Tensor({4}), -1);
  for (double v : u.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  const Tensor p = softmax(T({2}, {0.0, std::log(3.0)}), -1);
  CHECK(std::abs(p[0] - 0.25) <= 1e-15);
  CHECK(std::abs(p[1] - 0.75) <= 1e-15);

  std::mt19937_64 rng(9);
  const Tensor x = oracle::random_tensor({3, 5, 7}, rng, -8, 8);
  const Tensor y = softmax(x, -1);
  CHECK(oracle::max_abs_diff(y, oracle::softmax_last(x)) <= 1e-12);
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 123.0;
  CHECK(oracle::max_abs_diff(softmax(shifted, -1), y) <= 1e-12);
  for (std::size_t r = 0; r < 15; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(y[r * 7 + j] > 0.0);
      s += y[r * 7 + j];
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
  // Large logits stay finite.
  const Tensor big = softmax(T({2}, {1000.0, 0.0}), -1);
  CHECK(std::isfinite(big[0]));
  CHECK(big[1] >= 0.0);
}

TEST_CASE("instance norm") {
  SUBCASE("constant slice maps to zero") {
    const Tensor y = instance_norm(Tensor({1, 1, 3, 3}, 5.0), 1e-5);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("[1,2,3,4] with epsilon near zero") {
    const Tensor y = instance_norm(T({1, 1, 2, 2}, {1, 2, 3, 4}), 1e-300);
    double mean = 0, var = 0;
    for (double v : y.values()) mean += v / 4;
    for (double v : y.values()) var += (v - mean) * (v - mean) / 4;
    CHECK(std::abs(mean) <= 1e-12);
    CHECK(std::abs(var - 1.0) <= 1e-12);
  }
  SUBCASE("random slices match the two-pass oracle and are standardized") {
    std::mt19937_64 rng(13);
    const Tensor x = oracle::random_tensor({3, 4, 5, 6}, rng, -2, 2);
    const Tensor y = instance_norm(x, 1e-10);
    CHECK(oracle::max_abs_diff(y, oracle::instance_norm(x, 1e-10)) <= 1e-10);
    for (std::size_t s = 0; s < 12; ++s) {
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < 30; ++i) mean += y[s * 30 + i] / 30;
      for (std::size_t i = 0; i < 30; ++i) var += (y[s * 30 + i] - mean) * (y[s * 30 + i] - mean) / 30;
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("elementwise definitions") {
  const Tensor ln = layer_norm(T({2}, {2, 4}), Tensor({2}, 1.0), Tensor({2}), 1e-12);
  CHECK(ln[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(ln[1] == doctest::Approx(1.0).epsilon(1e-9));
  const Tensor r = relu(T({2}, {-3, 5}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 5.0);
  CHECK(sigmoid(T({1}, {0.0}))[0] == 0.5);

  Tensor grid({101});
  for (std::size_t i = 0; i < 101; ++i) grid[i] = -5.0 + 0.1 * static_cast<double>(i);
  const Tensor g = gelu(grid);
  double worst = 0;
  for (std::size_t i = 0; i < 101; ++i) worst = std::max(worst, std::abs(g[i] - oracle::gelu(grid[i])));
  CHECK(worst < 1e-12);

  const Tensor bn = batch_norm(T({1, 1, 1, 2}, {3, 5}), T({1}, {4}), T({1}, {1}), T({1}, {2}),
                               T({1}, {1}), 0.0);
  CHECK(bn[0] == doctest::Approx(-1.0));
  CHECK(bn[1] == doctest::Approx(3.0));

  const Tensor lin = linear(T({1, 2}, {1, 2}), T({2, 3}, {1, 0, 1, 0, 1, 1}), kNoBias);
  CHECK(lin[0] == 1.0);
  CHECK(lin[1] == 2.0);
  CHECK(lin[2] == 3.0);
}

TEST_CASE("pooling") {
  const Tensor x = T({1, 1, 2, 2}, {1, 2, 3, 8});
  CHECK(avg_pool2d(x, {{2, 2}, {2, 2}, {0, 0}})[0] == 3.5);
  CHECK(max_pool2d(x, {{2, 2}, {2, 2}, {0, 0}})[0] == 8.0);
  // Padding is excluded from the average and never wins the max.
  const Tensor neg({1, 1, 2, 2}, -1.0);
  CHECK(avg_pool2d(neg, {{3, 3}, {2, 2}, {1, 1}})[0] == -1.0);
  CHECK(max_pool2d(neg, {{3, 3}, {2, 2}, {1, 1}})[0] == -1.0);
  const Tensor gap = global_avg_pool(x);
  CHECK(gap.shape() == Shape{1, 1});
  CHECK(gap[0] == 3.5);
}

TEST_CASE("determinism") {
  std::mt19937_64 rng(21);
  const Tensor x = oracle::random_tensor({2, 3, 8, 8}, rng);
  const Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
  const Tensor a = conv2d(x, w, kNoBias, {{1, 1}, {1, 1}});
  const Tensor b = conv2d(x, w, kNoBias, {{1, 1}, {1, 1}});
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("cost accounting") {
  SUBCASE("1x1 conv 8->16 on 1x1 is 128 MACs") {
    cost::Collector c;
    conv2d(Tensor({1, 8, 1, 1}), Tensor({16, 8, 1, 1}), kNoBias, {});
    CHECK(c.total().macs == 128);
  }
  SUBCASE("dry run skips arithmetic but counts") {
    cost::Collector c(true);
    const Tensor y = matmul(Tensor({2, 3}, 1.0), Tensor({3, 4}, 1.0));
    CHECK(c.total().macs == 24);
    CHECK(y[0] == 0.0);
  }
  SUBCASE("scopes nest") {
    cost::Collector c;
    {
      cost::Scope a("a");
      cost::Scope b("b");
      linear(Tensor({1, 2}), Tensor({2, 2}), kNoBias);
    }
    CHECK(c.subtree("a").macs == 4);
    CHECK(c.entries().front().first == "a.b");
  }
}

TEST_CASE("finite differences and backward") {
  SUBCASE("sum has an all-ones gradient") {
    std::mt19937_64 rng(2);
    const Tensor x = oracle::random_tensor({5}, rng);
    const Tensor g = finite_diff_grad([](const Tensor& t) {
      double s = 0;
      for (double v : t.values()) s += v;
      return s;
    }, x);
    for (double v : g.values()) CHECK(std::abs(v - 1.0) <= 1e-10);
  }
  SUBCASE("x^3 at 2") {
    const Tensor g = finite_diff_grad([](const Tensor& t) { return t[0] * t[0] * t[0]; },
                                      T({1}, {2.0}));
    CHECK(std::abs(g[0] - 12.0) <= 1e-6);
  }
  SUBCASE("sum of squares") {
    GradTape tape;
    const Var x = tape.variable(T({3}, {1, 2, 3}));
    tape.backward(sum_squares(x));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(x.grad()[2] == 6.0);
  }
  SUBCASE("linear weight gradient is x^T 1") {
    GradTape tape;
    const Tensor xv = T({2, 3}, {1, 2, 3, 4, 5, 6});
    const Var w = tape.variable(Tensor({3, 2}, 0.5));
    tape.backward(sum(linear(constant(xv), w, nullptr)));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(w.grad()[i * 2] == xv[i] + xv[3 + i]);
      CHECK(w.grad()[i * 2 + 1] == xv[i] + xv[3 + i]);
    }
  }
  SUBCASE("two-layer composition agrees with central differences") {
    std::mt19937_64 rng(4);
    const Tensor x0 = oracle::random_tensor({2, 3}, rng, -2, 2);
    const Tensor w1 = oracle::random_tensor({3, 4}, rng, -2, 2);
    const Tensor w2 = oracle::random_tensor({4, 2}, rng, -2, 2);
    auto f = [&](const Tensor& x) {
      return sum_squares(linear(gelu(linear(constant(x), constant(w1), nullptr)), constant(w2),
                                nullptr))
          .value()
          .item();
    };
    GradTape tape;
    const Var x = tape.variable(x0);
    tape.backward(sum_squares(linear(gelu(linear(x, constant(w1), nullptr)), constant(w2), nullptr)));
    const Tensor fd = finite_diff_grad(f, x0);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double a = x.grad()[i], n = fd[i];
      CHECK(std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}) < 1e-6);
    }
  }
  SUBCASE("non-scalar loss is rejected") {
    GradTape tape;
    const Var x = tape.variable(Tensor({2}, 1.0));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
}
