// Copyright 2026 The sctune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sctune/autodiff.hpp"
#include "sctune/kernels.hpp"
#include "sctune/rng.hpp"
#include "test_util.hpp"

namespace sctune {
namespace {

using Build = std::function<ad::Var(ad::Tape&)>;

std::vector<double> random_params(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> p(n);
  for (double& x : p) x = rng.uniform() * 2.0 - 1.0;
  return p;
}

double value_of(const std::vector<double>& params, const Build& f) {
  ad::Tape t(params, false);
  return t.scalar(f(t));
}

// Every coordinate of the analytic gradient against central differences.
void check_gradient(std::vector<double> params, const Build& f) {
  std::vector<double> grad(params.size(), 0.0);
  {
    ad::Tape t(params);
    t.backward(f(t), grad);
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const double fd = testing::central_difference(
        params, i, 1e-5, [&] { return value_of(params, f); });
    EXPECT_TRUE(testing::gradient_close(grad[i], fd)) << "coord " << i << " analytic "
                                                      << grad[i] << " numeric " << fd;
  }
}

TEST(Tape, ConstantLossHasZeroGradient) {
  const std::vector<double> p = random_params(6, 1);
  std::vector<double> g(p.size(), 0.0);
  ad::Tape t(p);
  t.backward(t.sum(t.constant(1, 3, {1, 2, 3})), g);
  for (double x : g) EXPECT_EQ(x, 0.0);
}

TEST(Tape, SumOfParametersHasOnesGradient) {
  const std::vector<double> p = random_params(12, 2);
  std::vector<double> g(p.size(), 0.0);
  ad::Tape t(p);
  t.backward(t.sum(t.param(0, 3, 4)), g);
  for (double x : g) EXPECT_EQ(x, 1.0);
}

TEST(Tape, BackwardAccumulates) {
  const std::vector<double> p = random_params(4, 3);
  std::vector<double> g(p.size(), 1.0);
  ad::Tape t(p);
  t.backward(t.sum(t.param(0, 2, 2)), g);
  for (double x : g) EXPECT_EQ(x, 2.0);
}

TEST(Tape, LinearMatchesHandComputation) {
  const std::vector<double> p{1, 2, 3, 4, 5, 6, 0.5, -0.5};
  ad::Tape t(p, false);
  // x: 1x3, w: 2x3, b: 1x2
  const ad::Var x = t.constant(1, 3, {1, 0, -1});
  const ad::Var y = t.linear(x, t.param(0, 2, 3), t.param(6, 1, 2));
  const auto v = t.value(y);
  EXPECT_DOUBLE_EQ(v[0], 1 - 3 + 0.5);
  EXPECT_DOUBLE_EQ(v[1], 4 - 6 - 0.5);
}

TEST(Tape, LogSoftmaxNormalizes) {
  const std::vector<double> p = random_params(10, 4);
  ad::Tape t(p, false);
  const ad::Var lp = t.log_softmax(t.scale(t.param(0, 2, 5), 30.0));
  const auto v = t.value(lp);
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int c = 0; c < 5; ++c) s += std::exp(v[r * 5 + c]);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Gradients, LinearAndRelu) {
  check_gradient(random_params(3 * 4 + 2 * 4 + 2, 5), [](ad::Tape& t) {
    const ad::Var x = t.param(0, 3, 4);
    const ad::Var y = t.relu(t.linear(x, t.param(12, 2, 4), t.param(20, 1, 2)));
    return t.sum(t.mul_const(y, {1, -2, 3, 0.5, -1, 2}));
  });
}

TEST(Gradients, EmbedGatherAddRow) {
  ad::Csr x(4);
  x.push(0, 1.0);
  x.push(3, 2.0);
  x.end_row();
  x.push(1, -1.0);
  x.end_row();
  check_gradient(random_params(4 * 3 + 3, 6), [x](ad::Tape& t) {
    const ad::Var e = t.embed(x, t.param(0, 4, 3));
    const ad::Var g = t.gather_rows(e, {1, 0, 1});
    const ad::Var z = t.add_row(g, t.param(12, 1, 3));
    return t.sum(t.mul_const(t.exp(t.scale(z, 0.3)), {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  });
}

TEST(Gradients, LogSoftmaxPick) {
  check_gradient(random_params(12, 7), [](ad::Tape& t) {
    const ad::Var lp = t.log_softmax(t.param(0, 3, 4));
    return t.mean(t.pick(lp, {2, 0, 3}));
  });
}

TEST(Gradients, ClampAndMinimumAwayFromKinks) {
  // clamp and min are piecewise linear; the finite difference only agrees
  // away from the breakpoints, which the fixed values below avoid.
  const std::vector<double> p{0.3, 1.5, -0.8, 0.05, 0.9, -0.2};
  check_gradient(p, [](ad::Tape& t) {
    const ad::Var a = t.param(0, 1, 3);
    const ad::Var b = t.param(3, 1, 3);
    const ad::Var c = t.clamp(t.exp(a), 0.8, 1.2);
    const ad::Var m = t.minimum(t.mul_const(c, {1, 2, 3}), t.scale(b, 4.0));
    return t.sum(m);
  });
}

TEST(Gradients, AddSubAddConst) {
  check_gradient(random_params(8, 8), [](ad::Tape& t) {
    const ad::Var a = t.param(0, 2, 2);
    const ad::Var b = t.param(4, 2, 2);
    const ad::Var c = t.add_const(t.sub(t.add(a, b), t.scale(b, 3.0)), {1, 1, 1, 1});
    return t.sum(t.mul_const(t.relu(c), {1, -1, 2, 3}));
  });
}

TEST(Gradients, GridPool) {
  const int grid = 3, batch = 2, c = 2;
  check_gradient(random_params(batch * grid * grid * c, 9), [&](ad::Tape& t) {
    const ad::Var z = t.param(0, batch * grid * grid, c);
    const ad::Var pooled = t.grid_pool(z, grid);
    std::vector<double> w(static_cast<size_t>(batch) * c * (2 * grid + 1));
    for (size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * static_cast<double>(i + 1);
    return t.sum(t.mul_const(pooled, w));
  });
}

TEST(GridPool, LayoutMatchesDefinition) {
  // One scene, 2x2 grid, 1 channel: cells row-major 1 2 / 3 4.
  const std::vector<double> p{1, 2, 3, 4};
  ad::Tape t(p, false);
  const ad::Var pooled = t.grid_pool(t.param(0, 4, 1), 2);
  const auto v = t.value(pooled);
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v[0], 10);  // total
  EXPECT_EQ(v[1], 3);   // row 0
  EXPECT_EQ(v[2], 7);   // row 1
  EXPECT_EQ(v[3], 4);   // column 0
  EXPECT_EQ(v[4], 6);   // column 1
}

TEST(Kernels, ParallelMatchesSerialBitForBit) {
  const int n = 37, k = 19, m = 23;
  const auto x = random_params(static_cast<size_t>(n) * k, 10);
  const auto w = random_params(static_cast<size_t>(m) * k, 11);
  const auto b = random_params(m, 12);
  const auto dy = random_params(static_cast<size_t>(n) * m, 13);
  const int saved = kernels::max_threads();
  for (int threads : {1, 3}) {
    kernels::set_num_threads(threads);
    std::vector<double> y1(n * m), y2(n * m), dx1(n * k, 0.5), dx2(n * k, 0.5),
        dw1(m * k, -1.0), dw2(m * k, -1.0);
    kernels::serial::linear_forward(x, w, b, y1, n, k, m);
    kernels::parallel::linear_forward(x, w, b, y2, n, k, m);
    EXPECT_EQ(y1, y2);
    kernels::serial::linear_backward_input(dy, w, dx1, n, k, m);
    kernels::parallel::linear_backward_input(dy, w, dx2, n, k, m);
    EXPECT_EQ(dx1, dx2);
    kernels::serial::linear_backward_weight(dy, x, dw1, n, k, m);
    kernels::parallel::linear_backward_weight(dy, x, dw2, n, k, m);
    EXPECT_EQ(dw1, dw2);
    // Spot check one output against the definition.
    double ref = b[5];
    for (int j = 0; j < k; ++j) ref += x[2 * k + j] * w[5 * k + j];
    EXPECT_NEAR(y1[2 * m + 5], ref, 1e-12);
  }
  kernels::set_num_threads(saved);
}

TEST(Tape, RejectsShapeMismatch) {
  const std::vector<double> p = random_params(12, 14);
  ad::Tape t(p);
  EXPECT_ANY_THROW(t.add(t.param(0, 2, 3), t.param(0, 3, 2)));
  EXPECT_ANY_THROW(t.linear(t.param(0, 2, 3), t.param(0, 2, 2)));
}

}  // namespace
}  // namespace sctune
