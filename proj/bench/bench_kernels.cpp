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

// Serial reference kernels against their OpenMP versions. Shapes follow the
// toy network: a batch of 32 scenes over an 8x8 grid gives 2048 cell rows.

#include <benchmark/benchmark.h>

#include <vector>

#include "sctune/kernels.hpp"
#include "sctune/rng.hpp"

namespace {

using namespace sctune;

std::vector<double> random_vector(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform() * 2.0 - 1.0;
  return v;
}

struct LinearShape {
  int n, k, m;
  std::vector<double> x, w, b, y, dy, dx, dw;

  explicit LinearShape(const benchmark::State& s)
      : n(static_cast<int>(s.range(0))),
        k(static_cast<int>(s.range(1))),
        m(static_cast<int>(s.range(2))),
        x(random_vector(static_cast<size_t>(n) * k, 1)),
        w(random_vector(static_cast<size_t>(m) * k, 2)),
        b(random_vector(m, 3)),
        y(static_cast<size_t>(n) * m),
        dy(random_vector(static_cast<size_t>(n) * m, 4)),
        dx(static_cast<size_t>(n) * k),
        dw(static_cast<size_t>(m) * k) {}
};

template <auto Fn>
void BM_LinearForward(benchmark::State& s) {
  LinearShape L(s);
  for (auto _ : s) {
    Fn(L.x, L.w, L.b, L.y, L.n, L.k, L.m);
    benchmark::DoNotOptimize(L.y.data());
  }
  s.SetItemsProcessed(s.iterations() * L.n * L.k * L.m);
}

template <auto Fn>
void BM_LinearBackwardInput(benchmark::State& s) {
  LinearShape L(s);
  for (auto _ : s) {
    Fn(L.dy, L.w, L.dx, L.n, L.k, L.m);
    benchmark::DoNotOptimize(L.dx.data());
  }
  s.SetItemsProcessed(s.iterations() * L.n * L.k * L.m);
}

template <auto Fn>
void BM_LinearBackwardWeight(benchmark::State& s) {
  LinearShape L(s);
  for (auto _ : s) {
    Fn(L.dy, L.x, L.dw, L.n, L.k, L.m);
    benchmark::DoNotOptimize(L.dw.data());
  }
  s.SetItemsProcessed(s.iterations() * L.n * L.k * L.m);
}

template <auto Fn>
void BM_IouBatch(benchmark::State& s) {
  const size_t n = static_cast<size_t>(s.range(0));
  Rng rng(5);
  std::vector<BBox> a(n), b(n);
  auto box = [&] {
    double x0 = rng.uniform(), x1 = rng.uniform(), y0 = rng.uniform(), y1 = rng.uniform();
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    return BBox{x0, y0, x1, y1};
  };
  for (size_t i = 0; i < n; ++i) {
    a[i] = box();
    b[i] = box();
  }
  std::vector<double> out(n);
  for (auto _ : s) {
    Fn(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  s.SetItemsProcessed(s.iterations() * static_cast<int64_t>(n));
}

// Cell encoder layer, pooled head layer, output layer.
void linear_shapes(benchmark::internal::Benchmark* b) {
  b->Args({2048, 19, 32})->Args({2048, 32, 16})->Args({256, 64, 57});
}

BENCHMARK(BM_LinearForward<kernels::serial::linear_forward>)->Apply(linear_shapes)->UseRealTime();
BENCHMARK(BM_LinearForward<kernels::parallel::linear_forward>)->Apply(linear_shapes)->UseRealTime();
BENCHMARK(BM_LinearBackwardInput<kernels::serial::linear_backward_input>)->Apply(linear_shapes)->UseRealTime();
BENCHMARK(BM_LinearBackwardInput<kernels::parallel::linear_backward_input>)->Apply(linear_shapes)->UseRealTime();
BENCHMARK(BM_LinearBackwardWeight<kernels::serial::linear_backward_weight>)->Apply(linear_shapes)->UseRealTime();
BENCHMARK(BM_LinearBackwardWeight<kernels::parallel::linear_backward_weight>)
    ->Apply(linear_shapes)->UseRealTime();
BENCHMARK(BM_IouBatch<kernels::serial::iou_batch>)->Arg(1 << 12)->Arg(1 << 16)->UseRealTime();
BENCHMARK(BM_IouBatch<kernels::parallel::iou_batch>)->Arg(1 << 12)->Arg(1 << 16)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
