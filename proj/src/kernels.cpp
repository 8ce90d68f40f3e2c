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

#include "sctune/kernels.hpp"

#include <omp.h>

#include <cassert>
#include <cstdint>

namespace sctune::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr int64_t kParallelWork = int64_t{1} << 16;

inline double dot(const double* a, const double* b, int k) {
  double s = 0.0;
  for (int i = 0; i < k; ++i) s += a[i] * b[i];
  return s;
}

inline void forward_row(const double* x, const double* w, const double* bias,
                        double* y, int k, int m) {
  for (int j = 0; j < m; ++j) {
    y[j] = dot(x, w + static_cast<size_t>(j) * k, k) + (bias ? bias[j] : 0.0);
  }
}

inline void backward_input_row(const double* dy, const double* w, double* dx,
                               int k, int m) {
  for (int j = 0; j < m; ++j) {
    const double g = dy[j];
    if (g == 0.0) continue;
    const double* wj = w + static_cast<size_t>(j) * k;
    for (int i = 0; i < k; ++i) dx[i] += g * wj[i];
  }
}

inline void backward_weight_row(const double* dy, const double* x, double* dw,
                                int j, int n, int k, int m) {
  double* dwj = dw + static_cast<size_t>(j) * k;
  for (int r = 0; r < n; ++r) {
    const double g = dy[static_cast<size_t>(r) * m + j];
    if (g == 0.0) continue;
    const double* xr = x + static_cast<size_t>(r) * k;
    for (int i = 0; i < k; ++i) dwj[i] += g * xr[i];
  }
}

}  // namespace

namespace serial {

void linear_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y, int n,
                    int k, int m) {
  assert(x.size() >= static_cast<size_t>(n) * k);
  const double* b = bias.empty() ? nullptr : bias.data();
  for (int r = 0; r < n; ++r) {
    forward_row(x.data() + static_cast<size_t>(r) * k, w.data(), b,
                y.data() + static_cast<size_t>(r) * m, k, m);
  }
}

void linear_backward_input(std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx,
                           int n, int k, int m) {
  for (int r = 0; r < n; ++r) {
    backward_input_row(dy.data() + static_cast<size_t>(r) * m, w.data(),
                       dx.data() + static_cast<size_t>(r) * k, k, m);
  }
}

void linear_backward_weight(std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            int n, int k, int m) {
  for (int j = 0; j < m; ++j) {
    backward_weight_row(dy.data(), x.data(), dw.data(), j, n, k, m);
  }
}

void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out) {
  assert(a.size() == b.size() && a.size() == out.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = iou(a[i], b[i]);
}

}  // namespace serial

namespace parallel {

void linear_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y, int n,
                    int k, int m) {
  const double* b = bias.empty() ? nullptr : bias.data();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    forward_row(x.data() + static_cast<size_t>(r) * k, w.data(), b,
                y.data() + static_cast<size_t>(r) * m, k, m);
  }
}

void linear_backward_input(std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx,
                           int n, int k, int m) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    backward_input_row(dy.data() + static_cast<size_t>(r) * m, w.data(),
                       dx.data() + static_cast<size_t>(r) * k, k, m);
  }
}

void linear_backward_weight(std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            int n, int k, int m) {
#pragma omp parallel for schedule(static)
  for (int j = 0; j < m; ++j) {
    backward_weight_row(dy.data(), x.data(), dw.data(), j, n, k, m);
  }
}

void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out) {
  assert(a.size() == b.size() && a.size() == out.size());
  const auto n = static_cast<int64_t>(a.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = iou(a[i], b[i]);
}

}  // namespace parallel

void linear_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y, int n,
                    int k, int m) {
  if (static_cast<int64_t>(n) * k * m >= kParallelWork && n > 1) {
    parallel::linear_forward(x, w, bias, y, n, k, m);
  } else {
    serial::linear_forward(x, w, bias, y, n, k, m);
  }
}

void linear_backward_input(std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx,
                           int n, int k, int m) {
  if (static_cast<int64_t>(n) * k * m >= kParallelWork && n > 1) {
    parallel::linear_backward_input(dy, w, dx, n, k, m);
  } else {
    serial::linear_backward_input(dy, w, dx, n, k, m);
  }
}

void linear_backward_weight(std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            int n, int k, int m) {
  if (static_cast<int64_t>(n) * k * m >= kParallelWork && m > 1) {
    parallel::linear_backward_weight(dy, x, dw, n, k, m);
  } else {
    serial::linear_backward_weight(dy, x, dw, n, k, m);
  }
}

void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out) {
  if (a.size() >= 4096) {
    parallel::iou_batch(a, b, out);
  } else {
    serial::iou_batch(a, b, out);
  }
}

void set_num_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace sctune::kernels
