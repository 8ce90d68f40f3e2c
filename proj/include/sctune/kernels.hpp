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

// Dense inner loops used by the policy network and the batch geometry paths.
//
// Every kernel exists twice: a serial reference in kernels::serial and an
// OpenMP version in kernels::parallel. The parallel versions split work over
// output rows only, so each output element is reduced in the same order as
// the serial reference and results are bit-identical for any thread count.
// The unqualified entry points dispatch to the parallel version once the
// problem is large enough to amortize a parallel region.

#ifndef SCTUNE_KERNELS_HPP_
#define SCTUNE_KERNELS_HPP_

#include <cstddef>
#include <span>

#include "sctune/geometry.hpp"

namespace sctune::kernels {

// Shapes are row-major. x: n*k, w: m*k, y: n*m, bias: m (may be empty).

namespace serial {
// y = x * w^T + bias
void linear_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y, int n,
                    int k, int m);
// dx += dy * w
void linear_backward_input(std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx,
                           int n, int k, int m);
// dw += dy^T * x
void linear_backward_weight(std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            int n, int k, int m);
void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out);
}  // namespace serial

namespace parallel {
void linear_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y, int n,
                    int k, int m);
void linear_backward_input(std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx,
                           int n, int k, int m);
void linear_backward_weight(std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            int n, int k, int m);
void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out);
}  // namespace parallel

void linear_forward(std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y, int n,
                    int k, int m);
void linear_backward_input(std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx,
                           int n, int k, int m);
void linear_backward_weight(std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            int n, int k, int m);
void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out);

// Thread control shared by the CLI --jobs flag and the tests.
void set_num_threads(int n);
int max_threads();

}  // namespace sctune::kernels

#endif  // SCTUNE_KERNELS_HPP_
