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

#ifndef SCTUNE_OPTIM_HPP_
#define SCTUNE_OPTIM_HPP_

#include <cstdint>
#include <span>
#include <vector>

namespace sctune {

// AdamW state. Weight decay is decoupled: applied to the parameters directly,
// not folded into the gradient.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  OptimizerState() = default;
  explicit OptimizerState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// p <- p (1 - lr wd); p <- p - lr mhat / (sqrt(vhat) + eps).
// Throws std::domain_error on a non-finite gradient and
// std::invalid_argument on a length mismatch.
void optimizer_step(std::span<double> params, std::span<const double> grads,
                    OptimizerState& opt, double lr, double weight_decay);

// Scales grads in place so their L2 norm is at most max_norm; returns the
// norm before scaling. max_norm <= 0 leaves grads unchanged.
double clip_grad_norm(std::span<double> grads, double max_norm);

}  // namespace sctune

#endif  // SCTUNE_OPTIM_HPP_
