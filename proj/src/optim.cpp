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

#include "sctune/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sctune {

void optimizer_step(std::span<double> params, std::span<const double> grads,
                    OptimizerState& opt, double lr, double weight_decay) {
  const size_t n = params.size();
  if (grads.size() != n || opt.m.size() != n || opt.v.size() != n) {
    throw std::invalid_argument("optimizer_step: length mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw std::domain_error("non-finite gradient");
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  const double decay = 1.0 - lr * weight_decay;
  for (size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
    const double mhat = opt.m[i] / c1;
    const double vhat = opt.v[i] / c2;
    params[i] = params[i] * decay - lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grads) g *= s;
  }
  return norm;
}

}  // namespace sctune
