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

// Rewards, value-free advantages and the clipped surrogate loss for the
// describer.
//
//   R_t = [t == T] * IoU(B, B_hat) - beta * (log pi(c_t|s_t) - log pi_ref(c_t|s_t))
//   A_t = sum_{i >= t} R_i - IoU(B, f(locator(greedy caption of pi_ref)))
//   L   = -mean_t min(r_t A_t, clip(r_t, 1 - eps, 1 + eps) A_t)
//   r_t = exp(log pi(c_t|s_t) - log pi_old(c_t|s_t))
//
// The mean runs over every token of every sequence in the batch.

#ifndef SCTUNE_RL_HPP_
#define SCTUNE_RL_HPP_

#include <optional>
#include <span>
#include <vector>

#include "sctune/autodiff.hpp"
#include "sctune/geometry.hpp"
#include "sctune/policy.hpp"

namespace sctune {

struct PPOConfig {
  double epsilon = 0.2;
  double beta = 0.01;
  int ppo_epochs = 2;

  // Throws std::invalid_argument unless 0 < epsilon < 1, beta >= 0 and
  // ppo_epochs >= 1.
  void validate() const;
};

struct RewardVector {
  std::vector<double> rewards;
  double terminal_iou = 0.0;
  double baseline_reward = 0.0;
};

struct Trajectory {
  CaptionSequence seq;
  RewardVector rewards;
  std::vector<double> advantages;
  bool parse_success = false;
  std::optional<BBox> predicted;
};

using TrajectoryBatch = std::vector<Trajectory>;

struct Reconstruction {
  double iou = 0.0;
  std::optional<BBox> box;
  std::vector<int> locator_tokens;
};

// Greedy locator decode on (scene, caption), routed through the text
// parse contract. A parse failure gives (0, absent). fmt.range() must equal
// the locator vocabulary's coordinate range.
Reconstruction reconstruction_iou(const BBox& target,
                                  std::span<const int> caption,
                                  const PolicyNetwork& locator,
                                  const SceneFeatures& scene,
                                  const CoordFormat& fmt);
std::vector<Reconstruction> reconstruction_iou_batch(
    std::span<const BBox> targets, std::span<const std::vector<int>> captions,
    const PolicyNetwork& locator, std::span<const SceneFeatures> scenes,
    const CoordFormat& fmt);

// Uses seq.logp_live and seq.logp_ref. Throws std::invalid_argument on a
// length mismatch or an empty sequence.
RewardVector compute_rewards(const CaptionSequence& seq, double terminal_iou,
                             double beta);

// IoU of the locator's reconstruction of ref's greedy caption. The KL term
// of that caption under ref against itself is zero, so this is the whole
// baseline reward.
double compute_baseline(const DecodingState& s, const BBox& target,
                        const PolicyNetwork& ref, const PolicyNetwork& locator,
                        const CoordFormat& fmt);
std::vector<double> compute_baselines(std::span<const DecodingState> states,
                                      std::span<const BBox> targets,
                                      const PolicyNetwork& ref,
                                      const PolicyNetwork& locator,
                                      const CoordFormat& fmt);

std::vector<double> compute_advantages(const RewardVector& rv);

// Differentiable surrogate loss on a tape over live.params(). seqs supply
// tokens and logp_old; advantages are constants. Throws std::domain_error on
// a non-finite ratio.
ad::Var ppo_loss(ad::Tape& t, const PolicyNetwork& live,
                 std::span<const DecodingState> states,
                 std::span<const CaptionSequence> seqs,
                 std::span<const std::vector<double>> advantages,
                 const PPOConfig& cfg);

}  // namespace sctune

#endif  // SCTUNE_RL_HPP_
