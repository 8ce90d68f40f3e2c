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

#include "sctune/rl.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sctune {

void PPOConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("ppo epsilon must be in (0, 1)");
  }
  if (!(beta >= 0.0)) throw std::invalid_argument("ppo beta must be >= 0");
  if (ppo_epochs < 1) throw std::invalid_argument("ppo_epochs must be >= 1");
}

std::vector<Reconstruction> reconstruction_iou_batch(
    std::span<const BBox> targets, std::span<const std::vector<int>> captions,
    const PolicyNetwork& locator, std::span<const SceneFeatures> scenes,
    const CoordFormat& fmt) {
  const size_t n = targets.size();
  if (captions.size() != n || scenes.size() != n) {
    throw std::invalid_argument("reconstruction batch sizes differ");
  }
  std::vector<DecodingState> states;
  states.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    std::span<const int> cap = captions[i];
    if (static_cast<int>(cap.size()) > locator.arch().t_max) {
      cap = cap.first(locator.arch().t_max);
    }
    states.push_back(locator_state(scenes[i], cap));
  }
  const auto out = greedy_batch(locator, states);
  std::vector<Reconstruction> rec(n);
  for (size_t i = 0; i < n; ++i) {
    rec[i].locator_tokens = out[i].tokens;
    rec[i].box = parse_locator_output(out[i].tokens, locator.vocab(), fmt);
    rec[i].iou = rec[i].box ? iou(targets[i], *rec[i].box) : 0.0;
  }
  return rec;
}

Reconstruction reconstruction_iou(const BBox& target,
                                  std::span<const int> caption,
                                  const PolicyNetwork& locator,
                                  const SceneFeatures& scene,
                                  const CoordFormat& fmt) {
  const std::vector<int> cap(caption.begin(), caption.end());
  return std::move(
      reconstruction_iou_batch({&target, 1}, {&cap, 1}, locator, {&scene, 1},
                               fmt)[0]);
}

RewardVector compute_rewards(const CaptionSequence& seq, double terminal_iou,
                             double beta) {
  const size_t t = seq.logp_live.size();
  if (t == 0) throw std::invalid_argument("cannot reward an empty sequence");
  if (seq.logp_ref.size() != t) {
    throw std::invalid_argument("logp_live has length " + std::to_string(t) +
                                " but logp_ref has length " +
                                std::to_string(seq.logp_ref.size()));
  }
  RewardVector rv;
  rv.terminal_iou = terminal_iou;
  rv.rewards.resize(t);
  for (size_t i = 0; i < t; ++i) {
    const double kl = seq.logp_live[i] - seq.logp_ref[i];
    rv.rewards[i] = (i + 1 == t ? terminal_iou : 0.0) - beta * kl;
  }
  return rv;
}

std::vector<double> compute_baselines(std::span<const DecodingState> states,
                                      std::span<const BBox> targets,
                                      const PolicyNetwork& ref,
                                      const PolicyNetwork& locator,
                                      const CoordFormat& fmt) {
  const auto greedy = greedy_batch(ref, states);
  std::vector<std::vector<int>> caps;
  std::vector<SceneFeatures> scenes;
  caps.reserve(states.size());
  scenes.reserve(states.size());
  for (size_t i = 0; i < states.size(); ++i) {
    caps.push_back(greedy[i].tokens);
    scenes.push_back(states[i].features);
  }
  const auto rec = reconstruction_iou_batch(targets, caps, locator, scenes, fmt);
  std::vector<double> out(rec.size());
  for (size_t i = 0; i < rec.size(); ++i) out[i] = rec[i].iou;
  return out;
}

double compute_baseline(const DecodingState& s, const BBox& target,
                        const PolicyNetwork& ref, const PolicyNetwork& locator,
                        const CoordFormat& fmt) {
  return compute_baselines({&s, 1}, {&target, 1}, ref, locator, fmt)[0];
}

std::vector<double> compute_advantages(const RewardVector& rv) {
  std::vector<double> a(rv.rewards.size());
  double suffix = 0.0;
  for (size_t i = rv.rewards.size(); i-- > 0;) {
    suffix += rv.rewards[i];
    a[i] = suffix - rv.baseline_reward;
  }
  return a;
}

ad::Var ppo_loss(ad::Tape& t, const PolicyNetwork& live,
                 std::span<const DecodingState> states,
                 std::span<const CaptionSequence> seqs,
                 std::span<const std::vector<double>> advantages,
                 const PPOConfig& cfg) {
  if (seqs.size() != states.size() || advantages.size() != states.size()) {
    throw std::invalid_argument("ppo_loss batch sizes differ");
  }
  std::vector<std::vector<int>> tokens;
  std::vector<double> neg_old, adv;
  tokens.reserve(seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i];
    if (s.logp_old.size() != s.length() ||
        advantages[i].size() != s.length()) {
      throw std::invalid_argument("ppo_loss: logp_old/advantage length differs "
                                  "from sequence length");
    }
    tokens.push_back(s.tokens);
    for (size_t k = 0; k < s.length(); ++k) {
      neg_old.push_back(-s.logp_old[k]);
      adv.push_back(advantages[i][k]);
    }
  }
  const ad::Var lp = sequence_logprobs(t, live, states, tokens);
  const ad::Var ratio = t.exp(t.add_const(lp, std::move(neg_old)));
  for (double r : t.value(ratio)) {
    if (!std::isfinite(r)) throw std::domain_error("non-finite importance ratio");
  }
  const ad::Var unclipped = t.mul_const(ratio, adv);
  const ad::Var clipped =
      t.mul_const(t.clamp(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon), adv);
  return t.scale(t.mean(t.minimum(unclipped, clipped)), -1.0);
}

}  // namespace sctune
