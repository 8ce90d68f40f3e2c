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

// Cyclic describer/locator training.
//
// One stage trains one role for H steps while the other role is frozen and
// supplies the training signal: the frozen locator scores describer captions
// (PPO stage), the frozen describer writes pseudo-captions for the locator
// (MLE stage). After each stage the trained parameters are copied into the
// frozen role, like refreshing a target network, and the roles swap.

#ifndef SCTUNE_TRAINER_HPP_
#define SCTUNE_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sctune/evalharness.hpp"
#include "sctune/optim.hpp"
#include "sctune/policy.hpp"
#include "sctune/refgame.hpp"
#include "sctune/rl.hpp"

namespace sctune {

enum class TrainMode { kIterative, kDescriberOnly, kLocatorOnly };

const char* mode_name(TrainMode m);

struct TrainingSchedule {
  int H = 50;
  int num_switches = 6;
  int batch_size = 32;
  double lr_describer = 3e-4;
  double lr_locator = 1e-3;
  double weight_decay = 0.1;
  PPOConfig ppo;
  // Fraction of each locator batch replaced by labeled examples; 0 disables.
  double sup_mix_ratio = 0.0;
  uint64_t seed = 0;
  // Re-anchor the KL reference at every stage start; otherwise it stays at
  // the initial parameters for the whole run.
  bool ref_per_stage = true;
  // 0 disables gradient clipping.
  double max_grad_norm = 0.0;
  TrainMode mode = TrainMode::kIterative;

  // Large-model settings: H 200, batch 128, learning rates 5e-7 / 1e-6.
  static TrainingSchedule large_profile();
  // Throws ConfigError.
  void validate() const;
};

struct PolicySnapshotSet {
  PolicyNetwork live;
  PolicyNetwork frozen_counterpart;
  PolicyNetwork old;
  PolicyNetwork ref;
  Role live_role = Role::kDescriber;

  // All four equal to init.
  PolicySnapshotSet(const PolicyNetwork& init, Role live_role);

  const PolicyNetwork& describer() const {
    return live_role == Role::kDescriber ? live : frozen_counterpart;
  }
  const PolicyNetwork& locator() const {
    return live_role == Role::kLocator ? live : frozen_counterpart;
  }
};

// Locator training example: caption tokens followed by the target's
// coordinate tokens and EOS; loss_mask marks the target part.
struct InstructionSequence {
  std::vector<int> tokens;
  std::vector<uint8_t> loss_mask;
};

InstructionSequence make_instruction(std::span<const int> caption,
                                     const BBox& target, const Vocabulary& v);

// Mean negative log-likelihood of the masked-in tokens. The mask must be a
// non-empty suffix.
ad::Var mle_loss(ad::Tape& t, const PolicyNetwork& p,
                 std::span<const SceneFeatures> scenes,
                 std::span<const InstructionSequence> seqs);

// Mean negative log-likelihood of describer captions given target boxes.
ad::Var caption_mle_loss(ad::Tape& t, const PolicyNetwork& p,
                         std::span<const SceneFeatures> scenes,
                         std::span<const BBox> targets,
                         std::span<const std::vector<int>> captions);

// One record per outer step. Fields that do not apply to the stage are NaN.
struct StepRecord {
  int stage = 0;
  Role role = Role::kDescriber;
  int step = 0;
  double mean_reward = 0.0;
  double mean_iou = 0.0;
  double mean_abs_advantage = 0.0;
  double ppo_loss = 0.0;
  double mle_loss = 0.0;
  double parse_failure_rate = 0.0;
  int labeled_used = 0;
};

struct StageMetrics {
  std::vector<StepRecord> steps;
  double mean_reward = 0.0;
  double mean_loss = 0.0;
  int labeled_used = 0;
};

// Everything a stage reads besides the snapshots.
struct StageContext {
  const std::vector<Unit>* train = nullptr;
  SceneConfig scene;
  // Coordinate format at the vocabulary's coordinate range.
  CoordFormat fmt;
  int stage_index = 0;
};

// H PPO outer steps on snap.live as describer. Throws RuntimeAbort on a
// non-finite loss.
StageMetrics describer_stage(PolicySnapshotSet& snap, const StageContext& ctx,
                             const TrainingSchedule& sched);
// H MLE steps on snap.live as locator against frozen-describer captions.
StageMetrics locator_stage(PolicySnapshotSet& snap, const StageContext& ctx,
                           const TrainingSchedule& sched);

// frozen <- live, roles swap, old <- live and (per schedule) ref <- live.
void synchronize(PolicySnapshotSet& snap, bool reanchor_ref = true);

struct StageEval {
  int stage = 0;
  Role role = Role::kDescriber;
  double pr_at_05 = 0.0;
  double rec_accuracy = 0.0;
  double mean_iou = 0.0;
  std::string checkpoint;
};

struct RunOptions {
  // When set, metrics.jsonl and one checkpoint per stage go here.
  std::string out_dir;
  const std::vector<Unit>* eval_units = nullptr;
  CoordFormat fmt;
  std::function<void(const std::string&)> log;
};

struct RunResult {
  std::vector<StepRecord> steps;
  std::vector<StageEval> evals;
  // Before any training.
  std::optional<StageEval> initial_eval;
  PolicyNetwork describer;
  PolicyNetwork locator;
  int syncs = 0;
};

// Describer = locator = init, then num_switches stages. The iterative mode
// alternates roles starting with the describer and synchronizes after every
// stage; the one-sided modes train a single role and never synchronize.
RunResult run_sc_tune(const PolicyNetwork& init, const Dataset& data,
                      const TrainingSchedule& sched, const RunOptions& opts);

// Held-out self-consistency and gold-caption locator accuracy.
StageEval evaluate_pair(const PolicyNetwork& describer,
                        const PolicyNetwork& locator,
                        std::span<const Unit> units, const SceneConfig& cfg,
                        const CoordFormat& fmt);

// Supervised warm start on reference captions for both roles. With
// probability caption_noise a caption is replaced by the bare category name,
// which leaves the describer less discriminative than the data allows.
struct PretrainConfig {
  int max_steps = 10000;
  int batch_size = 32;
  double lr = 1e-3;
  double caption_noise = 0.5;
  uint64_t seed = 0;
  int eval_every = 250;
  // Stop at the first evaluation whose validation Pr@0.5 lies in this band.
  // An empty band (lo > hi) trains for max_steps.
  double target_lo = 35.0;
  double target_hi = 55.0;
  int validation_size = 500;
};

struct PretrainResult {
  PolicyNetwork network;
  int steps = 0;
  double validation_pr = 0.0;
  double validation_rec = 0.0;
  bool in_band = false;
};

PretrainResult pretrain(const Dataset& data, const PretrainConfig& cfg,
                        const CoordFormat& fmt,
                        const std::function<void(const std::string&)>& log = {});

// Validation units drawn from scene ids disjoint from the dataset's train
// and held-out splits.
std::vector<Unit> validation_units(const Dataset& data, int n);

std::string step_record_json(const StepRecord& r);
std::string stage_eval_json(const StageEval& e);

}  // namespace sctune

#endif  // SCTUNE_TRAINER_HPP_
