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

#include "sctune/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "sctune/errors.hpp"
#include "sctune/rng.hpp"

namespace sctune {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Batch {
  std::vector<const Unit*> units;
  std::vector<SceneFeatures> features;
  std::vector<BBox> targets;
};

Batch draw_batch(const std::vector<Unit>& pool, int n, Rng& rng,
                 const SceneConfig& cfg) {
  Batch b;
  for (int i = 0; i < n; ++i) {
    const Unit& u = pool[rng.index(pool.size())];
    b.units.push_back(&u);
    b.features.push_back(encode_scene(u.scene, cfg));
    b.targets.push_back(u.triplet.target);
  }
  return b;
}

uint64_t step_seed(uint64_t seed, int stage, int step) {
  return mix_seed(mix_seed(seed, static_cast<uint64_t>(stage) + 1),
                  static_cast<uint64_t>(step));
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Differentiates loss on a tape over p's parameters and takes one optimizer
// step. Non-finite values abort the run with the stage and step.
double train_step(PolicyNetwork& p, OptimizerState& opt, double lr,
                  const TrainingSchedule& sched,
                  const std::function<ad::Var(ad::Tape&)>& loss,
                  const char* stage, int stage_index, int step) {
  try {
    LossAndGrad lg = backward(p, loss);
    clip_grad_norm(lg.grad, sched.max_grad_norm);
    optimizer_step(p.params(), lg.grad, opt, lr, sched.weight_decay);
    return lg.loss;
  } catch (const std::domain_error& e) {
    throw RuntimeAbort(std::string(stage) + " stage " +
                       std::to_string(stage_index) + " step " +
                       std::to_string(step) + ": " + e.what());
  }
}

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kIterative: return "iterative";
    case TrainMode::kDescriberOnly: return "describer-only";
    case TrainMode::kLocatorOnly: return "locator-only";
  }
  return "?";
}

TrainingSchedule TrainingSchedule::large_profile() {
  TrainingSchedule s;
  s.H = 200;
  s.num_switches = 6;
  s.batch_size = 128;
  s.lr_describer = 5e-7;
  s.lr_locator = 1e-6;
  s.weight_decay = 0.1;
  s.ppo.beta = 0.01;
  s.ppo.ppo_epochs = 2;
  return s;
}

void TrainingSchedule::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (H < 1) fail("schedule: H must be >= 1");
  if (num_switches < 2) fail("schedule: num_switches must be >= 2");
  if (batch_size < 1) fail("schedule: batch_size must be >= 1");
  // Zero is accepted so that a stage can run without moving its parameters.
  if (!(lr_describer >= 0.0) || !(lr_locator >= 0.0)) {
    fail("schedule: learning rates must be >= 0");
  }
  if (!(weight_decay >= 0.0)) fail("schedule: weight_decay must be >= 0");
  if (!(sup_mix_ratio >= 0.0 && sup_mix_ratio <= 1.0)) {
    fail("schedule: sup_mix_ratio must be in [0, 1]");
  }
  try {
    ppo.validate();
  } catch (const std::invalid_argument& e) {
    fail(std::string("schedule: ") + e.what());
  }
}

PolicySnapshotSet::PolicySnapshotSet(const PolicyNetwork& init, Role role)
    : live(init), frozen_counterpart(init), old(init), ref(init),
      live_role(role) {}

InstructionSequence make_instruction(std::span<const int> caption,
                                     const BBox& target, const Vocabulary& v) {
  InstructionSequence s;
  s.tokens.assign(caption.begin(), caption.end());
  s.loss_mask.assign(s.tokens.size(), 0);
  for (int t : box_tokens(target, v)) {
    s.tokens.push_back(t);
    s.loss_mask.push_back(1);
  }
  s.tokens.push_back(Vocabulary::kEos);
  s.loss_mask.push_back(1);
  return s;
}

ad::Var mle_loss(ad::Tape& t, const PolicyNetwork& p,
                 std::span<const SceneFeatures> scenes,
                 std::span<const InstructionSequence> seqs) {
  if (seqs.empty()) throw std::invalid_argument("mle_loss: empty batch");
  if (scenes.size() != seqs.size()) {
    throw std::invalid_argument("mle_loss: one scene per sequence required");
  }
  std::vector<DecodingState> states;
  std::vector<std::vector<int>> targets;
  for (size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i];
    if (s.loss_mask.size() != s.tokens.size()) {
      throw std::invalid_argument("mle_loss: mask length differs from tokens");
    }
    size_t split = 0;
    while (split < s.tokens.size() && !s.loss_mask[split]) ++split;
    if (split == s.tokens.size()) {
      throw std::invalid_argument("mle_loss: no masked-in position");
    }
    for (size_t k = split; k < s.tokens.size(); ++k) {
      if (!s.loss_mask[k]) {
        throw std::invalid_argument("mle_loss: masked-in positions must be a suffix");
      }
    }
    std::span<const int> cond(s.tokens.data(), split);
    if (static_cast<int>(cond.size()) > p.arch().t_max) {
      cond = cond.first(p.arch().t_max);
    }
    states.push_back(locator_state(scenes[i], cond));
    targets.emplace_back(s.tokens.begin() + split, s.tokens.end());
  }
  return t.scale(t.mean(sequence_logprobs(t, p, states, targets)), -1.0);
}

ad::Var caption_mle_loss(ad::Tape& t, const PolicyNetwork& p,
                         std::span<const SceneFeatures> scenes,
                         std::span<const BBox> targets,
                         std::span<const std::vector<int>> captions) {
  std::vector<DecodingState> states;
  for (size_t i = 0; i < scenes.size(); ++i) {
    states.push_back(describer_state(scenes[i], targets[i], p.vocab()));
  }
  return t.scale(t.mean(sequence_logprobs(t, p, states, captions)), -1.0);
}

StageMetrics describer_stage(PolicySnapshotSet& snap, const StageContext& ctx,
                             const TrainingSchedule& sched) {
  if (snap.live_role != Role::kDescriber) {
    throw std::logic_error("describer_stage needs the describer live");
  }
  if (sched.H < 1) throw ConfigError("describer_stage: H must be >= 1");
  if (!ctx.train || ctx.train->empty()) throw DataError("empty training split");
  const PolicyNetwork& locator = snap.frozen_counterpart;
  OptimizerState opt(snap.live.num_params());
  StageMetrics m;
  std::vector<double> rewards;
  for (int step = 0; step < sched.H; ++step) {
    Rng rng(step_seed(sched.seed, ctx.stage_index, step));
    const Batch b = draw_batch(*ctx.train, sched.batch_size, rng, ctx.scene);
    const size_t n = b.units.size();
    std::vector<DecodingState> states;
    std::vector<uint64_t> seeds;
    for (size_t i = 0; i < n; ++i) {
      states.push_back(describer_state(b.features[i], b.targets[i],
                                       snap.live.vocab()));
      seeds.push_back(rng.next());
    }

    sync_into(snap.live, snap.old);
    std::vector<CaptionSequence> seqs = sample_batch(snap.live, states, seeds);
    std::vector<std::vector<int>> tokens;
    for (const auto& s : seqs) tokens.push_back(s.tokens);
    const auto old_lp = logprobs_batch(snap.old, states, tokens);
    const auto ref_lp = logprobs_batch(snap.ref, states, tokens);
    const auto rec = reconstruction_iou_batch(b.targets, tokens, locator,
                                              b.features, ctx.fmt);
    const auto base =
        compute_baselines(states, b.targets, snap.ref, locator, ctx.fmt);

    StepRecord r;
    r.stage = ctx.stage_index;
    r.role = Role::kDescriber;
    r.step = step;
    r.mle_loss = kNaN;
    std::vector<std::vector<double>> adv(n);
    double total_return = 0.0, total_iou = 0.0, abs_adv = 0.0;
    size_t num_tokens = 0, failures = 0;
    for (size_t i = 0; i < n; ++i) {
      seqs[i].logp_old = old_lp[i];
      seqs[i].logp_ref = ref_lp[i];
      RewardVector rv =
          compute_rewards(seqs[i], rec[i].iou, sched.ppo.beta);
      rv.baseline_reward = base[i];
      adv[i] = compute_advantages(rv);
      for (double x : rv.rewards) total_return += x;
      for (double a : adv[i]) abs_adv += std::fabs(a);
      num_tokens += adv[i].size();
      total_iou += rec[i].iou;
      failures += rec[i].box ? 0 : 1;
    }
    r.mean_reward = total_return / n;
    r.mean_iou = total_iou / n;
    r.mean_abs_advantage = abs_adv / static_cast<double>(num_tokens);
    r.parse_failure_rate = static_cast<double>(failures) / n;

    for (int epoch = 0; epoch < sched.ppo.ppo_epochs; ++epoch) {
      const double loss = train_step(
          snap.live, opt, sched.lr_describer, sched,
          [&](ad::Tape& t) {
            return ppo_loss(t, snap.live, states, seqs, adv, sched.ppo);
          },
          "describer", ctx.stage_index, step);
      if (epoch == 0) r.ppo_loss = loss;
    }
    rewards.push_back(r.mean_reward);
    m.steps.push_back(r);
  }
  m.mean_reward = mean(rewards);
  std::vector<double> losses;
  for (const auto& s : m.steps) losses.push_back(s.ppo_loss);
  m.mean_loss = mean(losses);
  return m;
}

StageMetrics locator_stage(PolicySnapshotSet& snap, const StageContext& ctx,
                           const TrainingSchedule& sched) {
  if (snap.live_role != Role::kLocator) {
    throw std::logic_error("locator_stage needs the locator live");
  }
  if (sched.H < 1) throw ConfigError("locator_stage: H must be >= 1");
  if (!ctx.train || ctx.train->empty()) throw DataError("empty training split");
  const PolicyNetwork& describer = snap.frozen_counterpart;
  const Vocabulary& v = snap.live.vocab();
  OptimizerState opt(snap.live.num_params());
  StageMetrics m;
  const int n_sup = static_cast<int>(
      std::lround(sched.sup_mix_ratio * sched.batch_size));
  const int n_pseudo = sched.batch_size - n_sup;
  for (int step = 0; step < sched.H; ++step) {
    Rng rng(step_seed(sched.seed, ctx.stage_index, step));
    Batch b = draw_batch(*ctx.train, n_pseudo, rng, ctx.scene);
    std::vector<DecodingState> states;
    for (int i = 0; i < n_pseudo; ++i) {
      states.push_back(describer_state(b.features[i], b.targets[i], v));
    }
    std::vector<std::vector<int>> captions;
    for (auto& s : greedy_batch(describer, states)) {
      captions.push_back(std::move(s.tokens));
    }
    if (n_sup > 0) {
      const Batch lab = draw_batch(*ctx.train, n_sup, rng, ctx.scene);
      for (int i = 0; i < n_sup; ++i) {
        const Unit& u = *lab.units[i];
        captions.push_back(reference_caption(u.scene, u.target_index, v));
        b.units.push_back(lab.units[i]);
        b.features.push_back(lab.features[i]);
        b.targets.push_back(lab.targets[i]);
      }
    }

    StepRecord r;
    r.stage = ctx.stage_index;
    r.role = Role::kLocator;
    r.step = step;
    r.mean_reward = kNaN;
    r.mean_abs_advantage = kNaN;
    r.ppo_loss = kNaN;
    r.labeled_used = n_sup;
    const auto rec = reconstruction_iou_batch(b.targets, captions, snap.live,
                                              b.features, ctx.fmt);
    double total_iou = 0.0;
    size_t failures = 0;
    for (const auto& x : rec) {
      total_iou += x.iou;
      failures += x.box ? 0 : 1;
    }
    r.mean_iou = total_iou / rec.size();
    r.parse_failure_rate = static_cast<double>(failures) / rec.size();

    std::vector<InstructionSequence> seqs;
    for (size_t i = 0; i < captions.size(); ++i) {
      seqs.push_back(make_instruction(captions[i], b.targets[i], v));
    }
    r.mle_loss = train_step(
        snap.live, opt, sched.lr_locator, sched,
        [&](ad::Tape& t) { return mle_loss(t, snap.live, b.features, seqs); },
        "locator", ctx.stage_index, step);
    m.labeled_used += n_sup;
    m.steps.push_back(r);
  }
  std::vector<double> losses;
  for (const auto& s : m.steps) losses.push_back(s.mle_loss);
  m.mean_loss = mean(losses);
  m.mean_reward = kNaN;
  return m;
}

void synchronize(PolicySnapshotSet& snap, bool reanchor_ref) {
  sync_into(snap.live, snap.frozen_counterpart);
  snap.live_role = snap.live_role == Role::kDescriber ? Role::kLocator
                                                      : Role::kDescriber;
  sync_into(snap.live, snap.old);
  if (reanchor_ref) sync_into(snap.live, snap.ref);
}

StageEval evaluate_pair(const PolicyNetwork& describer,
                        const PolicyNetwork& locator,
                        std::span<const Unit> units, const SceneConfig& cfg,
                        const CoordFormat& fmt) {
  const Vocabulary& v = describer.vocab();
  StageEval e;
  const auto sc = self_consistency_eval(network_describer(describer, cfg),
                                        network_locator(locator, cfg), units, v,
                                        fmt);
  const auto labeled = labeled_items(units, v);
  const auto rec = rec_accuracy(network_locator(locator, cfg), labeled, v, fmt);
  e.pr_at_05 = sc.summary.pr_at_05.value_or(0.0);
  e.mean_iou = sc.summary.mean_iou;
  e.rec_accuracy = rec.summary.pr_at_05.value_or(0.0);
  return e;
}

std::string step_record_json(const StepRecord& r) {
  json j = {{"event", "step"},
            {"stage", r.stage},
            {"role", role_name(r.role)},
            {"step", r.step},
            {"mean_reward", num_or_null(r.mean_reward)},
            {"mean_iou", num_or_null(r.mean_iou)},
            {"mean_abs_advantage", num_or_null(r.mean_abs_advantage)},
            {"ppo_loss", num_or_null(r.ppo_loss)},
            {"mle_loss", num_or_null(r.mle_loss)},
            {"parse_failure_rate", num_or_null(r.parse_failure_rate)},
            {"labeled_used", r.labeled_used}};
  return j.dump();
}

std::string stage_eval_json(const StageEval& e) {
  json j = {{"event", "eval"},
            {"stage", e.stage},
            {"role", role_name(e.role)},
            {"pr_at_05", e.pr_at_05},
            {"rec_accuracy", e.rec_accuracy},
            {"mean_iou", e.mean_iou},
            {"checkpoint", e.checkpoint}};
  return j.dump();
}

RunResult run_sc_tune(const PolicyNetwork& init, const Dataset& data,
                      const TrainingSchedule& sched, const RunOptions& opts) {
  sched.validate();
  if (data.train.empty()) throw DataError("dataset has no training units");
  const Role first =
      sched.mode == TrainMode::kLocatorOnly ? Role::kLocator : Role::kDescriber;
  PolicySnapshotSet snap(init, first);
  const StageContext base{&data.train, data.config, opts.fmt, 0};

  std::ofstream metrics;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    const auto path = std::filesystem::path(opts.out_dir) / "metrics.jsonl";
    metrics.open(path, std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write " + path.string());
  }
  auto log = [&](const std::string& s) {
    if (opts.log) opts.log(s);
  };

  RunResult res{{}, {}, std::nullopt, init, init, 0};
  if (opts.eval_units) {
    StageEval e = evaluate_pair(init, init, *opts.eval_units, data.config,
                                opts.fmt);
    e.stage = -1;
    res.initial_eval = e;
    if (metrics.is_open()) metrics << stage_eval_json(e) << '\n';
    char buf[128];
    std::snprintf(buf, sizeof buf, "initial  pr@0.5 %.1f  rec %.1f",
                  e.pr_at_05, e.rec_accuracy);
    log(buf);
  }

  for (int k = 0; k < sched.num_switches; ++k) {
    StageContext ctx = base;
    ctx.stage_index = k;
    const Role role = snap.live_role;
    StageMetrics m = role == Role::kDescriber ? describer_stage(snap, ctx, sched)
                                              : locator_stage(snap, ctx, sched);
    for (const auto& r : m.steps) {
      if (metrics.is_open()) metrics << step_record_json(r) << '\n';
      res.steps.push_back(r);
    }
    if (sched.mode == TrainMode::kIterative) {
      synchronize(snap, sched.ref_per_stage);
      ++res.syncs;
    } else {
      sync_into(snap.live, snap.old);
      if (sched.ref_per_stage) sync_into(snap.live, snap.ref);
    }

    StageEval e;
    if (opts.eval_units) {
      e = evaluate_pair(snap.describer(), snap.locator(), *opts.eval_units,
                        data.config, opts.fmt);
    }
    e.stage = k;
    e.role = role;
    if (!opts.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "switch_%02d.ckpt", k + 1);
      const auto path = std::filesystem::path(opts.out_dir) / name;
      Checkpoint c;
      c.arch = init.arch();
      c.vocab = init.vocab();
      c.networks = {{"describer", {snap.describer().params().begin(),
                                   snap.describer().params().end()}},
                    {"locator", {snap.locator().params().begin(),
                                 snap.locator().params().end()}}};
      save_checkpoint(c, path.string());
      e.checkpoint = name;
    }
    if (metrics.is_open()) {
      metrics << stage_eval_json(e) << '\n';
      metrics.flush();
    }
    res.evals.push_back(e);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "stage %d %-9s loss %.4f  pr@0.5 %.1f  rec %.1f", k + 1,
                  role_name(role), m.mean_loss, e.pr_at_05, e.rec_accuracy);
    log(buf);
  }
  res.describer = snap.describer();
  res.locator = snap.locator();
  return res;
}

std::vector<Unit> validation_units(const Dataset& data, int n) {
  const int64_t base =
      static_cast<int64_t>(data.train.size() + data.heldout.size());
  std::vector<Unit> out(n);
  for (int i = 0; i < n; ++i) out[i] = make_unit(data.seed, base + i, data.config);
  return out;
}

PretrainResult pretrain(const Dataset& data, const PretrainConfig& cfg,
                        const CoordFormat& fmt,
                        const std::function<void(const std::string&)>& log) {
  if (data.train.empty()) throw DataError("dataset has no training units");
  if (cfg.max_steps < 1 || cfg.batch_size < 1 || cfg.eval_every < 1) {
    throw ConfigError("pretrain: steps, batch size and eval interval must be >= 1");
  }
  const Vocabulary v = Vocabulary::for_scene(data.config);
  PolicyNetwork net(Architecture::for_scene(data.config, v), v);
  net.init_random(mix_seed(cfg.seed, 0x1417));
  const auto val = validation_units(data, cfg.validation_size);
  OptimizerState opt(net.num_params());
  TrainingSchedule no_decay;
  no_decay.weight_decay = 0.0;

  PretrainResult res{net, 0, 0.0, 0.0, false};
  for (int step = 1; step <= cfg.max_steps; ++step) {
    Rng rng(mix_seed(mix_seed(cfg.seed, 0x5057), static_cast<uint64_t>(step)));
    const Batch b = draw_batch(data.train, cfg.batch_size, rng, data.config);
    std::vector<std::vector<int>> captions;
    std::vector<InstructionSequence> instr;
    for (size_t i = 0; i < b.units.size(); ++i) {
      const Unit& u = *b.units[i];
      captions.push_back(rng.bernoulli(cfg.caption_noise)
                             ? category_caption(u.scene, u.target_index, v)
                             : reference_caption(u.scene, u.target_index, v));
      instr.push_back(make_instruction(captions.back(), b.targets[i], v));
    }
    train_step(
        res.network, opt, cfg.lr, no_decay,
        [&](ad::Tape& t) {
          return t.add(
              caption_mle_loss(t, res.network, b.features, b.targets, captions),
              mle_loss(t, res.network, b.features, instr));
        },
        "pretrain", 0, step);
    res.steps = step;
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const StageEval e =
          evaluate_pair(res.network, res.network, val, data.config, fmt);
      res.validation_pr = e.pr_at_05;
      res.validation_rec = e.rec_accuracy;
      res.in_band = e.pr_at_05 >= cfg.target_lo && e.pr_at_05 <= cfg.target_hi;
      if (log) {
        char buf[128];
        std::snprintf(buf, sizeof buf,
                      "pretrain step %d  val pr@0.5 %.1f  rec %.1f", step,
                      e.pr_at_05, e.rec_accuracy);
        log(buf);
      }
      if (res.in_band) break;
    }
  }
  return res;
}

}  // namespace sctune
