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
#include <numeric>
#include <vector>

#include "sctune/errors.hpp"
#include "sctune/policy.hpp"
#include "sctune/rng.hpp"
#include "test_util.hpp"

namespace sctune {
namespace {

// Vocabulary of exactly 32 tokens: 3 specials, 4+4+3 attribute words, 4
// spatial words and coordinates 0..13.
SceneConfig scene32() {
  SceneConfig c;
  c.grid = 4;
  c.max_objects = 4;
  c.num_categories = 4;
  c.num_colors = 4;
  c.num_sizes = 3;
  return c;
}

PolicyNetwork unrestricted_zero() {
  const SceneConfig c = scene32();
  const Vocabulary v(4, 4, 3, 13);
  Architecture a = Architecture::for_scene(c, v);
  a.restrict_outputs = false;
  a.cell_hidden = 4;
  a.cell_out = 3;
  a.hidden = 6;
  return PolicyNetwork(a, v);
}

DecodingState some_state(const SceneConfig& cfg, const Vocabulary& v, uint64_t seed,
                         Role role) {
  const Unit u = make_unit(seed, 0, cfg);
  const SceneFeatures f = encode_scene(u.scene, cfg);
  if (role == Role::kDescriber) return describer_state(f, u.triplet.target, v);
  return locator_state(f, reference_caption(u.scene, u.target_index, v));
}

std::vector<double> softmax(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (double& x : p) x /= s;
  return p;
}

TEST(ForwardLogits, ZeroParametersGiveUniform) {
  const PolicyNetwork p = unrestricted_zero();
  ASSERT_EQ(p.vocab().size(), 32);
  const auto s = some_state(scene32(), p.vocab(), 1, Role::kDescriber);
  const auto probs = softmax(forward_logits(p, s));
  for (double q : probs) EXPECT_NEAR(q, 1.0 / 32.0, 1e-15);
  const auto lp = logprobs_of(p, s, std::vector<int>{7, 20, 2});
  for (double x : lp) EXPECT_NEAR(x, -std::log(32.0), 1e-12);
}

TEST(ForwardLogits, RoleMaskRestrictsSupport) {
  const SceneConfig cfg;
  const Vocabulary v = Vocabulary::for_scene(cfg);
  const PolicyNetwork p(Architecture::for_scene(cfg, v), v);
  const auto d = softmax(forward_logits(p, some_state(cfg, v, 2, Role::kDescriber)));
  const auto l = softmax(forward_logits(p, some_state(cfg, v, 2, Role::kLocator)));
  const int words = v.first_coord() - v.first_word();
  const int coords = v.size() - v.first_coord();
  for (int t = 0; t < v.size(); ++t) {
    const bool dw = t == Vocabulary::kEos || v.is_word(t);
    const bool lc = t == Vocabulary::kEos || v.is_coord(t);
    EXPECT_NEAR(d[t], dw ? 1.0 / (words + 1) : 0.0, 1e-12);
    EXPECT_NEAR(l[t], lc ? 1.0 / (coords + 1) : 0.0, 1e-12);
  }
}

TEST(ForwardLogits, DeterministicFiniteAndNormalized) {
  PolicyNetwork p = testing::tiny_network(3);
  const auto s = some_state(testing::tiny_scene(), p.vocab(), 4, Role::kDescriber);
  const auto a = forward_logits(p, s);
  EXPECT_EQ(a, forward_logits(p, s));
  for (double x : a) EXPECT_TRUE(std::isfinite(x));
  const auto q = softmax(a);
  EXPECT_NEAR(std::accumulate(q.begin(), q.end(), 0.0), 1.0, 1e-12);
}

TEST(ForwardLogits, RejectsMismatchedState) {
  const PolicyNetwork p = testing::tiny_network(3);
  DecodingState s = some_state(SceneConfig{}, Vocabulary::for_scene(SceneConfig{}), 1,
                               Role::kDescriber);
  EXPECT_THROW(forward_logits(p, s), std::invalid_argument);
  s = some_state(testing::tiny_scene(), p.vocab(), 1, Role::kDescriber);
  s.prefix.assign(p.arch().t_max, p.vocab().first_word());
  EXPECT_THROW(forward_logits(p, s), std::invalid_argument);
}

TEST(SampleSequence, SeededDeterministicAndCapped) {
  const PolicyNetwork p = testing::tiny_network(5);
  const auto s = some_state(testing::tiny_scene(), p.vocab(), 6, Role::kDescriber);
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = sample_sequence(p, s, seed);
    EXPECT_EQ(a.tokens, sample_sequence(p, s, seed).tokens);
    EXPECT_GE(a.length(), 1u);
    EXPECT_LE(a.length(), static_cast<size_t>(p.arch().t_max));
    EXPECT_EQ(a.logp_live.size(), a.length());
    for (double x : a.logp_live) EXPECT_LE(x, 0.0);
  }
}

TEST(SampleSequence, BatchAgreesWithSingle) {
  const PolicyNetwork p = testing::tiny_network(5);
  std::vector<DecodingState> states;
  std::vector<uint64_t> seeds;
  for (uint64_t i = 0; i < 8; ++i) {
    states.push_back(some_state(testing::tiny_scene(), p.vocab(), i,
                                i % 2 ? Role::kLocator : Role::kDescriber));
    seeds.push_back(100 + i);
  }
  const auto batch = sample_batch(p, states, seeds);
  for (size_t i = 0; i < states.size(); ++i) {
    const auto one = sample_sequence(p, states[i], seeds[i]);
    EXPECT_EQ(batch[i].tokens, one.tokens);
    EXPECT_EQ(batch[i].logp_live, one.logp_live);
  }
}

TEST(SampleSequence, FirstTokenFrequenciesMatchSoftmax) {
  PolicyNetwork p = testing::tiny_network(8);
  // Sharpen the distribution so the test is not trivially uniform.
  for (double& x : p.params()) x *= 3.0;
  const auto s = some_state(testing::tiny_scene(), p.vocab(), 9, Role::kDescriber);
  const auto probs = softmax(forward_logits(p, s));
  const size_t n = 100000;
  std::vector<DecodingState> states(n, s);
  std::vector<uint64_t> seeds(n);
  for (size_t i = 0; i < n; ++i) seeds[i] = mix_seed(77, i);
  const auto seqs = sample_batch(p, states, seeds);
  std::vector<double> counts(probs.size(), 0.0);
  for (const auto& q : seqs) counts[q.tokens.at(0)] += 1.0;
  for (size_t t = 0; t < probs.size(); ++t) {
    const double freq = counts[t] / n;
    const double se = std::sqrt(probs[t] * (1.0 - probs[t]) / n);
    if (probs[t] == 0.0) {
      EXPECT_EQ(counts[t], 0.0) << "token " << t;
    } else {
      EXPECT_LE(std::abs(freq - probs[t]), 3.0 * se) << "token " << t;
    }
  }
}

TEST(LogprobsOf, RescoringMatchesSampling) {
  const PolicyNetwork p = testing::tiny_network(10);
  for (uint64_t i = 0; i < 20; ++i) {
    const auto s = some_state(testing::tiny_scene(), p.vocab(), i,
                              i % 2 ? Role::kLocator : Role::kDescriber);
    const auto q = sample_sequence(p, s, i);
    const auto lp = logprobs_of(p, s, q.tokens);
    ASSERT_EQ(lp.size(), q.logp_live.size());
    for (size_t t = 0; t < lp.size(); ++t) EXPECT_NEAR(lp[t], q.logp_live[t], 1e-12);
  }
}

TEST(LogprobsOf, SumIsLogOfProductOfStepProbabilities) {
  const PolicyNetwork p = testing::tiny_network(11);
  const auto s = some_state(testing::tiny_scene(), p.vocab(), 3, Role::kDescriber);
  const std::vector<int> toks{p.vocab().category(1), p.vocab().color(0), Vocabulary::kEos};
  const auto lp = logprobs_of(p, s, toks);
  double prod = 1.0;
  DecodingState step = s;
  for (int t : toks) {
    prod *= softmax(forward_logits(p, step))[t];
    step.prefix.push_back(t);
  }
  EXPECT_NEAR(lp[0] + lp[1] + lp[2], std::log(prod), 1e-12);
}

TEST(LogprobsOf, RejectsBadTokens) {
  const PolicyNetwork p = testing::tiny_network(11);
  const auto s = some_state(testing::tiny_scene(), p.vocab(), 3, Role::kDescriber);
  EXPECT_THROW(logprobs_of(p, s, std::vector<int>{p.vocab().size()}), std::invalid_argument);
  EXPECT_THROW(logprobs_of(p, s, std::vector<int>(p.arch().t_max + 1, 3)),
               std::invalid_argument);
}

TEST(GreedyDecode, DominantLogitRepeatsUntilCap) {
  PolicyNetwork p = unrestricted_zero();
  const int tok = 9;
  p.params()[p.layout().out_b + tok] = 10.0;
  const auto s = some_state(scene32(), p.vocab(), 1, Role::kDescriber);
  const auto g = greedy_decode(p, s);
  EXPECT_EQ(g.tokens, std::vector<int>(p.arch().t_max, tok));
  EXPECT_EQ(greedy_decode(p, s).tokens, g.tokens);
  // An EOS-dominant policy stops after one token.
  p.params()[p.layout().out_b + Vocabulary::kEos] = 20.0;
  EXPECT_EQ(greedy_decode(p, s).tokens, std::vector<int>{Vocabulary::kEos});
}

TEST(GreedyDecode, TiesGoToLowestId) {
  PolicyNetwork p = unrestricted_zero();
  p.params()[p.layout().out_b + 4] = 5.0;
  p.params()[p.layout().out_b + 9] = 5.0;
  const auto s = some_state(scene32(), p.vocab(), 1, Role::kLocator);
  EXPECT_EQ(greedy_decode(p, s).tokens.at(0), 4);
}

TEST(Backward, MatchesFiniteDifferencesOnRandomCoordinates) {
  const PolicyNetwork base = testing::tiny_network(12);
  std::vector<DecodingState> states;
  std::vector<std::vector<int>> tokens;
  for (uint64_t i = 0; i < 4; ++i) {
    const Role role = i % 2 ? Role::kLocator : Role::kDescriber;
    states.push_back(some_state(testing::tiny_scene(), base.vocab(), 20 + i, role));
    tokens.push_back(sample_sequence(base, states.back(), i).tokens);
  }
  auto loss = [&](ad::Tape& t, const PolicyNetwork& p) {
    const ad::Var lp = sequence_logprobs(t, p, states, tokens);
    std::vector<double> w(t.rows(lp));
    for (size_t k = 0; k < w.size(); ++k) w[k] = std::sin(1.0 + static_cast<double>(k));
    return t.sum(t.mul_const(lp, w));
  };
  const LossAndGrad lg = backward(base, [&](ad::Tape& t) { return loss(t, base); });
  PolicyNetwork probe = base;
  std::vector<double> params(base.params().begin(), base.params().end());
  auto f = [&] {
    std::copy(params.begin(), params.end(), probe.params().begin());
    ad::Tape t(probe.params(), false);
    return t.scalar(loss(t, probe));
  };
  Rng rng(13);
  int checked = 0;
  for (int k = 0; k < 150; ++k) {
    const size_t i = rng.index(params.size());
    const double fd = testing::central_difference(params, i, 1e-5, f);
    EXPECT_TRUE(testing::gradient_close(lg.grad[i], fd))
        << "coord " << i << " analytic " << lg.grad[i] << " numeric " << fd;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Backward, NonFiniteLossThrows) {
  const PolicyNetwork p = testing::tiny_network(1);
  EXPECT_THROW(backward(p,
                        [](ad::Tape& t) {
                          return t.sum(t.constant(1, 1, {std::nan("")}));
                        }),
               std::domain_error);
}

TEST(SyncInto, DeepCopyAndIdempotent) {
  PolicyNetwork src = testing::tiny_network(14);
  PolicyNetwork dst = testing::tiny_network(15);
  sync_into(src, dst);
  EXPECT_TRUE(std::equal(src.params().begin(), src.params().end(), dst.params().begin()));
  sync_into(src, dst);
  EXPECT_TRUE(std::equal(src.params().begin(), src.params().end(), dst.params().begin()));
  const double before = dst.params()[0];
  src.params()[0] += 1.0;
  EXPECT_EQ(dst.params()[0], before);
  PolicyNetwork other(Architecture::for_scene(SceneConfig{}, Vocabulary{}), Vocabulary{});
  EXPECT_THROW(sync_into(src, other), std::invalid_argument);
}

TEST(Checkpoint, RoundTripReproducesForwardExactly) {
  testing::TempDir dir;
  const PolicyNetwork p = testing::tiny_network(16);
  Checkpoint c;
  c.arch = p.arch();
  c.vocab = p.vocab();
  c.networks = {{"describer", {p.params().begin(), p.params().end()}},
                {"locator", std::vector<double>(p.num_params(), 0.25)}};
  save_checkpoint(c, dir.file("a.ckpt"));
  const Checkpoint back = load_checkpoint(dir.file("a.ckpt"));
  EXPECT_EQ(back.kind, "network");
  EXPECT_EQ(back.arch, p.arch());
  EXPECT_TRUE(back.vocab == p.vocab());
  const PolicyNetwork q = back.network("describer");
  const auto s = some_state(testing::tiny_scene(), p.vocab(), 2, Role::kDescriber);
  EXPECT_EQ(forward_logits(p, s), forward_logits(q, s));
  EXPECT_EQ(back.network("locator").params()[3], 0.25);
  EXPECT_THROW(back.network("policy"), DataError);
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
  testing::TempDir dir;
  EXPECT_THROW(load_checkpoint(dir.file("missing.ckpt")), DataError);
  testing::write_file(dir.file("junk.ckpt"), "definitely not a checkpoint");
  EXPECT_THROW(load_checkpoint(dir.file("junk.ckpt")), DataError);
  const PolicyNetwork p = testing::tiny_network(16);
  Checkpoint c;
  c.arch = p.arch();
  c.vocab = p.vocab();
  c.networks = {{"policy", {p.params().begin(), p.params().end()}}};
  save_checkpoint(c, dir.file("ok.ckpt"));
  std::string bytes = testing::read_file(dir.file("ok.ckpt"));
  testing::write_file(dir.file("short.ckpt"), bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(dir.file("short.ckpt")), DataError);
}

TEST(Checkpoint, OracleKindStoresNoParameters) {
  testing::TempDir dir;
  Checkpoint c;
  c.kind = "oracle";
  c.vocab = Vocabulary::for_scene(SceneConfig{});
  c.arch = Architecture::for_scene(SceneConfig{}, c.vocab);
  save_checkpoint(c, dir.file("o.ckpt"));
  const Checkpoint back = load_checkpoint(dir.file("o.ckpt"));
  EXPECT_EQ(back.kind, "oracle");
  EXPECT_TRUE(back.networks.empty());
}

}  // namespace
}  // namespace sctune
