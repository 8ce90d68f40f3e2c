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

// The shared sequence policy. One parameter vector serves both roles: the
// describer (box -> caption) and the locator (caption -> box tokens).
//
// Network, per decoding state s with scene features X (G*G cells x F
// channels) and a conditioning vector q:
//
//   q     = role one-hot | conditioning slot one-hots | conditioning bag |
//           mean features of the cells inside the conditioning box
//   z1[c] = relu(Wc [X[c], in_box(c)] + bc + Wq q)     per cell c
//   z2[c] = relu(W2 z1[c] + b2)
//   e     = Wp pool(z2) + bp + Wh q   pool: totals, row sums, column sums
//   h1    = relu(e + Ws [prefix bag | last token | position])
//   h2    = relu(Wh2 h1 + bh2)
//   logits = Wo h2 + bo  (+ role output mask)
//
// The encoder output e is computed once per sequence; only the last three
// lines run per decoding step.

#ifndef SCTUNE_POLICY_HPP_
#define SCTUNE_POLICY_HPP_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sctune/autodiff.hpp"
#include "sctune/refgame.hpp"
#include "sctune/vocab.hpp"

namespace sctune {

enum class Role : int { kDescriber = 0, kLocator = 1 };

const char* role_name(Role r);

struct Architecture {
  int grid = 8;
  int channels = 17;
  int vocab_size = 57;
  int t_max = 8;
  int cell_hidden = 32;
  int cell_out = 16;
  int hidden = 64;
  // Describer logits are masked to words and EOS, locator logits to
  // coordinate tokens and EOS.
  bool restrict_outputs = true;

  static Architecture for_scene(const SceneConfig& cfg, const Vocabulary& v);

  int cond_dim() const { return 2 + t_max * vocab_size + vocab_size + channels; }
  int pooled_dim() const { return cell_out * (2 * grid + 1); }
  int step_dim() const { return 2 * vocab_size + t_max; }
  // Throws std::invalid_argument.
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Offsets of each weight block in the flat parameter vector. Tables read by
// sparse inputs are stored input-major (k x m); dense layers out-major (m x k).
struct ParamLayout {
  size_t cell_w, cell_b, cell_cond, cell2_w, cell2_b, pool_w, pool_b,
      head_cond, step_w, h2_w, h2_b, out_w, out_b, total;

  static ParamLayout of(const Architecture& a);
};

class PolicyNetwork {
 public:
  // All parameters zero.
  PolicyNetwork(Architecture arch, Vocabulary vocab);

  const Architecture& arch() const { return arch_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  size_t num_params() const { return params_.size(); }

  // Uniform(+-1/sqrt(fan_in)) per block.
  void init_random(uint64_t seed);
  bool same_shape(const PolicyNetwork& o) const {
    return arch_ == o.arch_ && vocab_ == o.vocab_;
  }

 private:
  Architecture arch_;
  Vocabulary vocab_;
  ParamLayout layout_;
  std::vector<double> params_;
};

struct DecodingState {
  Role role = Role::kDescriber;
  SceneFeatures features;
  // Target box tokens for the describer, caption tokens for the locator.
  std::vector<int> conditioning;
  std::vector<int> prefix;
};

DecodingState describer_state(const SceneFeatures& f, const BBox& target,
                              const Vocabulary& v);
DecodingState locator_state(const SceneFeatures& f,
                            std::span<const int> caption);

struct CaptionSequence {
  std::vector<int> tokens;
  std::vector<double> logp_live;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;

  size_t length() const { return tokens.size(); }
};

// Logits over the vocabulary for the next token after s.prefix.
std::vector<double> forward_logits(const PolicyNetwork& p,
                                   const DecodingState& s);

// Multinomial sampling until EOS or t_max; records logp_live. Each state in
// the batch draws from its own seed, so batch and single calls agree.
CaptionSequence sample_sequence(const PolicyNetwork& p,
                                const DecodingState& s0, uint64_t seed);
std::vector<CaptionSequence> sample_batch(const PolicyNetwork& p,
                                          std::span<const DecodingState> s0,
                                          std::span<const uint64_t> seeds);

// Argmax decoding, ties to the lowest token id; records logp_live.
CaptionSequence greedy_decode(const PolicyNetwork& p, const DecodingState& s0);
std::vector<CaptionSequence> greedy_batch(const PolicyNetwork& p,
                                          std::span<const DecodingState> s0);

// Teacher-forced per-token log-probabilities. Throws std::invalid_argument on
// an out-of-vocabulary token or a sequence longer than t_max.
std::vector<double> logprobs_of(const PolicyNetwork& p, const DecodingState& s0,
                                std::span<const int> tokens);
std::vector<std::vector<double>> logprobs_batch(
    const PolicyNetwork& p, std::span<const DecodingState> s0,
    std::span<const std::vector<int>> tokens);

// Differentiable version of logprobs_batch on a tape built over p.params():
// one column holding every token's log-probability, sequences concatenated.
ad::Var sequence_logprobs(ad::Tape& t, const PolicyNetwork& p,
                          std::span<const DecodingState> s0,
                          std::span<const std::vector<int>> tokens);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Builds loss on a fresh tape over p's parameters and differentiates it.
// Throws std::domain_error on a non-finite loss.
LossAndGrad backward(const PolicyNetwork& p,
                     const std::function<ad::Var(ad::Tape&)>& loss);

// dst <- src (deep copy). Throws std::invalid_argument on a shape mismatch.
void sync_into(const PolicyNetwork& src, PolicyNetwork& dst);

// Versioned binary checkpoint: magic, version, a JSON header describing the
// architecture, vocabulary and stored networks, then the raw f64 parameters.
// An "oracle" checkpoint stores no parameters and stands for the lossless
// describer/locator pair used to test the evaluation path.
struct Checkpoint {
  struct Network {
    std::string name;
    std::vector<double> params;
  };
  std::string kind = "network";
  Architecture arch;
  Vocabulary vocab;
  std::vector<Network> networks;

  const Network* find(const std::string& name) const;
  // Throws DataError when the named network is absent.
  PolicyNetwork network(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
// Throws DataError on a malformed or incompatible file.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sctune

#endif  // SCTUNE_POLICY_HPP_
