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

#include "sctune/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "sctune/errors.hpp"
#include "sctune/rng.hpp"

namespace sctune {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

// Added to disallowed logits. Finite, so logits stay finite, and large
// enough that exp() of the shifted value is exactly zero.
constexpr double kMaskedLogit = -1e9;

constexpr char kMagic[8] = {'S', 'C', 'T', 'U', 'N', 'E', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

void check_token(const Architecture& a, int tok) {
  if (tok < 0 || tok >= a.vocab_size) {
    throw std::invalid_argument("token id " + std::to_string(tok) +
                                " outside vocabulary of size " +
                                std::to_string(a.vocab_size));
  }
}

void check_state(const Architecture& a, const DecodingState& s) {
  if (s.features.grid() != a.grid || s.features.channels() != a.channels) {
    throw std::invalid_argument(
        "scene features do not match the architecture (grid " +
        std::to_string(s.features.grid()) + "x" +
        std::to_string(s.features.channels()) + " vs " +
        std::to_string(a.grid) + "x" + std::to_string(a.channels) + ")");
  }
  if (static_cast<int>(s.prefix.size()) >= a.t_max) {
    throw std::invalid_argument("decoding prefix must be shorter than t_max");
  }
  for (int t : s.conditioning) check_token(a, t);
  for (int t : s.prefix) check_token(a, t);
}

// Cells whose centers lie inside the box spelled by the first four
// conditioning tokens; empty for the locator or a malformed box.
std::vector<uint8_t> conditioning_region(const PolicyNetwork& p,
                                         const DecodingState& s) {
  const int g = p.arch().grid;
  std::vector<uint8_t> region(static_cast<size_t>(g) * g, 0);
  if (s.role != Role::kDescriber || s.conditioning.size() < 4) return region;
  const Vocabulary& v = p.vocab();
  double c[4];
  for (int i = 0; i < 4; ++i) {
    if (!v.is_coord(s.conditioning[i])) return region;
    c[i] = static_cast<double>(v.coord_value(s.conditioning[i])) /
           v.coord_range();
  }
  for (int r = 0; r < g; ++r) {
    const double cy = (r + 0.5) / g;
    if (cy < c[1] || cy >= c[3]) continue;
    for (int col = 0; col < g; ++col) {
      const double cx = (col + 0.5) / g;
      if (cx >= c[0] && cx < c[2]) region[r * g + col] = 1;
    }
  }
  return region;
}

struct EncoderInputs {
  ad::Csr cells;
  ad::Csr cond;
  std::vector<int> cell_owner;
};

EncoderInputs encoder_inputs(const PolicyNetwork& p,
                             std::span<const DecodingState> states) {
  const Architecture& a = p.arch();
  const int v = a.vocab_size, g = a.grid, cells = g * g, f = a.channels;
  const int slot0 = 2, bag0 = 2 + a.t_max * v, roi0 = bag0 + v;
  EncoderInputs in{ad::Csr(f + 1), ad::Csr(a.cond_dim()), {}};
  in.cell_owner.reserve(states.size() * cells);
  for (size_t b = 0; b < states.size(); ++b) {
    const DecodingState& s = states[b];
    check_state(a, s);
    const auto region = conditioning_region(p, s);
    const auto& x = s.features.data();

    in.cond.push(static_cast<int>(s.role), 1.0);
    const int nc = std::min<int>(static_cast<int>(s.conditioning.size()),
                                 a.t_max);
    for (int i = 0; i < nc; ++i) {
      in.cond.push(slot0 + i * v + s.conditioning[i], 1.0);
      in.cond.push(bag0 + s.conditioning[i], 1.0);
    }
    int region_cells = 0;
    std::vector<double> roi(f, 0.0);
    for (int c = 0; c < cells; ++c) {
      if (!region[c]) continue;
      ++region_cells;
      for (int ch = 0; ch < f; ++ch) roi[ch] += x[static_cast<size_t>(c) * f + ch];
    }
    for (int ch = 0; ch < f; ++ch) {
      if (roi[ch] != 0.0) in.cond.push(roi0 + ch, roi[ch] / region_cells);
    }
    in.cond.end_row();

    for (int c = 0; c < cells; ++c) {
      for (int ch = 0; ch < f; ++ch) {
        if (x[static_cast<size_t>(c) * f + ch]) in.cells.push(ch, 1.0);
      }
      if (region[c]) in.cells.push(f, 1.0);
      in.cells.end_row();
      in.cell_owner.push_back(static_cast<int>(b));
    }
  }
  return in;
}

ad::Var encode(ad::Tape& t, const PolicyNetwork& p, const EncoderInputs& in) {
  const Architecture& a = p.arch();
  const ParamLayout& L = p.layout();
  const int f1 = a.channels + 1, k1 = a.cell_hidden, c2 = a.cell_out;
  const int q = a.cond_dim(), h = a.hidden, pd = a.pooled_dim();

  ad::Var cell_w = t.param(L.cell_w, f1, k1);
  ad::Var cell_b = t.param(L.cell_b, 1, k1);
  ad::Var cell_cond = t.param(L.cell_cond, q, k1);
  ad::Var z1 = t.add(t.add_row(t.embed(in.cells, cell_w), cell_b),
                     t.gather_rows(t.embed(in.cond, cell_cond), in.cell_owner));
  z1 = t.relu(z1);
  ad::Var z2 = t.relu(t.linear(z1, t.param(L.cell2_w, c2, k1),
                               t.param(L.cell2_b, 1, c2)));
  ad::Var pooled = t.grid_pool(z2, a.grid);
  ad::Var e = t.linear(pooled, t.param(L.pool_w, h, pd), t.param(L.pool_b, 1, h));
  return t.add(e, t.embed(in.cond, t.param(L.head_cond, q, h)));
}

// Logits for rows[i] of the encoder output after prefixes[i].
ad::Var head(ad::Tape& t, const PolicyNetwork& p, ad::Var enc,
             std::vector<int> rows, const std::vector<const std::vector<int>*>& prefixes,
             const std::vector<Role>& roles) {
  const Architecture& a = p.arch();
  const ParamLayout& L = p.layout();
  const int v = a.vocab_size, h = a.hidden;
  ad::Csr step(a.step_dim());
  for (const auto* pre : prefixes) {
    for (int tok : *pre) step.push(tok, 1.0);
    if (!pre->empty()) step.push(v + pre->back(), 1.0);
    step.push(2 * v + static_cast<int>(pre->size()), 1.0);
    step.end_row();
  }
  ad::Var h1 = t.relu(t.add(t.gather_rows(enc, std::move(rows)),
                            t.embed(step, t.param(L.step_w, a.step_dim(), h))));
  ad::Var h2 = t.relu(
      t.linear(h1, t.param(L.h2_w, h, h), t.param(L.h2_b, 1, h)));
  ad::Var logits =
      t.linear(h2, t.param(L.out_w, v, h), t.param(L.out_b, 1, v));
  if (!a.restrict_outputs) return logits;

  const Vocabulary& voc = p.vocab();
  std::vector<double> mask(roles.size() * static_cast<size_t>(v), kMaskedLogit);
  for (size_t r = 0; r < roles.size(); ++r) {
    double* m = mask.data() + r * v;
    m[Vocabulary::kEos] = 0.0;
    const int lo = roles[r] == Role::kDescriber ? voc.first_word()
                                                : voc.first_coord();
    const int hi = roles[r] == Role::kDescriber ? voc.first_coord() : v;
    for (int j = lo; j < hi; ++j) m[j] = 0.0;
  }
  return t.add_const(logits, std::move(mask));
}

enum class Pick { kSample, kGreedy };

std::vector<CaptionSequence> decode(const PolicyNetwork& p,
                                    std::span<const DecodingState> s0,
                                    std::span<const uint64_t> seeds, Pick mode) {
  const Architecture& a = p.arch();
  const int v = a.vocab_size;
  const size_t n = s0.size();
  std::vector<CaptionSequence> out(n);
  if (n == 0) return out;

  ad::Tape t(p.params(), /*requires_grad=*/false);
  const ad::Var enc = encode(t, p, encoder_inputs(p, s0));
  std::vector<std::vector<int>> prefix(n);
  std::vector<Rng> rngs;
  rngs.reserve(mode == Pick::kSample ? n : 0);
  for (size_t i = 0; i < n; ++i) {
    prefix[i] = s0[i].prefix;
    if (mode == Pick::kSample) rngs.emplace_back(seeds[i]);
  }
  std::vector<uint8_t> done(n, 0);
  std::vector<double> probs(v);
  while (true) {
    std::vector<int> rows;
    std::vector<const std::vector<int>*> pre;
    std::vector<Role> roles;
    for (size_t i = 0; i < n; ++i) {
      if (done[i]) continue;
      rows.push_back(static_cast<int>(i));
      pre.push_back(&prefix[i]);
      roles.push_back(s0[i].role);
    }
    if (rows.empty()) break;
    const ad::Var logits = head(t, p, enc, rows, pre, roles);
    const ad::Var lp = t.log_softmax(logits);
    const auto lg = t.value(logits);
    const auto lpv = t.value(lp);
    for (size_t r = 0; r < rows.size(); ++r) {
      const size_t i = rows[r];
      const double* lrow = lpv.data() + r * v;
      int tok = 0;
      if (mode == Pick::kGreedy) {
        const double* grow = lg.data() + r * v;
        tok = static_cast<int>(std::max_element(grow, grow + v) - grow);
      } else {
        for (int j = 0; j < v; ++j) probs[j] = std::exp(lrow[j]);
        tok = static_cast<int>(rngs[i].categorical(probs));
      }
      out[i].tokens.push_back(tok);
      out[i].logp_live.push_back(lrow[tok]);
      prefix[i].push_back(tok);
      if (tok == Vocabulary::kEos ||
          static_cast<int>(prefix[i].size()) >= a.t_max) {
        done[i] = 1;
      }
    }
  }
  return out;
}

json arch_to_json(const Architecture& a) {
  return {{"grid", a.grid},           {"channels", a.channels},
          {"vocab_size", a.vocab_size}, {"t_max", a.t_max},
          {"cell_hidden", a.cell_hidden}, {"cell_out", a.cell_out},
          {"hidden", a.hidden},       {"restrict_outputs", a.restrict_outputs}};
}

Architecture arch_from_json(const json& j) {
  Architecture a;
  a.grid = j.at("grid").get<int>();
  a.channels = j.at("channels").get<int>();
  a.vocab_size = j.at("vocab_size").get<int>();
  a.t_max = j.at("t_max").get<int>();
  a.cell_hidden = j.at("cell_hidden").get<int>();
  a.cell_out = j.at("cell_out").get<int>();
  a.hidden = j.at("hidden").get<int>();
  a.restrict_outputs = j.at("restrict_outputs").get<bool>();
  return a;
}

}  // namespace

const char* role_name(Role r) {
  return r == Role::kDescriber ? "describer" : "locator";
}

Architecture Architecture::for_scene(const SceneConfig& cfg,
                                     const Vocabulary& v) {
  Architecture a;
  a.grid = cfg.grid;
  a.channels = cfg.channels();
  a.vocab_size = v.size();
  return a;
}

void Architecture::validate() const {
  if (grid < 1 || channels < 1 || vocab_size < 3 || t_max < 1 ||
      cell_hidden < 1 || cell_out < 1 || hidden < 1) {
    throw std::invalid_argument("architecture sizes must be positive");
  }
}

ParamLayout ParamLayout::of(const Architecture& a) {
  a.validate();
  ParamLayout L{};
  size_t off = 0;
  auto take = [&](size_t n) {
    const size_t at = off;
    off += n;
    return at;
  };
  const size_t q = a.cond_dim(), k1 = a.cell_hidden, c2 = a.cell_out,
               h = a.hidden, v = a.vocab_size;
  L.cell_w = take((a.channels + 1) * k1);
  L.cell_b = take(k1);
  L.cell_cond = take(q * k1);
  L.cell2_w = take(c2 * k1);
  L.cell2_b = take(c2);
  L.pool_w = take(h * a.pooled_dim());
  L.pool_b = take(h);
  L.head_cond = take(q * h);
  L.step_w = take(a.step_dim() * h);
  L.h2_w = take(h * h);
  L.h2_b = take(h);
  L.out_w = take(v * h);
  L.out_b = take(v);
  L.total = off;
  return L;
}

PolicyNetwork::PolicyNetwork(Architecture arch, Vocabulary vocab)
    : arch_(arch), vocab_(std::move(vocab)), layout_(ParamLayout::of(arch)) {
  if (arch_.vocab_size != vocab_.size()) {
    throw std::invalid_argument("architecture vocab_size " +
                                std::to_string(arch_.vocab_size) +
                                " does not match vocabulary size " +
                                std::to_string(vocab_.size()));
  }
  params_.assign(layout_.total, 0.0);
}

void PolicyNetwork::init_random(uint64_t seed) {
  const Architecture& a = arch_;
  const ParamLayout& L = layout_;
  // Blocks in memory order with the fan-in of the layer they belong to.
  const struct {
    size_t begin, end;
    int fan_in;
  } blocks[] = {{L.cell_w, L.cell_cond, a.channels + 1},
                {L.cell_cond, L.cell2_w, a.cond_dim()},
                {L.cell2_w, L.pool_w, a.cell_hidden},
                {L.pool_w, L.head_cond, a.pooled_dim()},
                {L.head_cond, L.step_w, a.cond_dim()},
                {L.step_w, L.h2_w, a.step_dim()},
                {L.h2_w, L.total, a.hidden}};
  Rng rng(seed);
  for (const auto& b : blocks) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
    for (size_t i = b.begin; i < b.end; ++i) {
      params_[i] = (2.0 * rng.uniform() - 1.0) * bound;
    }
  }
}

DecodingState describer_state(const SceneFeatures& f, const BBox& target,
                              const Vocabulary& v) {
  return {Role::kDescriber, f, box_tokens(target, v), {}};
}

DecodingState locator_state(const SceneFeatures& f,
                            std::span<const int> caption) {
  return {Role::kLocator, f, {caption.begin(), caption.end()}, {}};
}

std::vector<double> forward_logits(const PolicyNetwork& p,
                                   const DecodingState& s) {
  ad::Tape t(p.params(), false);
  const ad::Var enc = encode(t, p, encoder_inputs(p, {&s, 1}));
  const ad::Var lg = head(t, p, enc, {0}, {&s.prefix}, {s.role});
  const auto v = t.value(lg);
  return {v.begin(), v.end()};
}

CaptionSequence sample_sequence(const PolicyNetwork& p,
                                const DecodingState& s0, uint64_t seed) {
  return std::move(decode(p, {&s0, 1}, {&seed, 1}, Pick::kSample)[0]);
}

std::vector<CaptionSequence> sample_batch(const PolicyNetwork& p,
                                          std::span<const DecodingState> s0,
                                          std::span<const uint64_t> seeds) {
  if (seeds.size() != s0.size()) {
    throw std::invalid_argument("sample_batch needs one seed per state");
  }
  return decode(p, s0, seeds, Pick::kSample);
}

CaptionSequence greedy_decode(const PolicyNetwork& p, const DecodingState& s0) {
  return std::move(decode(p, {&s0, 1}, {}, Pick::kGreedy)[0]);
}

std::vector<CaptionSequence> greedy_batch(const PolicyNetwork& p,
                                          std::span<const DecodingState> s0) {
  return decode(p, s0, {}, Pick::kGreedy);
}

ad::Var sequence_logprobs(ad::Tape& t, const PolicyNetwork& p,
                          std::span<const DecodingState> s0,
                          std::span<const std::vector<int>> tokens) {
  const Architecture& a = p.arch();
  if (tokens.size() != s0.size()) {
    throw std::invalid_argument("one token sequence per state required");
  }
  std::vector<std::vector<int>> prefixes;
  std::vector<int> rows, targets;
  std::vector<Role> roles;
  for (size_t i = 0; i < s0.size(); ++i) {
    if (s0[i].prefix.size() + tokens[i].size() > static_cast<size_t>(a.t_max)) {
      throw std::invalid_argument("token sequence longer than t_max");
    }
    std::vector<int> pre = s0[i].prefix;
    for (int tok : tokens[i]) {
      check_token(a, tok);
      prefixes.push_back(pre);
      rows.push_back(static_cast<int>(i));
      targets.push_back(tok);
      roles.push_back(s0[i].role);
      pre.push_back(tok);
    }
  }
  if (rows.empty()) throw std::invalid_argument("no tokens to score");
  std::vector<const std::vector<int>*> pre_ptrs;
  pre_ptrs.reserve(prefixes.size());
  for (const auto& pr : prefixes) pre_ptrs.push_back(&pr);
  const ad::Var enc = encode(t, p, encoder_inputs(p, s0));
  const ad::Var lp = t.log_softmax(head(t, p, enc, std::move(rows), pre_ptrs, roles));
  return t.pick(lp, std::move(targets));
}

std::vector<std::vector<double>> logprobs_batch(
    const PolicyNetwork& p, std::span<const DecodingState> s0,
    std::span<const std::vector<int>> tokens) {
  std::vector<std::vector<double>> out(s0.size());
  std::vector<DecodingState> kept_states;
  std::vector<std::vector<int>> kept_tokens;
  std::vector<size_t> kept_index;
  for (size_t i = 0; i < s0.size(); ++i) {
    if (i < tokens.size() && tokens[i].empty()) continue;
    kept_index.push_back(i);
  }
  if (tokens.size() != s0.size()) {
    throw std::invalid_argument("one token sequence per state required");
  }
  if (kept_index.empty()) return out;
  if (kept_index.size() != s0.size()) {
    for (size_t i : kept_index) {
      kept_states.push_back(s0[i]);
      kept_tokens.push_back(tokens[i]);
    }
    s0 = kept_states;
    tokens = kept_tokens;
  }
  ad::Tape t(p.params(), false);
  const auto lp = t.value(sequence_logprobs(t, p, s0, tokens));
  size_t k = 0;
  for (size_t j = 0; j < kept_index.size(); ++j) {
    auto& o = out[kept_index[j]];
    o.assign(lp.begin() + k, lp.begin() + k + tokens[j].size());
    k += tokens[j].size();
  }
  return out;
}

std::vector<double> logprobs_of(const PolicyNetwork& p, const DecodingState& s0,
                                std::span<const int> tokens) {
  std::vector<std::vector<int>> one{{tokens.begin(), tokens.end()}};
  return std::move(logprobs_batch(p, {&s0, 1}, one)[0]);
}

LossAndGrad backward(const PolicyNetwork& p,
                     const std::function<ad::Var(ad::Tape&)>& loss) {
  ad::Tape t(p.params(), true);
  const ad::Var l = loss(t);
  LossAndGrad out;
  out.loss = t.scalar(l);
  out.grad.assign(p.num_params(), 0.0);
  t.backward(l, out.grad);
  return out;
}

void sync_into(const PolicyNetwork& src, PolicyNetwork& dst) {
  if (!src.same_shape(dst)) {
    throw std::invalid_argument("sync_into: architecture or vocabulary mismatch");
  }
  std::copy(src.params().begin(), src.params().end(), dst.params().begin());
}

const Checkpoint::Network* Checkpoint::find(const std::string& name) const {
  for (const auto& n : networks) {
    if (n.name == name) return &n;
  }
  return nullptr;
}

PolicyNetwork Checkpoint::network(const std::string& name) const {
  const Network* n = find(name);
  if (!n) throw DataError("checkpoint has no network named '" + name + "'");
  PolicyNetwork p(arch, vocab);
  if (n->params.size() != p.num_params()) {
    throw DataError("checkpoint network '" + name + "' has " +
                    std::to_string(n->params.size()) +
                    " parameters; architecture needs " +
                    std::to_string(p.num_params()));
  }
  std::copy(n->params.begin(), n->params.end(), p.params().begin());
  return p;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json nets = json::array();
  for (const auto& n : c.networks) {
    nets.push_back({{"name", n.name}, {"num_params", n.params.size()}});
  }
  const json header = {
      {"format", "sctune-checkpoint"},
      {"kind", c.kind},
      {"architecture", arch_to_json(c.arch)},
      {"vocabulary",
       {{"num_categories", c.vocab.num_categories()},
        {"num_colors", c.vocab.num_colors()},
        {"num_sizes", c.vocab.num_sizes()},
        {"coord_range", c.vocab.coord_range()},
        {"words", c.vocab.words()}}},
      {"networks", std::move(nets)}};
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  const uint32_t version = kCheckpointVersion;
  const uint64_t hlen = h.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& n : c.networks) {
    out.write(reinterpret_cast<const char*>(n.params.data()),
              static_cast<std::streamsize>(n.params.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[sizeof kMagic];
  uint32_t version = 0;
  uint64_t hlen = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw DataError(path + ": not an sctune checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(version));
  }
  if (hlen > (uint64_t{1} << 26)) throw DataError(path + ": corrupt header");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError(path + ": truncated header");
  Checkpoint c;
  try {
    const json j = json::parse(h);
    c.kind = j.at("kind").get<std::string>();
    if (c.kind != "network" && c.kind != "oracle") {
      throw DataError("unknown checkpoint kind '" + c.kind + "'");
    }
    c.arch = arch_from_json(j.at("architecture"));
    const json& v = j.at("vocabulary");
    c.vocab = Vocabulary(v.at("num_categories").get<int>(),
                         v.at("num_colors").get<int>(),
                         v.at("num_sizes").get<int>(),
                         v.at("coord_range").get<int>());
    if (v.at("words").get<std::vector<std::string>>() != c.vocab.words()) {
      throw DataError("vocabulary words do not match the vocabulary layout");
    }
    for (const auto& n : j.at("networks")) {
      c.networks.push_back({n.at("name").get<std::string>(),
                            std::vector<double>(n.at("num_params").get<size_t>())});
    }
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  } catch (const std::exception& e) {
    throw DataError(path + ": bad checkpoint header: " + e.what());
  }
  for (auto& n : c.networks) {
    in.read(reinterpret_cast<char*>(n.params.data()),
            static_cast<std::streamsize>(n.params.size() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated parameters");
  }
  if (c.kind == "network") {
    const size_t want = ParamLayout::of(c.arch).total;
    for (const auto& n : c.networks) {
      if (n.params.size() != want) {
        throw DataError(path + ": network '" + n.name + "' has " +
                        std::to_string(n.params.size()) +
                        " parameters; architecture needs " +
                        std::to_string(want));
      }
    }
  }
  return c;
}

}  // namespace sctune
