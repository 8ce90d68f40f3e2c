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

#include "sctune/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "sctune/errors.hpp"

namespace sctune {

using nlohmann::json;

namespace {

// Object named by a word caption: category, color and size words filter
// the scene; a spatial word then picks the extreme candidate.
std::optional<int> resolve_caption(const Scene& s, std::span<const int> caption,
                                   const Vocabulary& v) {
  std::vector<int> cand(s.objects.size());
  for (size_t i = 0; i < cand.size(); ++i) cand[i] = static_cast<int>(i);
  std::optional<Spatial> where;
  auto keep = [&](auto pred) {
    std::erase_if(cand, [&](int k) { return !pred(s.objects[k]); });
  };
  for (int t : caption) {
    if (t == Vocabulary::kEos) break;
    if (!v.is_word(t)) continue;
    const int w = t - v.first_word();
    if (w < v.num_categories()) {
      keep([&](const SceneObject& o) { return v.category(o.category) == t; });
    } else if (w < v.num_categories() + v.num_colors()) {
      keep([&](const SceneObject& o) { return v.color(o.color) == t; });
    } else if (w < v.num_categories() + v.num_colors() + v.num_sizes()) {
      keep([&](const SceneObject& o) { return v.size_word(o.size_class) == t; });
    } else {
      where = static_cast<Spatial>(t - v.spatial(Spatial::kLeft));
    }
  }
  if (cand.empty()) return std::nullopt;
  if (!where) return cand.front();
  auto key = [&](int k) {
    const BBox& b = s.objects[k].bbox;
    const double cx = b.x_min + b.x_max, cy = b.y_min + b.y_max;
    switch (*where) {
      case Spatial::kLeft: return cx;
      case Spatial::kRight: return -cx;
      case Spatial::kTop: return cy;
      case Spatial::kBottom: return -cy;
    }
    return 0.0;
  };
  return *std::min_element(cand.begin(), cand.end(),
                           [&](int a, int b) { return key(a) < key(b); });
}

// Units per decoding batch; bounds tape memory.
constexpr size_t kChunk = 256;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

json source_to_json(const SourceSummary& s) {
  json j;
  j["n"] = s.n;
  j["pr_at_05"] = s.pr_at_05 ? json(round_pct(*s.pr_at_05)) : json(nullptr);
  j["mean_iou"] = round_iou(s.mean_iou);
  j["parse_failure_rate"] = round_iou(s.parse_failure_rate);
  return j;
}

SourceSummary source_from_json(const json& j) {
  SourceSummary s;
  s.n = j.at("n").get<size_t>();
  if (!j.at("pr_at_05").is_null()) s.pr_at_05 = j.at("pr_at_05").get<double>();
  s.mean_iou = j.at("mean_iou").get<double>();
  s.parse_failure_rate = j.at("parse_failure_rate").get<double>();
  return s;
}

SourceSummary summarize_one(std::span<const EvalRecord* const> recs) {
  SourceSummary s;
  s.n = recs.size();
  if (s.n == 0) return s;
  size_t hits = 0, failures = 0;
  double total = 0.0;
  for (const auto* r : recs) {
    hits += r->hit ? 1 : 0;
    failures += r->predicted_box ? 0 : 1;
    total += r->iou;
  }
  s.pr_at_05 = 100.0 * static_cast<double>(hits) / static_cast<double>(s.n);
  s.mean_iou = total / static_cast<double>(s.n);
  s.parse_failure_rate = static_cast<double>(failures) / static_cast<double>(s.n);
  return s;
}

std::string unit_id(const Unit& u) {
  return "scene-" + std::to_string(u.scene.scene_id);
}

std::vector<SceneFeatures> features_of(std::span<const Unit> units,
                                       const SceneConfig& cfg) {
  std::vector<SceneFeatures> f;
  f.reserve(units.size());
  for (const auto& u : units) f.push_back(encode_scene(u.scene, cfg));
  return f;
}

}  // namespace

double round_pct(double v) { return std::round(v * 10.0) / 10.0; }
double round_iou(double v) { return std::round(v * 1e4) / 1e4; }

EvalRecord make_record(std::string unit_id, const BBox& input,
                       std::string caption, std::optional<BBox> predicted,
                       std::string source) {
  EvalRecord r;
  r.unit_id = std::move(unit_id);
  r.input_box = input;
  r.caption = std::move(caption);
  r.predicted_box = predicted;
  r.iou = predicted ? iou(input, *predicted) : 0.0;
  r.hit = r.iou > kHitThreshold;
  r.source = std::move(source);
  return r;
}

EvalSummary summarize(std::span<const EvalRecord> records) {
  std::vector<const EvalRecord*> all;
  std::map<std::string, std::vector<const EvalRecord*>> by_source;
  for (const auto& r : records) {
    all.push_back(&r);
    by_source[r.source].push_back(&r);
  }
  EvalSummary s;
  static_cast<SourceSummary&>(s) = summarize_one(all);
  for (const auto& [src, recs] : by_source) {
    s.per_source[src] = summarize_one(recs);
  }
  return s;
}

DescribeFn network_describer(const PolicyNetwork& p, const SceneConfig& cfg) {
  return [&p, cfg](std::span<const Unit> units) {
    std::vector<DecodingState> states;
    states.reserve(units.size());
    for (const auto& u : units) {
      states.push_back(describer_state(encode_scene(u.scene, cfg),
                                       u.triplet.target, p.vocab()));
    }
    std::vector<std::vector<int>> out;
    for (auto& s : greedy_batch(p, states)) out.push_back(std::move(s.tokens));
    return out;
  };
}

LocateFn network_locator(const PolicyNetwork& p, const SceneConfig& cfg) {
  return [&p, cfg](std::span<const Unit> units,
                   std::span<const std::vector<int>> captions) {
    std::vector<DecodingState> states;
    states.reserve(units.size());
    const auto feats = features_of(units, cfg);
    for (size_t i = 0; i < units.size(); ++i) {
      std::span<const int> cap = captions[i];
      if (static_cast<int>(cap.size()) > p.arch().t_max) {
        cap = cap.first(p.arch().t_max);
      }
      states.push_back(locator_state(feats[i], cap));
    }
    std::vector<std::vector<int>> out;
    for (auto& s : greedy_batch(p, states)) out.push_back(std::move(s.tokens));
    return out;
  };
}

DescribeFn oracle_describer(const Vocabulary& v) {
  return [v](std::span<const Unit> units) {
    std::vector<std::vector<int>> out;
    for (const auto& u : units) {
      auto toks = box_tokens(u.triplet.target, v);
      toks.push_back(Vocabulary::kEos);
      out.push_back(std::move(toks));
    }
    return out;
  };
}

LocateFn oracle_locator(const Vocabulary& v) {
  return [v](std::span<const Unit> units,
             std::span<const std::vector<int>> captions) {
    std::vector<std::vector<int>> out;
    for (size_t i = 0; i < captions.size(); ++i) {
      std::vector<int> toks;
      for (int t : captions[i]) {
        if (t == Vocabulary::kEos) break;
        if (v.is_coord(t)) toks.push_back(t);
      }
      if (toks.empty() && i < units.size()) {
        if (const auto k = resolve_caption(units[i].scene, captions[i], v)) {
          toks = box_tokens(units[i].scene.objects[*k].bbox, v);
        }
      }
      toks.push_back(Vocabulary::kEos);
      out.push_back(std::move(toks));
    }
    return out;
  };
}

EvalResult self_consistency_eval(const DescribeFn& describe,
                                 const LocateFn& locate,
                                 std::span<const Unit> units,
                                 const Vocabulary& v, const CoordFormat& fmt) {
  EvalResult res;
  res.records.resize(units.size());
  for (size_t lo = 0; lo < units.size(); lo += kChunk) {
    const auto chunk = units.subspan(lo, std::min(kChunk, units.size() - lo));
    const auto captions = describe(chunk);
    const auto located = locate(chunk, captions);
    for (size_t i = 0; i < chunk.size(); ++i) {
      const Unit& u = chunk[i];
      res.records[lo + i] = make_record(
          unit_id(u), u.triplet.target, v.detokenize(captions[i]),
          parse_locator_output(located[i], v, fmt));
    }
  }
  res.summary = summarize(res.records);
  return res;
}

std::vector<LabeledItem> labeled_items(std::span<const Unit> units,
                                       const Vocabulary& v) {
  std::vector<LabeledItem> out;
  out.reserve(units.size());
  for (const auto& u : units) {
    out.push_back({u, reference_caption(u.scene, u.target_index, v)});
  }
  return out;
}

EvalResult rec_accuracy(const LocateFn& locate,
                        std::span<const LabeledItem> labeled,
                        const Vocabulary& v, const CoordFormat& fmt) {
  EvalResult res;
  res.records.resize(labeled.size());
  for (size_t lo = 0; lo < labeled.size(); lo += kChunk) {
    const size_t n = std::min(kChunk, labeled.size() - lo);
    std::vector<Unit> units;
    std::vector<std::vector<int>> caps;
    for (size_t i = 0; i < n; ++i) {
      units.push_back(labeled[lo + i].unit);
      caps.push_back(labeled[lo + i].caption);
    }
    const auto located = locate(units, caps);
    for (size_t i = 0; i < n; ++i) {
      res.records[lo + i] = make_record(
          unit_id(units[i]), units[i].triplet.target, v.detokenize(caps[i]),
          parse_locator_output(located[i], v, fmt));
    }
  }
  res.summary = summarize(res.records);
  return res;
}

std::string summary_to_json(const EvalSummary& s) {
  json j = source_to_json(s);
  json per = json::object();
  for (const auto& [src, ss] : s.per_source) per[src] = source_to_json(ss);
  j["per_source"] = std::move(per);
  return j.dump(2) + "\n";
}

EvalSummary summary_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalSummary s;
    static_cast<SourceSummary&>(s) = source_from_json(j);
    for (const auto& [src, v] : j.at("per_source").items()) {
      s.per_source[src] = source_from_json(v);
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad summary: ") + e.what());
  }
}

EvalSummary read_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open summary: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return summary_from_json(ss.str());
}

std::string records_to_tsv(std::span<const EvalRecord> records) {
  std::string out =
      "unit_id\tsource\tinput_box\tcaption\tpredicted_box\tiou\thit\terror\n";
  auto box = [](const BBox& b) {
    return fixed(b.x_min, 4) + "," + fixed(b.y_min, 4) + "," +
           fixed(b.x_max, 4) + "," + fixed(b.y_max, 4);
  };
  auto clean = [](std::string s) {
    for (char& c : s) {
      if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    }
    return s;
  };
  for (const auto& r : records) {
    out += clean(r.unit_id) + "\t" + clean(r.source) + "\t" + box(r.input_box) +
           "\t" + clean(r.caption) + "\t" +
           (r.predicted_box ? box(*r.predicted_box) : std::string("-")) + "\t" +
           fixed(r.iou, 4) + "\t" + (r.hit ? "1" : "0") + "\t" +
           (r.error.empty() ? std::string("-") : clean(r.error)) + "\n";
  }
  return out;
}

void write_report(const EvalSummary& s, std::span<const EvalRecord> records,
                  const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  {
    std::ofstream out(base / "summary.json");
    out << summary_to_json(s);
    if (!out) throw std::runtime_error("cannot write " + (base / "summary.json").string());
  }
  std::ofstream out(base / "records.tsv");
  out << records_to_tsv(records);
  if (!out) throw std::runtime_error("cannot write " + (base / "records.tsv").string());
}

}  // namespace sctune
