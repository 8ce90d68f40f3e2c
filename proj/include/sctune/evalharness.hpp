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

// Self-consistency evaluation: describe a box, locate the description, and
// score the round trip. A round trip is a hit when IoU > 0.5 (strict).

#ifndef SCTUNE_EVALHARNESS_HPP_
#define SCTUNE_EVALHARNESS_HPP_

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sctune/geometry.hpp"
#include "sctune/policy.hpp"
#include "sctune/refgame.hpp"
#include "sctune/vocab.hpp"

namespace sctune {

constexpr double kHitThreshold = 0.5;

struct EvalRecord {
  std::string unit_id;
  BBox input_box;
  std::string caption;
  std::optional<BBox> predicted_box;
  double iou = 0.0;
  bool hit = false;
  std::string source = "local";
  // Empty unless the unit failed for a reason other than an unparseable box.
  std::string error;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

// Fills iou and hit from the two boxes; an absent prediction scores 0.
EvalRecord make_record(std::string unit_id, const BBox& input,
                       std::string caption, std::optional<BBox> predicted,
                       std::string source = "local");

struct SourceSummary {
  size_t n = 0;
  // Percentage of hits; absent when n == 0.
  std::optional<double> pr_at_05;
  double mean_iou = 0.0;
  double parse_failure_rate = 0.0;

  friend bool operator==(const SourceSummary&, const SourceSummary&) = default;
};

struct EvalSummary : SourceSummary {
  std::map<std::string, SourceSummary> per_source;

  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

EvalSummary summarize(std::span<const EvalRecord> records);

// Batch interfaces so that network-backed implementations can decode many
// units at once. Captions and locator outputs are token sequences.
using DescribeFn =
    std::function<std::vector<std::vector<int>>(std::span<const Unit>)>;
using LocateFn = std::function<std::vector<std::vector<int>>(
    std::span<const Unit>, std::span<const std::vector<int>>)>;

// Greedy decoding with a policy network in the given role.
DescribeFn network_describer(const PolicyNetwork& p, const SceneConfig& cfg);
LocateFn network_locator(const PolicyNetwork& p, const SceneConfig& cfg);

// Lossless pair: the caption is the target's coordinate tokens and the
// locator copies coordinate tokens back out of the caption. Given a word
// caption instead, the oracle locator resolves it against the scene and
// answers with the first matching object's box.
DescribeFn oracle_describer(const Vocabulary& v);
LocateFn oracle_locator(const Vocabulary& v);

struct EvalResult {
  EvalSummary summary;
  std::vector<EvalRecord> records;
};

// fmt.range() must equal v.coord_range().
EvalResult self_consistency_eval(const DescribeFn& describe,
                                 const LocateFn& locate,
                                 std::span<const Unit> units,
                                 const Vocabulary& v, const CoordFormat& fmt);

struct LabeledItem {
  Unit unit;
  std::vector<int> caption;
};

// Reference captions for each unit's target.
std::vector<LabeledItem> labeled_items(std::span<const Unit> units,
                                       const Vocabulary& v);

// Locator accuracy on gold captions; the gold box is the unit's target.
EvalResult rec_accuracy(const LocateFn& locate,
                        std::span<const LabeledItem> labeled,
                        const Vocabulary& v, const CoordFormat& fmt);

// Writes <dir>/summary.json and <dir>/records.tsv. Percentages are written
// with 1 decimal and IoUs with 4.
void write_report(const EvalSummary& s, std::span<const EvalRecord> records,
                  const std::string& dir);
std::string summary_to_json(const EvalSummary& s);
EvalSummary summary_from_json(const std::string& text);
EvalSummary read_summary(const std::string& path);
std::string records_to_tsv(std::span<const EvalRecord> records);

// Rounds to the written precision.
double round_pct(double v);
double round_iou(double v);

}  // namespace sctune

#endif  // SCTUNE_EVALHARNESS_HPP_
