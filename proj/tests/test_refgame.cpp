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

#include <map>
#include <set>

#include "sctune/errors.hpp"
#include "sctune/kernels.hpp"
#include "sctune/refgame.hpp"
#include "sctune/vocab.hpp"
#include "test_util.hpp"

namespace sctune {
namespace {

TEST(GenerateScene, Deterministic) {
  const SceneConfig cfg;
  EXPECT_EQ(generate_scene(7, cfg), generate_scene(7, cfg));
  EXPECT_NE(generate_scene(7, cfg), generate_scene(8, cfg));
}

TEST(GenerateScene, InvariantsOverManyScenes) {
  const SceneConfig cfg;
  size_t pairs = 0;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const Scene s = generate_scene(seed, cfg, static_cast<int64_t>(seed));
    ASSERT_GE(s.objects.size(), 2u);
    ASSERT_LE(s.objects.size(), static_cast<size_t>(cfg.max_objects));
    std::map<int, int> counts;
    for (const auto& o : s.objects) {
      ++counts[o.category];
      EXPECT_TRUE(o.bbox.valid());
      EXPECT_GE(o.bbox.area(), 0.0004);
    }
    bool repeated = false;
    for (const auto& [cat, n] : counts) repeated |= n >= 2;
    EXPECT_TRUE(repeated);
    for (size_t i = 0; i < s.objects.size(); ++i) {
      for (size_t j = i + 1; j < s.objects.size(); ++j) {
        ++pairs;
        EXPECT_LE(iou(s.objects[i].bbox, s.objects[j].bbox), 0.5);
      }
    }
    EXPECT_TRUE(scene_invariants_hold(s));
  }
  EXPECT_GT(pairs, 1000u);
}

TEST(GenerateScene, InfeasibleConfigFails) {
  SceneConfig cfg;
  cfg.grid = 2;
  cfg.min_objects = 5;
  cfg.max_objects = 6;
  cfg.max_attempts = 5;
  EXPECT_THROW(generate_scene(1, cfg), std::runtime_error);
}

TEST(SceneConfig, ValidateRejectsBadValues) {
  SceneConfig cfg;
  cfg.grid = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SceneConfig{};
  cfg.min_objects = 4;
  cfg.max_objects = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(EncodeScene, QuarterBoxMarksFourByFourCells) {
  const SceneConfig cfg;
  Scene s;
  s.objects.push_back({2, 1, 0, BBox{0, 0, 0.5, 0.5}});
  const SceneFeatures f = encode_scene(s, cfg);
  ASSERT_EQ(f.grid(), 8);
  ASSERT_EQ(f.channels(), cfg.channels());
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      const bool inside = r < 4 && c < 4;
      EXPECT_EQ(f.at(r, c, 2), inside ? 1 : 0) << r << "," << c;
      EXPECT_EQ(f.at(r, c, cfg.num_categories + 1), inside ? 1 : 0);
      EXPECT_EQ(f.at(r, c, cfg.num_categories + cfg.num_colors + 0), inside ? 1 : 0);
      EXPECT_EQ(f.at(r, c, 0), 0);
    }
  }
}

TEST(EncodeScene, FullSceneObjectAndEmptyRegion) {
  const SceneConfig cfg;
  Scene full;
  full.objects.push_back({5, 0, 2, BBox{0, 0, 1, 1}});
  const SceneFeatures f = encode_scene(full, cfg);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) EXPECT_EQ(f.at(r, c, 5), 1);
  }
  Scene corner;
  corner.objects.push_back({1, 0, 0, BBox{0.75, 0.75, 1, 1}});
  const SceneFeatures g = encode_scene(corner, cfg);
  for (int ch = 0; ch < cfg.channels(); ++ch) EXPECT_EQ(g.at(0, 0, ch), 0);
}

TEST(EncodeScene, CategoryOneHotPerCell) {
  const SceneConfig cfg;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const SceneFeatures f = encode_scene(generate_scene(seed, cfg), cfg);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        int sum = 0;
        for (int k = 0; k < cfg.num_categories; ++k) sum += f.at(r, c, k);
        EXPECT_LE(sum, 1);
      }
    }
  }
}

TEST(MakeDataset, DeterministicAndSplit) {
  const SceneConfig cfg;
  const Dataset a = make_dataset(3, 100, cfg, 20);
  const Dataset b = make_dataset(3, 100, cfg, 20);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.heldout, b.heldout);
  std::set<int64_t> train_ids;
  for (const auto& u : a.train) train_ids.insert(u.scene.scene_id);
  for (const auto& u : a.heldout) EXPECT_FALSE(train_ids.count(u.scene.scene_id));
  EXPECT_EQ(train_ids.size(), 100u);
}

TEST(MakeDataset, TargetsAreAmbiguousAndUnique) {
  const SceneConfig cfg;
  const Dataset d = make_dataset(4, 300, cfg);
  for (const auto& u : d.train) {
    const auto& objs = u.scene.objects;
    int same_cat = 0, same_box = 0;
    for (const auto& o : objs) {
      same_cat += o.category == u.triplet.category;
      same_box += o.bbox == u.triplet.target;
    }
    EXPECT_GE(same_cat, 2);
    EXPECT_EQ(same_box, 1);
    EXPECT_EQ(objs.at(u.target_index).bbox, u.triplet.target);
    EXPECT_EQ(u.triplet.scene_id, u.scene.scene_id);
  }
}

TEST(MakeDataset, MatchesMakeUnitAndThreadCount) {
  const SceneConfig cfg;
  const int saved = kernels::max_threads();
  kernels::set_num_threads(1);
  const Dataset one = make_dataset(9, 60, cfg, 10);
  kernels::set_num_threads(3);
  const Dataset three = make_dataset(9, 60, cfg, 10);
  kernels::set_num_threads(saved);
  EXPECT_EQ(one.train, three.train);
  EXPECT_EQ(one.heldout, three.heldout);
  EXPECT_EQ(one.train[17], make_unit(9, 17, cfg));
  EXPECT_EQ(one.heldout[3], make_unit(9, 63, cfg));
}

TEST(Dataset, SaveLoadRoundTrip) {
  testing::TempDir dir;
  const Dataset d = make_dataset(5, 30, SceneConfig{}, 7);
  save_dataset(d, dir.file("d.jsonl"));
  const Dataset e = load_dataset(dir.file("d.jsonl"));
  EXPECT_EQ(d.config, e.config);
  EXPECT_EQ(d.seed, e.seed);
  EXPECT_EQ(d.train, e.train);
  EXPECT_EQ(d.heldout, e.heldout);
}

TEST(Dataset, LoadRejectsGarbage) {
  testing::TempDir dir;
  EXPECT_THROW(load_dataset(dir.file("missing.jsonl")), DataError);
  testing::write_file(dir.file("bad.jsonl"), "{\"format\":\"something-else\"}\n");
  EXPECT_THROW(load_dataset(dir.file("bad.jsonl")), DataError);
  testing::write_file(dir.file("trunc.jsonl"), "not json\n");
  EXPECT_THROW(load_dataset(dir.file("trunc.jsonl")), DataError);
}

// --- vocabulary and captions ---

TEST(Vocabulary, DefaultLayout) {
  const Vocabulary v = Vocabulary::for_scene(SceneConfig{});
  EXPECT_EQ(v.coord_range(), 32);
  EXPECT_EQ(v.size(), 3 + 8 + 6 + 3 + 4 + 33);
  EXPECT_TRUE(v.is_word(v.category(0)));
  EXPECT_TRUE(v.is_word(v.spatial(Spatial::kBottom)));
  EXPECT_TRUE(v.is_coord(v.coord(0)));
  EXPECT_TRUE(v.is_coord(v.coord(32)));
  EXPECT_FALSE(v.is_word(Vocabulary::kEos));
  EXPECT_EQ(v.coord_value(v.coord(17)), 17);
}

TEST(Vocabulary, TokenizeInvertsDetokenize) {
  const Vocabulary v;
  const std::vector<int> toks{v.color(2), v.category(5), v.spatial(Spatial::kLeft)};
  const std::string text = v.detokenize(toks);
  EXPECT_EQ(v.tokenize(text), toks);
  EXPECT_FALSE(v.tokenize("no such words"));
}

TEST(Vocabulary, BoxTokensAndLocatorParse) {
  const Vocabulary v = Vocabulary::for_scene(SceneConfig{});
  const CoordFormat fmt = CoordFormat().with_range(v.coord_range());
  const BBox b{0.25, 0.125, 0.75, 1.0};
  auto toks = box_tokens(b, v);
  ASSERT_EQ(toks.size(), 4u);
  EXPECT_EQ(v.coord_value(toks[0]), 8);
  EXPECT_EQ(v.coord_value(toks[3]), 32);
  toks.push_back(Vocabulary::kEos);
  EXPECT_EQ(render_locator_output(toks, v, fmt), "<box>(8,4),(24,32)</box>");
  EXPECT_EQ(parse_locator_output(toks, v, fmt), b);
  // Three coordinates, or an inverted box, do not parse.
  EXPECT_FALSE(parse_locator_output(std::vector<int>{toks[0], toks[1], toks[2], 2}, v, fmt));
  EXPECT_FALSE(parse_locator_output(
      std::vector<int>{toks[2], toks[1], toks[0], toks[3], 2}, v, fmt));
  EXPECT_THROW(render_locator_output(toks, v, CoordFormat()), std::invalid_argument);
}

// Objects matching a caption under the scene; the reference caption must pick
// out exactly the target.
std::vector<int> matches(const Scene& s, const std::vector<int>& cap, const Vocabulary& v) {
  std::vector<int> cand;
  for (size_t i = 0; i < s.objects.size(); ++i) cand.push_back(static_cast<int>(i));
  auto cx = [&](int k) { return s.objects[k].bbox.x_min + s.objects[k].bbox.x_max; };
  auto cy = [&](int k) { return s.objects[k].bbox.y_min + s.objects[k].bbox.y_max; };
  for (int t : cap) {
    if (t == Vocabulary::kEos) break;
    std::vector<int> keep;
    for (int k : cand) {
      const auto& o = s.objects[k];
      bool ok = true;
      for (int c = 0; c < v.num_categories(); ++c) ok &= !(t == v.category(c) && o.category != c);
      for (int c = 0; c < v.num_colors(); ++c) ok &= !(t == v.color(c) && o.color != c);
      for (int c = 0; c < v.num_sizes(); ++c) ok &= !(t == v.size_word(c) && o.size_class != c);
      if (ok) keep.push_back(k);
    }
    cand = keep;
    for (auto [dir, sign, horiz] : {std::tuple{Spatial::kLeft, 1, true},
                                    std::tuple{Spatial::kRight, -1, true},
                                    std::tuple{Spatial::kTop, 1, false},
                                    std::tuple{Spatial::kBottom, -1, false}}) {
      if (t != v.spatial(dir)) continue;
      std::vector<int> best;
      for (int k : cand) {
        bool extreme = true;
        for (int o : cand) {
          if (o == k) continue;
          const double a = horiz ? cx(k) : cy(k), b = horiz ? cx(o) : cy(o);
          extreme &= sign * a < sign * b;
        }
        if (extreme) best.push_back(k);
      }
      cand = best;
    }
  }
  return cand;
}

TEST(ReferenceCaption, DiscriminativeWhenPossible) {
  const SceneConfig cfg;
  const Vocabulary v = Vocabulary::for_scene(cfg);
  const Dataset d = make_dataset(12, 500, cfg);
  int bare = 0;
  for (const auto& u : d.train) {
    const auto cap = reference_caption(u.scene, u.target_index, v);
    ASSERT_EQ(cap.back(), Vocabulary::kEos);
    if (cap.size() == 2) {
      ++bare;
      continue;
    }
    EXPECT_EQ(matches(u.scene, cap, v), std::vector<int>{u.target_index}) << v.detokenize(cap);
  }
  // Bare category names are rare fallbacks.
  EXPECT_LT(bare, 25);
}

TEST(ReferenceCaption, PrefersColorThenSize) {
  const Vocabulary v;
  Scene s;
  s.objects = {{0, 1, 0, BBox{0, 0, 0.25, 0.25}}, {0, 2, 0, BBox{0.5, 0.5, 0.75, 0.75}}};
  EXPECT_EQ(reference_caption(s, 0, v), (std::vector<int>{v.color(1), v.category(0), 2}));
  s.objects[1].color = 1;
  s.objects[1].size_class = 2;
  EXPECT_EQ(reference_caption(s, 0, v), (std::vector<int>{v.size_word(0), v.category(0), 2}));
  s.objects[1].size_class = 0;
  EXPECT_EQ(reference_caption(s, 0, v),
            (std::vector<int>{v.category(0), v.spatial(Spatial::kLeft), 2}));
  EXPECT_EQ(category_caption(s, 1, v), (std::vector<int>{v.category(0), 2}));
}

}  // namespace
}  // namespace sctune
