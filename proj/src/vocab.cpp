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

#include "sctune/vocab.hpp"

#include <algorithm>
#include <array>
#include <sstream>
#include <stdexcept>

namespace sctune {

namespace {

constexpr std::array<const char*, 8> kCategoryNames = {
    "ball", "cube", "cone", "ring", "star", "disk", "vase", "lamp"};
constexpr std::array<const char*, 6> kColorNames = {
    "red", "green", "blue", "yellow", "purple", "orange"};
constexpr std::array<const char*, 3> kSizeNames = {"small", "medium", "large"};
constexpr std::array<const char*, 4> kSpatialNames = {"left", "right", "top",
                                                      "bottom"};

template <size_t N>
std::string name_or(const std::array<const char*, N>& names, int i,
                    const char* prefix) {
  if (i < static_cast<int>(N)) return names[i];
  return prefix + std::to_string(i);
}

double center_x(const BBox& b) { return 0.5 * (b.x_min + b.x_max); }
double center_y(const BBox& b) { return 0.5 * (b.y_min + b.y_max); }

}  // namespace

Vocabulary::Vocabulary(int num_categories, int num_colors, int num_sizes,
                       int coord_range)
    : num_categories_(num_categories),
      num_colors_(num_colors),
      num_sizes_(num_sizes),
      coord_range_(coord_range) {
  if (num_categories < 1 || num_colors < 1 || num_sizes < 1 ||
      coord_range < 1) {
    throw std::invalid_argument("vocabulary block sizes must be positive");
  }
  words_ = {"<pad>", "<bos>", "<eos>"};
  category0_ = size();
  for (int i = 0; i < num_categories; ++i) {
    words_.push_back(name_or(kCategoryNames, i, "cat"));
  }
  color0_ = size();
  for (int i = 0; i < num_colors; ++i) {
    words_.push_back(name_or(kColorNames, i, "color"));
  }
  size0_ = size();
  for (int i = 0; i < num_sizes; ++i) {
    words_.push_back(name_or(kSizeNames, i, "size"));
  }
  spatial0_ = size();
  for (const char* w : kSpatialNames) words_.push_back(w);
  coord0_ = size();
  for (int i = 0; i <= coord_range; ++i) {
    words_.push_back("<" + std::to_string(i) + ">");
  }
}

Vocabulary Vocabulary::for_scene(const SceneConfig& cfg) {
  return Vocabulary(cfg.num_categories, cfg.num_colors, cfg.num_sizes,
                    4 * cfg.grid);
}

std::optional<int> Vocabulary::find(std::string_view w) const {
  for (int i = 0; i < size(); ++i) {
    if (words_[i] == w) return i;
  }
  return std::nullopt;
}

std::string Vocabulary::detokenize(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    out += word(t);
    if (t == kEos) break;
  }
  return out;
}

std::optional<std::vector<int>> Vocabulary::tokenize(
    std::string_view text) const {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) {
    auto id = find(w);
    if (!id) return std::nullopt;
    out.push_back(*id);
  }
  return out;
}

std::vector<int> box_tokens(const BBox& b, const Vocabulary& v) {
  const QuantizedBBox q = quantize(b, v.coord_range());
  return {v.coord(static_cast<int>(q.x_min)), v.coord(static_cast<int>(q.y_min)),
          v.coord(static_cast<int>(q.x_max)),
          v.coord(static_cast<int>(q.y_max))};
}

std::string render_locator_output(std::span<const int> tokens,
                                  const Vocabulary& v, const CoordFormat& fmt) {
  if (fmt.range() != v.coord_range()) {
    throw std::invalid_argument("locator format range must equal the "
                                "vocabulary coordinate range");
  }
  std::vector<int> body;
  for (int t : tokens) {
    if (t == Vocabulary::kEos) break;
    body.push_back(t);
  }
  if (body.size() == 4 &&
      std::all_of(body.begin(), body.end(),
                  [&](int t) { return v.is_coord(t); })) {
    // Out-of-order corners are still written; parse_bbox rejects them.
    return serialize_bbox({v.coord_value(body[0]), v.coord_value(body[1]),
                           v.coord_value(body[2]), v.coord_value(body[3])},
                          fmt);
  }
  return v.detokenize(body);
}

std::optional<BBox> parse_locator_output(std::span<const int> tokens,
                                         const Vocabulary& v,
                                         const CoordFormat& fmt) {
  auto q = parse_bbox(render_locator_output(tokens, v, fmt), fmt);
  if (!q) return std::nullopt;
  return dequantize(*q, fmt.range());
}

std::vector<int> reference_caption(const Scene& s, int target,
                                   const Vocabulary& v) {
  const SceneObject& t = s.objects.at(target);
  std::vector<const SceneObject*> others;
  for (size_t i = 0; i < s.objects.size(); ++i) {
    if (static_cast<int>(i) != target && s.objects[i].category == t.category) {
      others.push_back(&s.objects[i]);
    }
  }
  const int cat = v.category(t.category);
  auto all_others = [&](auto pred) {
    return std::all_of(others.begin(), others.end(), pred);
  };
  if (all_others([&](const SceneObject* o) { return o->color != t.color; })) {
    return {v.color(t.color), cat, Vocabulary::kEos};
  }
  if (all_others(
          [&](const SceneObject* o) { return o->size_class != t.size_class; })) {
    return {v.size_word(t.size_class), cat, Vocabulary::kEos};
  }
  const double cx = center_x(t.bbox), cy = center_y(t.bbox);
  if (all_others([&](const SceneObject* o) { return cx < center_x(o->bbox); })) {
    return {cat, v.spatial(Spatial::kLeft), Vocabulary::kEos};
  }
  if (all_others([&](const SceneObject* o) { return cx > center_x(o->bbox); })) {
    return {cat, v.spatial(Spatial::kRight), Vocabulary::kEos};
  }
  if (all_others([&](const SceneObject* o) { return cy < center_y(o->bbox); })) {
    return {cat, v.spatial(Spatial::kTop), Vocabulary::kEos};
  }
  if (all_others([&](const SceneObject* o) { return cy > center_y(o->bbox); })) {
    return {cat, v.spatial(Spatial::kBottom), Vocabulary::kEos};
  }
  return {cat, Vocabulary::kEos};
}

std::vector<int> category_caption(const Scene& s, int target,
                                  const Vocabulary& v) {
  return {v.category(s.objects.at(target).category), Vocabulary::kEos};
}

}  // namespace sctune
