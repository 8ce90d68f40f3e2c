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

#ifndef SCTUNE_VOCAB_HPP_
#define SCTUNE_VOCAB_HPP_

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sctune/geometry.hpp"
#include "sctune/refgame.hpp"

namespace sctune {

enum class Spatial { kLeft = 0, kRight = 1, kTop = 2, kBottom = 3 };

// Token ids, in order: PAD, BOS, EOS, category words, color words, size
// words, the four spatial words, then coordinate tokens 0..coord_range.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocabulary() : Vocabulary(8, 6, 3, 32) {}
  Vocabulary(int num_categories, int num_colors, int num_sizes,
             int coord_range);
  // Default vocabulary for a scene config: coordinate range 4 * grid.
  static Vocabulary for_scene(const SceneConfig& cfg);

  int size() const { return static_cast<int>(words_.size()); }
  int num_categories() const { return num_categories_; }
  int num_colors() const { return num_colors_; }
  int num_sizes() const { return num_sizes_; }
  int coord_range() const { return coord_range_; }

  int category(int c) const { return category0_ + c; }
  int color(int c) const { return color0_ + c; }
  int size_word(int s) const { return size0_ + s; }
  int spatial(Spatial d) const { return spatial0_ + static_cast<int>(d); }
  int coord(int v) const { return coord0_ + v; }
  int first_word() const { return category0_; }
  int first_coord() const { return coord0_; }

  bool is_word(int tok) const { return tok >= category0_ && tok < coord0_; }
  bool is_coord(int tok) const { return tok >= coord0_ && tok < size(); }
  int coord_value(int tok) const { return tok - coord0_; }

  const std::string& word(int tok) const { return words_.at(tok); }
  const std::vector<std::string>& words() const { return words_; }
  std::optional<int> find(std::string_view w) const;

  // Space-joined words; stops after EOS.
  std::string detokenize(std::span<const int> tokens) const;
  // Inverse of detokenize; absent if any word is unknown.
  std::optional<std::vector<int>> tokenize(std::string_view text) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.coord_range_ == b.coord_range_;
  }

 private:
  int num_categories_, num_colors_, num_sizes_, coord_range_;
  int category0_, color0_, size0_, spatial0_, coord0_;
  std::vector<std::string> words_;
};

// Coordinate tokens for a box: quantized to the vocabulary's coordinate
// range, in x1 y1 x2 y2 order.
std::vector<int> box_tokens(const BBox& b, const Vocabulary& v);

// The text a locator emits for its tokens. Exactly four coordinate tokens
// before EOS render through fmt's template; anything else renders as plain
// words and will not parse. fmt.range() must equal v.coord_range().
std::string render_locator_output(std::span<const int> tokens,
                                  const Vocabulary& v, const CoordFormat& fmt);

// render_locator_output followed by parse_bbox and dequantize.
std::optional<BBox> parse_locator_output(std::span<const int> tokens,
                                         const Vocabulary& v,
                                         const CoordFormat& fmt);

// Shortest discriminative description of scene object `target`, ending with
// EOS: "<color> <cat>" when the color is unique within the category, else
// "<size> <cat>", else "<cat> <left|right|top|bottom>" by strict box-center
// comparison, else just "<cat>".
std::vector<int> reference_caption(const Scene& s, int target,
                                   const Vocabulary& v);

// "<cat>" EOS; names the category only.
std::vector<int> category_caption(const Scene& s, int target,
                                  const Vocabulary& v);

}  // namespace sctune

#endif  // SCTUNE_VOCAB_HPP_
