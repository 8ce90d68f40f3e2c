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

// Synthetic referential scenes: the stand-in for images.
//
// A scene is a G x G grid holding 2..N_max grid-aligned rectangular objects
// with a category, a color and a size class. Objects never share a cell, and
// at least one category always appears twice so that naming the category
// alone never identifies a target.

#ifndef SCTUNE_REFGAME_HPP_
#define SCTUNE_REFGAME_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "sctune/geometry.hpp"

namespace sctune {

struct SceneConfig {
  int grid = 8;
  int max_objects = 6;
  int min_objects = 2;
  int num_categories = 8;
  int num_colors = 6;
  int num_sizes = 3;
  // Whole-scene rejection attempts before generate_scene gives up.
  int max_attempts = 200;

  int channels() const { return num_categories + num_colors + num_sizes; }
  // Side length range, in cells, for a size class.
  int min_side(int size_class) const;
  int max_side(int size_class) const;
  // Throws std::invalid_argument for unusable values.
  void validate() const;

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct SceneObject {
  int category = 0;
  int color = 0;
  int size_class = 0;
  BBox bbox;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  int64_t scene_id = 0;
  std::vector<SceneObject> objects;
  uint64_t rng_seed = 0;

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Binary occupancy grid, row-major [row][col][channel]. Channels are the
// category one-hot, then color, then size class.
class SceneFeatures {
 public:
  SceneFeatures() = default;
  SceneFeatures(int grid, int channels)
      : grid_(grid),
        channels_(channels),
        cells_(static_cast<size_t>(grid) * grid * channels, 0) {}

  int grid() const { return grid_; }
  int channels() const { return channels_; }
  int num_cells() const { return grid_ * grid_; }
  uint8_t at(int row, int col, int ch) const {
    return cells_[index(row, col, ch)];
  }
  void set(int row, int col, int ch, uint8_t v) {
    cells_[index(row, col, ch)] = v;
  }
  const std::vector<uint8_t>& data() const { return cells_; }

  friend bool operator==(const SceneFeatures&, const SceneFeatures&) = default;

 private:
  size_t index(int row, int col, int ch) const {
    return (static_cast<size_t>(row) * grid_ + col) * channels_ + ch;
  }
  int grid_ = 0;
  int channels_ = 0;
  std::vector<uint8_t> cells_;
};

struct ReferentTriplet {
  int64_t scene_id = 0;
  BBox target;
  int category = 0;

  friend bool operator==(const ReferentTriplet&, const ReferentTriplet&) =
      default;
};

// One training or evaluation item: a scene and the object to refer to.
struct Unit {
  Scene scene;
  ReferentTriplet triplet;
  int target_index = 0;

  friend bool operator==(const Unit&, const Unit&) = default;
};

struct Dataset {
  SceneConfig config;
  uint64_t seed = 0;
  std::vector<Unit> train;
  std::vector<Unit> heldout;
};

// Throws std::runtime_error when max_attempts scenes in a row fail to place
// every object (too many or too large objects for the grid).
Scene generate_scene(uint64_t seed, const SceneConfig& cfg,
                     int64_t scene_id = 0);

// A cell is marked for an object iff the cell center lies in its box
// (half-open on the max edges).
SceneFeatures encode_scene(const Scene& s, const SceneConfig& cfg);

// Train units get scene ids [0, n); held-out units get [n, n + heldout_n).
Dataset make_dataset(uint64_t seed, size_t n, const SceneConfig& cfg,
                     size_t heldout_n = 0);

// The unit make_dataset produces for scene_id: scene seed
// mix_seed(dataset_seed, scene_id), target uniform over ambiguous objects.
Unit make_unit(uint64_t dataset_seed, int64_t scene_id, const SceneConfig& cfg);

// Indices of objects whose category occurs at least twice in the scene.
std::vector<int> ambiguous_objects(const Scene& s);

// True when the scene satisfies the ambiguity and overlap invariants.
bool scene_invariants_hold(const Scene& s);

// Line-delimited JSON; one header line, then one unit per line.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace sctune

#endif  // SCTUNE_REFGAME_HPP_
