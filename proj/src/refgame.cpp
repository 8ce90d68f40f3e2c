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

#include "sctune/refgame.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "sctune/errors.hpp"
#include "sctune/rng.hpp"

namespace sctune {

using nlohmann::json;

namespace {

constexpr int kPlacementTries = 64;

json box_to_json(const BBox& b) {
  return json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("box must be [4]");
  return make_bbox(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                   j[3].get<double>());
}

json config_to_json(const SceneConfig& c) {
  return {{"grid", c.grid},
          {"max_objects", c.max_objects},
          {"min_objects", c.min_objects},
          {"num_categories", c.num_categories},
          {"num_colors", c.num_colors},
          {"num_sizes", c.num_sizes},
          {"max_attempts", c.max_attempts}};
}

SceneConfig config_from_json(const json& j) {
  SceneConfig c;
  c.grid = j.at("grid").get<int>();
  c.max_objects = j.at("max_objects").get<int>();
  c.min_objects = j.at("min_objects").get<int>();
  c.num_categories = j.at("num_categories").get<int>();
  c.num_colors = j.at("num_colors").get<int>();
  c.num_sizes = j.at("num_sizes").get<int>();
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.validate();
  return c;
}

json unit_to_json(const Unit& u, const char* split) {
  json objects = json::array();
  for (const auto& o : u.scene.objects) {
    objects.push_back({{"category", o.category},
                       {"color", o.color},
                       {"size", o.size_class},
                       {"bbox", box_to_json(o.bbox)}});
  }
  return {{"split", split},
          {"scene_id", u.scene.scene_id},
          {"rng_seed", u.scene.rng_seed},
          {"objects", std::move(objects)},
          {"target",
           {{"index", u.target_index},
            {"category", u.triplet.category},
            {"bbox", box_to_json(u.triplet.target)}}}};
}

Unit unit_from_json(const json& j) {
  Unit u;
  u.scene.scene_id = j.at("scene_id").get<int64_t>();
  u.scene.rng_seed = j.at("rng_seed").get<uint64_t>();
  for (const auto& o : j.at("objects")) {
    u.scene.objects.push_back({o.at("category").get<int>(),
                               o.at("color").get<int>(),
                               o.at("size").get<int>(),
                               box_from_json(o.at("bbox"))});
  }
  const auto& t = j.at("target");
  u.target_index = t.at("index").get<int>();
  u.triplet = {u.scene.scene_id, box_from_json(t.at("bbox")),
               t.at("category").get<int>()};
  if (u.target_index < 0 ||
      u.target_index >= static_cast<int>(u.scene.objects.size()) ||
      !(u.scene.objects[u.target_index].bbox == u.triplet.target)) {
    throw DataError("target does not match a scene object");
  }
  return u;
}

}  // namespace

int SceneConfig::min_side(int size_class) const {
  return std::min(size_class + 1, grid);
}

int SceneConfig::max_side(int size_class) const {
  return std::min(size_class + 2, grid);
}

void SceneConfig::validate() const {
  if (grid < 2) throw std::invalid_argument("scene grid must be >= 2");
  if (min_objects < 2 || max_objects < min_objects) {
    throw std::invalid_argument("scene needs 2 <= min_objects <= max_objects");
  }
  if (num_categories < 1 || num_colors < 1 || num_sizes < 1) {
    throw std::invalid_argument("attribute vocabularies must be non-empty");
  }
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

bool scene_invariants_hold(const Scene& s) {
  if (s.objects.size() < 2) return false;
  std::map<int, int> counts;
  for (const auto& o : s.objects) {
    if (!o.bbox.valid() || o.bbox.area() < 0.0004) return false;
    ++counts[o.category];
  }
  if (std::none_of(counts.begin(), counts.end(),
                   [](const auto& kv) { return kv.second >= 2; })) {
    return false;
  }
  for (size_t i = 0; i < s.objects.size(); ++i) {
    for (size_t j = i + 1; j < s.objects.size(); ++j) {
      if (iou(s.objects[i].bbox, s.objects[j].bbox) > 0.5) return false;
    }
  }
  return true;
}

Scene generate_scene(uint64_t seed, const SceneConfig& cfg, int64_t scene_id) {
  cfg.validate();
  Rng rng(seed);
  const int g = cfg.grid;
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const int n = static_cast<int>(rng.uniform_int(cfg.min_objects,
                                                   cfg.max_objects));
    std::vector<int> categories(n);
    categories[0] = categories[1] =
        static_cast<int>(rng.index(cfg.num_categories));
    for (int i = 2; i < n; ++i) {
      categories[i] = static_cast<int>(rng.index(cfg.num_categories));
    }

    std::vector<uint8_t> occupied(static_cast<size_t>(g) * g, 0);
    Scene scene{scene_id, {}, seed};
    bool ok = true;
    for (int category : categories) {
      const int size_class = static_cast<int>(rng.index(cfg.num_sizes));
      const int color = static_cast<int>(rng.index(cfg.num_colors));
      bool placed = false;
      for (int t = 0; t < kPlacementTries && !placed; ++t) {
        const int w = static_cast<int>(rng.uniform_int(
            cfg.min_side(size_class), cfg.max_side(size_class)));
        const int h = static_cast<int>(rng.uniform_int(
            cfg.min_side(size_class), cfg.max_side(size_class)));
        const int x = static_cast<int>(rng.uniform_int(0, g - w));
        const int y = static_cast<int>(rng.uniform_int(0, g - h));
        bool free = true;
        for (int r = y; r < y + h && free; ++r) {
          for (int c = x; c < x + w; ++c) {
            if (occupied[r * g + c]) {
              free = false;
              break;
            }
          }
        }
        if (!free) continue;
        for (int r = y; r < y + h; ++r) {
          for (int c = x; c < x + w; ++c) occupied[r * g + c] = 1;
        }
        const double gd = g;
        scene.objects.push_back(
            {category, color, size_class,
             BBox{x / gd, y / gd, (x + w) / gd, (y + h) / gd}});
        placed = true;
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
    if (ok && scene_invariants_hold(scene)) return scene;
  }
  throw std::runtime_error("scene generation failed after " +
                           std::to_string(cfg.max_attempts) +
                           " attempts; scene config is infeasible");
}

SceneFeatures encode_scene(const Scene& s, const SceneConfig& cfg) {
  const int g = cfg.grid;
  SceneFeatures f(g, cfg.channels());
  const int color0 = cfg.num_categories;
  const int size0 = color0 + cfg.num_colors;
  for (const auto& o : s.objects) {
    for (int r = 0; r < g; ++r) {
      const double cy = (r + 0.5) / g;
      if (cy < o.bbox.y_min || cy >= o.bbox.y_max) continue;
      for (int c = 0; c < g; ++c) {
        const double cx = (c + 0.5) / g;
        if (cx < o.bbox.x_min || cx >= o.bbox.x_max) continue;
        f.set(r, c, o.category, 1);
        f.set(r, c, color0 + o.color, 1);
        f.set(r, c, size0 + o.size_class, 1);
      }
    }
  }
  return f;
}

std::vector<int> ambiguous_objects(const Scene& s) {
  std::map<int, int> counts;
  for (const auto& o : s.objects) ++counts[o.category];
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(s.objects.size()); ++i) {
    if (counts[s.objects[i].category] >= 2) out.push_back(i);
  }
  return out;
}

Unit make_unit(uint64_t dataset_seed, int64_t scene_id,
               const SceneConfig& cfg) {
  const uint64_t scene_seed =
      mix_seed(dataset_seed, static_cast<uint64_t>(scene_id));
  Unit u;
  u.scene = generate_scene(scene_seed, cfg, scene_id);
  const auto candidates = ambiguous_objects(u.scene);
  Rng pick(mix_seed(scene_seed, 1));
  u.target_index = candidates[pick.index(candidates.size())];
  const auto& target = u.scene.objects[u.target_index];
  u.triplet = {scene_id, target.bbox, target.category};
  return u;
}

Dataset make_dataset(uint64_t seed, size_t n, const SceneConfig& cfg,
                     size_t heldout_n) {
  if (n < 1) throw std::invalid_argument("dataset needs at least one unit");
  Dataset d;
  d.config = cfg;
  d.seed = seed;
  d.train.resize(n);
  d.heldout.resize(heldout_n);
  // Scenes are independent given their seeds, so order of generation does not
  // affect the result. Exceptions cannot cross the parallel region.
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 64)
  for (int64_t i = 0; i < static_cast<int64_t>(n + heldout_n); ++i) {
    try {
      Unit u = make_unit(seed, i, cfg);
      if (i < static_cast<int64_t>(n)) {
        d.train[i] = std::move(u);
      } else {
        d.heldout[i - n] = std::move(u);
      }
    } catch (...) {
#pragma omp critical(sctune_dataset_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  json header = {{"format", "sctune-dataset"},
                 {"version", 1},
                 {"seed", d.seed},
                 {"scene_config", config_to_json(d.config)}};
  out << header.dump() << '\n';
  for (const auto& u : d.train) out << unit_to_json(u, "train").dump() << '\n';
  for (const auto& u : d.heldout) {
    out << unit_to_json(u, "heldout").dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset: " + path);
  Dataset d;
  std::string line;
  size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != "sctune-dataset") {
          throw DataError("not an sctune dataset");
        }
        if (j.value("version", 0) != 1) {
          throw DataError("unsupported dataset version");
        }
        d.seed = j.value("seed", uint64_t{0});
        d.config = config_from_json(j.at("scene_config"));
        have_header = true;
        continue;
      }
      Unit u = unit_from_json(j);
      if (j.at("split").get<std::string>() == "heldout") {
        d.heldout.push_back(std::move(u));
      } else {
        d.train.push_back(std::move(u));
      }
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError(path + ": missing dataset header");
  return d;
}

}  // namespace sctune
