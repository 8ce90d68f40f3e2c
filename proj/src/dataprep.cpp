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

#include "sctune/dataprep.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "sctune/errors.hpp"

namespace sctune {

using nlohmann::json;

namespace {

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(std::string("cannot open ") + what + ": " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

int64_t parse_int(std::string_view s, const std::string& where,
                  const char* field) {
  int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw DataError(where + ": field " + field + " is not an integer: '" +
                    std::string(s) + "'");
  }
  return v;
}

// Empty string when the box is acceptable.
std::string box_problem(const QuantizedBBox& b, int64_t w, int64_t h) {
  if (b.x_max < b.x_min || b.y_max < b.y_min) return "corners out of order";
  if (b.x_min < 0 || b.y_min < 0 || b.x_max > w || b.y_max > h) {
    return "box outside the image";
  }
  return "";
}

constexpr int64_t kMaxImageSide = int64_t{1} << 20;

class Builder {
 public:
  // Returns false (and warns) when the image size is unusable or clashes
  // with an earlier record for the same id.
  bool image(int64_t id, int64_t w, int64_t h, const std::string& file,
             const std::string& where, bool unique) {
    if (w <= 0 || h <= 0) {
      warn(where + ": image " + std::to_string(id) + " has non-positive size");
      return false;
    }
    // Keeps the integer area arithmetic far from overflow.
    if (w > kMaxImageSide || h > kMaxImageSide) {
      warn(where + ": image " + std::to_string(id) + " is larger than " +
           std::to_string(kMaxImageSide) + " pixels per side");
      return false;
    }
    auto it = images_.find(id);
    if (it == images_.end()) {
      images_[id] = AnnotatedImage{id, w, h, file, {}};
      return true;
    }
    if (unique) throw DataError(where + ": duplicate image id " + std::to_string(id));
    if (it->second.width != w || it->second.height != h) {
      warn(where + ": image " + std::to_string(id) + " size differs from earlier records");
      return false;
    }
    if (it->second.file_name.empty()) it->second.file_name = file;
    return true;
  }

  void annotation(int64_t image_id, int64_t category, const QuantizedBBox& b,
                  const std::string& where) {
    auto it = images_.find(image_id);
    if (it == images_.end()) {
      warn(where + ": unknown image " + std::to_string(image_id));
      return;
    }
    const std::string problem = box_problem(b, it->second.width, it->second.height);
    if (!problem.empty()) {
      warn(where + ": " + problem);
      return;
    }
    it->second.annotations.push_back({category, b});
  }

  void warn(std::string w) { set_.warnings.push_back(std::move(w)); }

  AnnotationSet finish() {
    for (auto& [id, img] : images_) set_.images.push_back(std::move(img));
    return std::move(set_);
  }

 private:
  std::map<int64_t, AnnotatedImage> images_;
  AnnotationSet set_;
};

AnnotationSet parse_tsv(std::string_view text, std::string_view source) {
  Builder b;
  size_t lineno = 0;
  size_t pos = 0;
  bool first_content = true;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (blank(line) || line.front() == '#') continue;
    const std::string where = std::string(source) + ":" + std::to_string(lineno);
    if (first_content && line.starts_with("image_id")) {
      first_content = false;
      continue;
    }
    first_content = false;
    const auto f = split_tabs(line);
    if (f.size() != 8 && f.size() != 9) {
      throw DataError(where + ": expected 8 or 9 tab-separated fields, got " +
                      std::to_string(f.size()));
    }
    const int64_t id = parse_int(f[0], where, "image_id");
    const int64_t w = parse_int(f[1], where, "width");
    const int64_t h = parse_int(f[2], where, "height");
    const int64_t cat = parse_int(f[3], where, "category_id");
    const QuantizedBBox box{parse_int(f[4], where, "x_min"),
                            parse_int(f[5], where, "y_min"),
                            parse_int(f[6], where, "x_max"),
                            parse_int(f[7], where, "y_max")};
    const std::string file = f.size() == 9 ? std::string(f[8]) : "";
    if (b.image(id, w, h, file, where, false)) b.annotation(id, cat, box, where);
  }
  return b.finish();
}

AnnotationSet parse_coco(std::string_view text, std::string_view source) {
  Builder b;
  if (blank(text)) return b.finish();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string(source) + ": byte " + std::to_string(e.byte) +
                    ": " + e.what());
  }
  const std::string src(source);
  std::string where = src;
  try {
    if (!j.is_object()) throw DataError(src + ": top level must be an object");
    if (j.contains("images")) {
      const auto& images = j.at("images");
      for (size_t i = 0; i < images.size(); ++i) {
        const auto& im = images.at(i);
        where = src + ": images[" + std::to_string(i) + "]";
        b.image(im.at("id").get<int64_t>(),
                std::llround(im.at("width").get<double>()),
                std::llround(im.at("height").get<double>()),
                im.value("file_name", std::string()), where, true);
      }
    }
    if (j.contains("annotations")) {
      const auto& anns = j.at("annotations");
      for (size_t i = 0; i < anns.size(); ++i) {
        const auto& a = anns.at(i);
        where = src + ": annotations[" + std::to_string(i) + "]";
        const auto& bb = a.at("bbox");
        if (!bb.is_array() || bb.size() != 4) {
          throw DataError(where + ": bbox must be [x, y, w, h]");
        }
        const double x = bb[0].get<double>(), y = bb[1].get<double>();
        const double w = bb[2].get<double>(), h = bb[3].get<double>();
        const QuantizedBBox box{std::llround(x), std::llround(y),
                                std::llround(x + w), std::llround(y + h)};
        b.annotation(a.at("image_id").get<int64_t>(),
                     a.at("category_id").get<int64_t>(), box, where);
      }
    }
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  return b.finish();
}

BBox normalized(const QuantizedBBox& q, int64_t w, int64_t h) {
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  return BBox{static_cast<double>(q.x_min) / W, static_cast<double>(q.y_min) / H,
              static_cast<double>(q.x_max) / W, static_cast<double>(q.y_max) / H};
}

bool box_less(const QuantizedBBox& a, const QuantizedBBox& b) {
  return std::tie(a.x_min, a.y_min, a.x_max, a.y_max) <
         std::tie(b.x_min, b.y_min, b.x_max, b.y_max);
}

static_assert(kMaxOverlapIou == 0.5 && kMinAreaFraction == 0.02,
              "pixel_overlap and pixel_small hard-code the thresholds");

int64_t pixel_area(const QuantizedBBox& q) {
  return (q.x_max - q.x_min) * (q.y_max - q.y_min);
}

// IoU > kMaxOverlapIou, i.e. 2 * inter > union.
bool pixel_overlap(const QuantizedBBox& a, const QuantizedBBox& b) {
  const int64_t w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const int64_t h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const int64_t inter = w > 0 && h > 0 ? w * h : 0;
  const int64_t uni = pixel_area(a) + pixel_area(b) - inter;
  return uni > 0 && 2 * inter > uni;
}

// area / (W * H) < kMinAreaFraction, i.e. 50 * area < W * H.
bool pixel_small(const QuantizedBBox& q, int64_t W, int64_t H) {
  return 50 * pixel_area(q) < W * H;
}

struct ImageOutcome {
  std::vector<FilteredTriplet> triplets;
  FilterStats stats;
};

ImageOutcome filter_image(const AnnotatedImage& img) {
  ImageOutcome out;
  std::map<int64_t, std::vector<size_t>> by_cat;
  for (size_t i = 0; i < img.annotations.size(); ++i) {
    by_cat[img.annotations[i].category_id].push_back(i);
  }
  bool repeated = false;
  for (const auto& [cat, idx] : by_cat) repeated |= idx.size() >= 2;
  if (!repeated) {
    out.stats.images_no_repeat = 1;
    return out;
  }

  const size_t n = img.annotations.size();
  std::vector<BBox> norm(n);
  for (size_t i = 0; i < n; ++i) {
    norm[i] = normalized(img.annotations[i].box, img.width, img.height);
  }
  // Both thresholds are checked on the integer pixel boxes, so ties at
  // exactly IoU 0.5 or exactly 2% area fall on the kept side without
  // rounding noise. IoU is invariant to the per-axis normalization.
  std::vector<bool> overlapping(n, false);
  for (size_t i = 0; i < n; ++i) {
    for (size_t k = i + 1; k < n; ++k) {
      if (pixel_overlap(img.annotations[i].box, img.annotations[k].box)) {
        overlapping[i] = overlapping[k] = true;
      }
    }
  }

  for (auto& [cat, idx] : by_cat) {
    if (idx.size() < 2) continue;
    ++out.stats.triplets_built;
    bool overlap = false, small = false;
    for (size_t i : idx) {
      overlap |= overlapping[i];
      small |= pixel_small(img.annotations[i].box, img.width, img.height);
    }
    if (overlap) {
      ++out.stats.triplets_overlap;
      continue;
    }
    if (small) {
      ++out.stats.triplets_small;
      continue;
    }
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return box_less(img.annotations[a].box, img.annotations[b].box);
    });
    FilteredTriplet t{img.image_id, cat, {}};
    for (size_t i : idx) t.boxes.push_back(norm[i]);
    out.triplets.push_back(std::move(t));
  }
  out.stats.triplets_out = out.triplets.size();
  out.stats.images_out = out.triplets.empty() ? 0 : 1;
  return out;
}

void accumulate(FilterStats& a, const FilterStats& b) {
  a.images_no_repeat += b.images_no_repeat;
  a.triplets_built += b.triplets_built;
  a.triplets_overlap += b.triplets_overlap;
  a.triplets_small += b.triplets_small;
  a.triplets_out += b.triplets_out;
  a.images_out += b.images_out;
}

bool triplet_less(const FilteredTriplet& a, const FilteredTriplet& b) {
  return std::tie(a.image_id, a.category_id) < std::tie(b.image_id, b.category_id);
}

}  // namespace

AnnotationFormat parse_annotation_format(std::string_view tag) {
  if (tag == "coco") return AnnotationFormat::kCocoJson;
  if (tag == "tsv") return AnnotationFormat::kTsv;
  throw ConfigError("unknown annotation format '" + std::string(tag) +
                    "' (expected coco or tsv)");
}

AnnotationSet parse_annotations(std::string_view text, AnnotationFormat fmt,
                                std::string_view source) {
  return fmt == AnnotationFormat::kTsv ? parse_tsv(text, source)
                                       : parse_coco(text, source);
}

AnnotationSet load_annotations(const std::string& path, AnnotationFormat fmt) {
  return parse_annotations(read_file(path, "annotations"), fmt, path);
}

std::set<int64_t> load_exclusions(const std::string& path) {
  const std::string text = read_file(path, "exclusion list");
  std::set<int64_t> out;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line) || line.front() == '#') continue;
    const auto a = line.find_first_not_of(" \t");
    const auto z = line.find_last_not_of(" \t");
    out.insert(parse_int(std::string_view(line).substr(a, z - a + 1),
                         path + ":" + std::to_string(lineno), "image_id"));
  }
  return out;
}

FilterResult filter_annotations(const AnnotationSet& a,
                                const std::set<int64_t>& exclude) {
  // Merge records that share an image id so that input order cannot matter.
  std::map<int64_t, AnnotatedImage> merged;
  FilterResult res;
  for (const auto& img : a.images) {
    auto [it, fresh] = merged.try_emplace(img.image_id, img);
    if (!fresh) {
      auto& anns = it->second.annotations;
      anns.insert(anns.end(), img.annotations.begin(), img.annotations.end());
    }
  }
  std::vector<const AnnotatedImage*> kept;
  for (const auto& [id, img] : merged) {
    ++res.stats.images_in;
    if (exclude.count(id)) {
      ++res.stats.images_excluded;
      continue;
    }
    kept.push_back(&img);
  }

  std::vector<ImageOutcome> outcomes(kept.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (int64_t i = 0; i < static_cast<int64_t>(kept.size()); ++i) {
    outcomes[i] = filter_image(*kept[i]);
  }
  for (auto& o : outcomes) {
    accumulate(res.stats, o.stats);
    for (auto& t : o.triplets) res.triplets.push_back(std::move(t));
  }
  return res;
}

std::string stats_json(const FilterStats& s) {
  json j = {{"images_in", s.images_in},
            {"images_excluded", s.images_excluded},
            {"rule1_images_without_repeat", s.images_no_repeat},
            {"rule2_triplets_built", s.triplets_built},
            {"rule3_triplets_overlap", s.triplets_overlap},
            {"rule4_triplets_small", s.triplets_small},
            {"triplets_out", s.triplets_out},
            {"images_out", s.images_out}};
  return j.dump(2);
}

std::string triplets_to_jsonl(const std::vector<FilteredTriplet>& ts) {
  std::vector<const FilteredTriplet*> sorted;
  for (const auto& t : ts) sorted.push_back(&t);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return triplet_less(*a, *b); });
  std::string out =
      json{{"format", "sctune-triplets"}, {"version", 1}, {"count", ts.size()}}
          .dump() +
      "\n";
  for (const auto* t : sorted) {
    json boxes = json::array();
    for (const auto& b : t->boxes) {
      boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
    }
    out += json{{"image_id", t->image_id},
                {"category_id", t->category_id},
                {"boxes", boxes}}
               .dump() +
           "\n";
  }
  return out;
}

std::vector<FilteredTriplet> triplets_from_jsonl(std::string_view text) {
  std::vector<FilteredTriplet> out;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t lineno = 0;
  bool header = false;
  size_t expected = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      const json j = json::parse(line);
      if (!header) {
        if (j.value("format", "") != "sctune-triplets") {
          throw DataError("not a triplet file");
        }
        if (j.at("version").get<int>() != 1) {
          throw DataError("unsupported triplet file version");
        }
        expected = j.at("count").get<size_t>();
        header = true;
        continue;
      }
      FilteredTriplet t;
      t.image_id = j.at("image_id").get<int64_t>();
      t.category_id = j.at("category_id").get<int64_t>();
      for (const auto& b : j.at("boxes")) {
        t.boxes.push_back(make_bbox(b.at(0).get<double>(), b.at(1).get<double>(),
                                    b.at(2).get<double>(), b.at(3).get<double>()));
      }
      if (t.boxes.empty()) throw DataError("triplet without boxes");
      out.push_back(std::move(t));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw DataError("missing triplet file header");
  if (out.size() != expected) {
    throw DataError("triplet count " + std::to_string(out.size()) +
                    " does not match header count " + std::to_string(expected));
  }
  return out;
}

void export_triplets(const std::vector<FilteredTriplet>& ts,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << triplets_to_jsonl(ts);
  if (!out) throw std::runtime_error("cannot write " + path);
}

std::vector<FilteredTriplet> import_triplets(const std::string& path) {
  try {
    return triplets_from_jsonl(read_file(path, "triplet file"));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace sctune
