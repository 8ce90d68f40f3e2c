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

// Detection annotations in, ambiguous (image, category, boxes) triplets out.

#ifndef SCTUNE_DATAPREP_HPP_
#define SCTUNE_DATAPREP_HPP_

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sctune/geometry.hpp"

namespace sctune {

// Box in integer pixel corners.
struct Annotation {
  int64_t category_id = 0;
  QuantizedBBox box;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct AnnotatedImage {
  int64_t image_id = 0;
  int64_t width = 0;
  int64_t height = 0;
  // Optional; used to find the image for remote evaluation.
  std::string file_name;
  std::vector<Annotation> annotations;

  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) =
      default;
};

struct AnnotationSet {
  std::vector<AnnotatedImage> images;
  // Records dropped during loading, with a reason each.
  std::vector<std::string> warnings;
};

enum class AnnotationFormat { kCocoJson, kTsv };

// "coco" or "tsv". Throws ConfigError.
AnnotationFormat parse_annotation_format(std::string_view tag);

// COCO-style JSON: images [{id, width, height, file_name?}] and annotations
// [{image_id, category_id, bbox: [x, y, w, h]}]. Float pixel corners are
// rounded to integers, half away from zero.
//
// TSV: image_id, width, height, category_id, x_min, y_min, x_max, y_max and
// an optional file_name, tab separated. Blank lines, '#' comments and a
// leading "image_id" header line are skipped.
//
// Malformed records throw DataError naming the line (TSV) or byte offset and
// record index (JSON). Boxes outside their image or with min > max are
// dropped and counted in warnings.
AnnotationSet parse_annotations(std::string_view text, AnnotationFormat fmt,
                                std::string_view source = "<input>");
AnnotationSet load_annotations(const std::string& path, AnnotationFormat fmt);

// One image id per line; blank lines and '#' comments skipped.
std::set<int64_t> load_exclusions(const std::string& path);

struct FilteredTriplet {
  int64_t image_id = 0;
  int64_t category_id = 0;
  // Normalized by image size, sorted by pixel corners.
  std::vector<BBox> boxes;

  friend bool operator==(const FilteredTriplet&, const FilteredTriplet&) =
      default;
};

struct FilterStats {
  size_t images_in = 0;
  size_t images_excluded = 0;
  size_t images_no_repeat = 0;        // rule 1
  size_t triplets_built = 0;          // rule 2
  size_t triplets_overlap = 0;        // rule 3
  size_t triplets_small = 0;          // rule 4
  size_t triplets_out = 0;
  size_t images_out = 0;

  friend bool operator==(const FilterStats&, const FilterStats&) = default;
};

struct FilterResult {
  std::vector<FilteredTriplet> triplets;
  FilterStats stats;
};

constexpr double kMinAreaFraction = 0.02;
constexpr double kMaxOverlapIou = 0.5;

// Rules, in order:
//   1. drop images in which no category occurs twice;
//   2. one triplet per category occurring at least twice;
//   3. for every pair of boxes in the image with IoU > 0.5, drop each triplet
//      holding either box;
//   4. drop triplets holding a box smaller than 2% of the image.
// Images listed in exclude are removed first. Output is sorted by
// (image_id, category_id) and does not depend on input order.
FilterResult filter_annotations(const AnnotationSet& a,
                                const std::set<int64_t>& exclude = {});

std::string stats_json(const FilterStats& s);

// JSONL with a header line.
std::string triplets_to_jsonl(const std::vector<FilteredTriplet>& ts);
std::vector<FilteredTriplet> triplets_from_jsonl(std::string_view text);
void export_triplets(const std::vector<FilteredTriplet>& ts,
                     const std::string& path);
std::vector<FilteredTriplet> import_triplets(const std::string& path);

}  // namespace sctune

#endif  // SCTUNE_DATAPREP_HPP_
