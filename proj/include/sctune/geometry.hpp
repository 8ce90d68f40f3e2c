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

#ifndef SCTUNE_GEOMETRY_HPP_
#define SCTUNE_GEOMETRY_HPP_

#include <cstdint>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>

namespace sctune {

// Axis-aligned box in normalized image coordinates, corners in [0, 1].
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Checked constructor; throws std::invalid_argument on a box that violates
// 0 <= min <= max <= 1 on either axis.
BBox make_bbox(double x_min, double y_min, double x_max, double y_max);

// Box corners on the integer grid [0, range].
struct QuantizedBBox {
  int64_t x_min = 0;
  int64_t y_min = 0;
  int64_t x_max = 0;
  int64_t y_max = 0;

  bool valid(int64_t range) const;

  friend bool operator==(const QuantizedBBox&, const QuantizedBBox&) = default;
};

// How quantized boxes are written into and read back out of text.
//
// The template carries the four slots {x1} {y1} {x2} {y2}; the pattern is an
// ECMAScript regular expression whose first four capture groups are the same
// four integers in the same order. Construction rejects a template/pattern
// pair that does not round-trip.
class CoordFormat {
 public:
  static constexpr std::string_view kDefaultTemplate =
      "<box>({x1},{y1}),({x2},{y2})</box>";
  static constexpr std::string_view kDefaultPattern =
      R"(<box>\((\d+),(\d+)\),\((\d+),(\d+)\)</box>)";
  static constexpr int64_t kDefaultRange = 1000;

  CoordFormat();
  CoordFormat(std::string templ, std::string pattern, int64_t range);

  // Same template and pattern with a different coordinate range.
  CoordFormat with_range(int64_t range) const;

  const std::string& templ() const { return templ_; }
  const std::string& pattern() const { return pattern_; }
  int64_t range() const { return range_; }
  const std::regex& regex() const { return regex_; }

 private:
  std::string templ_;
  std::string pattern_;
  int64_t range_;
  std::regex regex_;
};

// Intersection over union. Two zero-area boxes (zero union) give 0.
double iou(const BBox& a, const BBox& b);

// Batched iou(a[i], b[i]) into out[i]. Sizes must match.
void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out);

// round(coord * range), half away from zero.
QuantizedBBox quantize(const BBox& b, int64_t range);
BBox dequantize(const QuantizedBBox& q, int64_t range);

std::string serialize_bbox(const QuantizedBBox& q, const CoordFormat& fmt);

// First match of the format's pattern. Absent when nothing matches, when a
// value exceeds the range (or does not fit in 64 bits), or when a corner pair
// is out of order.
std::optional<QuantizedBBox> parse_bbox(std::string_view text,
                                        const CoordFormat& fmt);

std::string to_string(const BBox& b);

}  // namespace sctune

#endif  // SCTUNE_GEOMETRY_HPP_
