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

#include "sctune/geometry.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "sctune/kernels.hpp"

namespace sctune {

namespace {

constexpr std::array<std::string_view, 4> kSlots = {"{x1}", "{y1}", "{x2}",
                                                     "{y2}"};

size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  size_t n = 0;
  for (size_t pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::optional<int64_t> to_int(std::string_view s) {
  int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

bool BBox::valid() const {
  return 0.0 <= x_min && x_min <= x_max && x_max <= 1.0 && 0.0 <= y_min &&
         y_min <= y_max && y_max <= 1.0;
}

BBox make_bbox(double x_min, double y_min, double x_max, double y_max) {
  BBox b{x_min, y_min, x_max, y_max};
  if (!b.valid()) {
    throw std::invalid_argument("invalid box " + to_string(b));
  }
  return b;
}

bool QuantizedBBox::valid(int64_t range) const {
  return 0 <= x_min && x_min <= x_max && x_max <= range && 0 <= y_min &&
         y_min <= y_max && y_max <= range;
}

CoordFormat::CoordFormat()
    : CoordFormat(std::string(kDefaultTemplate), std::string(kDefaultPattern),
                  kDefaultRange) {}

CoordFormat::CoordFormat(std::string templ, std::string pattern,
                         int64_t range)
    : templ_(std::move(templ)), pattern_(std::move(pattern)), range_(range) {
  if (range_ < 1) throw std::invalid_argument("coordinate range must be >= 1");
  for (auto slot : kSlots) {
    if (count_occurrences(templ_, slot) != 1) {
      throw std::invalid_argument("coordinate template needs exactly one " +
                                  std::string(slot) + ": " + templ_);
    }
  }
  try {
    regex_ = std::regex(pattern_, std::regex::ECMAScript);
  } catch (const std::regex_error& e) {
    throw std::invalid_argument("bad coordinate pattern '" + pattern_ +
                                "': " + e.what());
  }
  if (regex_.mark_count() < 4) {
    throw std::invalid_argument(
        "coordinate pattern needs four capture groups: " + pattern_);
  }
  // A format whose template and pattern disagree would silently zero every
  // reward, so probe a few boxes now.
  const QuantizedBBox probes[] = {
      {0, 0, 0, 0}, {0, 0, range_, range_}, {1 % (range_ + 1), 0, range_, 1}};
  for (const auto& q : probes) {
    auto back = parse_bbox(serialize_bbox(q, *this), *this);
    if (!back || !(*back == q)) {
      throw std::invalid_argument("coordinate template '" + templ_ +
                                  "' does not round-trip through pattern '" +
                                  pattern_ + "'");
    }
  }
}

CoordFormat CoordFormat::with_range(int64_t range) const {
  return CoordFormat(templ_, pattern_, range);
}

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

void iou_batch(std::span<const BBox> a, std::span<const BBox> b,
               std::span<double> out) {
  kernels::iou_batch(a, b, out);
}

QuantizedBBox quantize(const BBox& b, int64_t range) {
  const auto r = static_cast<double>(range);
  auto q = [&](double v) {
    return std::clamp(static_cast<int64_t>(std::round(v * r)), int64_t{0},
                      range);
  };
  return {q(b.x_min), q(b.y_min), q(b.x_max), q(b.y_max)};
}

BBox dequantize(const QuantizedBBox& q, int64_t range) {
  const auto r = static_cast<double>(range);
  return {static_cast<double>(q.x_min) / r, static_cast<double>(q.y_min) / r,
          static_cast<double>(q.x_max) / r, static_cast<double>(q.y_max) / r};
}

std::string serialize_bbox(const QuantizedBBox& q, const CoordFormat& fmt) {
  std::string out = fmt.templ();
  const int64_t values[] = {q.x_min, q.y_min, q.x_max, q.y_max};
  for (size_t i = 0; i < kSlots.size(); ++i) {
    const auto pos = out.find(kSlots[i]);
    out.replace(pos, kSlots[i].size(), std::to_string(values[i]));
  }
  return out;
}

std::optional<QuantizedBBox> parse_bbox(std::string_view text,
                                        const CoordFormat& fmt) {
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(text.begin(), text.end(), m, fmt.regex())) {
    return std::nullopt;
  }
  int64_t v[4];
  for (int i = 0; i < 4; ++i) {
    const auto& g = m[i + 1];
    if (!g.matched || g.length() == 0) return std::nullopt;
    auto parsed = to_int(std::string_view(&*g.first, g.length()));
    if (!parsed) return std::nullopt;
    v[i] = *parsed;
  }
  QuantizedBBox q{v[0], v[1], v[2], v[3]};
  if (!q.valid(fmt.range())) return std::nullopt;
  return q;
}

std::string to_string(const BBox& b) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "[%.4f,%.4f,%.4f,%.4f]", b.x_min, b.y_min,
                b.x_max, b.y_max);
  return buf;
}

}  // namespace sctune
