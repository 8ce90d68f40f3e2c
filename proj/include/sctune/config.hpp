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

// Run configuration: "key = value" lines with a config_version line.
//
// Resolution order is profile defaults, then the file, then command-line
// overrides. to_text() writes every key, so the echoed file reproduces the
// resolved configuration exactly.

#ifndef SCTUNE_CONFIG_HPP_
#define SCTUNE_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sctune/refgame.hpp"
#include "sctune/remote.hpp"
#include "sctune/trainer.hpp"

namespace sctune {

constexpr int kConfigVersion = 1;

struct DataConfig {
  uint64_t seed = 0;
  int train_size = 5000;
  int heldout_size = 500;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct RunConfig {
  std::string profile = "toy";
  SceneConfig scene;
  DataConfig data;
  PretrainConfig pretrain;
  TrainingSchedule schedule;
  // Template and pattern apply everywhere; the range applies to remote
  // endpoints, since the toy vocabulary fixes its own coordinate range.
  std::string coord_template{CoordFormat::kDefaultTemplate};
  std::string coord_pattern{CoordFormat::kDefaultPattern};
  int64_t coord_range = CoordFormat::kDefaultRange;
  // endpoint.fmt is filled from the coord fields by endpoint_config().
  EndpointConfig endpoint;

  // "toy" or "large". Throws ConfigError.
  static RunConfig profile_defaults(std::string_view name);

  // Applies one key. Throws ConfigError naming the key.
  void set(std::string_view key, std::string_view value);
  std::string to_text() const;
  // Checks every section. Throws ConfigError.
  void validate() const;

  // Throws ConfigError when template and pattern do not round-trip.
  CoordFormat coord_format(int64_t range) const;
  CoordFormat coord_format() const { return coord_format(coord_range); }
  EndpointConfig endpoint_config() const;
};

// Parses a config file body; "profile" (if present) must come before any
// other key because it resets the defaults.
RunConfig parse_config(std::string_view text, std::string_view source = "<config>");

// profile defaults < file (when non-empty) < overrides, in order.
RunConfig resolve_config(
    const std::string& file,
    const std::vector<std::pair<std::string, std::string>>& overrides,
    const std::string& profile = "");

// Every accepted key, in to_text() order.
std::vector<std::string> config_keys();

}  // namespace sctune

#endif  // SCTUNE_CONFIG_HPP_
