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

#include "sctune/config.hpp"

#include <charconv>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "sctune/errors.hpp"

namespace sctune {

namespace {

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return "";
  const auto z = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, z - a + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key " + std::string(key) + ": cannot parse '" +
                      std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + std::string(key) + ": expected true or false");
}

TrainMode parse_mode(std::string_view v) {
  if (v == "iterative") return TrainMode::kIterative;
  if (v == "describer-only") return TrainMode::kDescriberOnly;
  if (v == "locator-only") return TrainMode::kLocatorOnly;
  throw ConfigError("config key schedule.mode: expected iterative, "
                    "describer-only or locator-only");
}

// Shortest text that reads back to the same value.
std::string fmt_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view)> set;
};

#define INT_KEY(NAME, FIELD)                                              \
  Key {                                                                   \
    NAME, [](const RunConfig& c) { return std::to_string(c.FIELD); },     \
        [](RunConfig& c, std::string_view k, std::string_view v) {        \
          c.FIELD = parse_number<decltype(c.FIELD)>(k, v);                \
        }                                                                 \
  }
#define DOUBLE_KEY(NAME, FIELD)                                           \
  Key {                                                                   \
    NAME, [](const RunConfig& c) { return fmt_double(c.FIELD); },         \
        [](RunConfig& c, std::string_view k, std::string_view v) {        \
          c.FIELD = parse_number<double>(k, v);                           \
        }                                                                 \
  }
#define STRING_KEY(NAME, FIELD)                                           \
  Key {                                                                   \
    NAME, [](const RunConfig& c) { return c.FIELD; },                     \
        [](RunConfig& c, std::string_view, std::string_view v) {          \
          c.FIELD = std::string(v);                                       \
        }                                                                 \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      INT_KEY("scene.grid", scene.grid),
      INT_KEY("scene.min_objects", scene.min_objects),
      INT_KEY("scene.max_objects", scene.max_objects),
      INT_KEY("scene.num_categories", scene.num_categories),
      INT_KEY("scene.num_colors", scene.num_colors),
      INT_KEY("scene.num_sizes", scene.num_sizes),
      INT_KEY("scene.max_attempts", scene.max_attempts),
      INT_KEY("data.seed", data.seed),
      INT_KEY("data.train_size", data.train_size),
      INT_KEY("data.heldout_size", data.heldout_size),
      INT_KEY("pretrain.max_steps", pretrain.max_steps),
      INT_KEY("pretrain.batch_size", pretrain.batch_size),
      DOUBLE_KEY("pretrain.lr", pretrain.lr),
      DOUBLE_KEY("pretrain.caption_noise", pretrain.caption_noise),
      INT_KEY("pretrain.seed", pretrain.seed),
      INT_KEY("pretrain.eval_every", pretrain.eval_every),
      DOUBLE_KEY("pretrain.target_lo", pretrain.target_lo),
      DOUBLE_KEY("pretrain.target_hi", pretrain.target_hi),
      INT_KEY("pretrain.validation_size", pretrain.validation_size),
      INT_KEY("schedule.H", schedule.H),
      INT_KEY("schedule.num_switches", schedule.num_switches),
      INT_KEY("schedule.batch_size", schedule.batch_size),
      DOUBLE_KEY("schedule.lr_describer", schedule.lr_describer),
      DOUBLE_KEY("schedule.lr_locator", schedule.lr_locator),
      DOUBLE_KEY("schedule.weight_decay", schedule.weight_decay),
      DOUBLE_KEY("schedule.sup_mix_ratio", schedule.sup_mix_ratio),
      INT_KEY("schedule.seed", schedule.seed),
      Key{"schedule.ref_per_stage",
          [](const RunConfig& c) {
            return std::string(c.schedule.ref_per_stage ? "true" : "false");
          },
          [](RunConfig& c, std::string_view k, std::string_view v) {
            c.schedule.ref_per_stage = parse_bool(k, v);
          }},
      DOUBLE_KEY("schedule.max_grad_norm", schedule.max_grad_norm),
      Key{"schedule.mode",
          [](const RunConfig& c) { return std::string(mode_name(c.schedule.mode)); },
          [](RunConfig& c, std::string_view, std::string_view v) {
            c.schedule.mode = parse_mode(v);
          }},
      DOUBLE_KEY("ppo.epsilon", schedule.ppo.epsilon),
      DOUBLE_KEY("ppo.beta", schedule.ppo.beta),
      INT_KEY("ppo.epochs", schedule.ppo.ppo_epochs),
      STRING_KEY("coord.template", coord_template),
      STRING_KEY("coord.pattern", coord_pattern),
      INT_KEY("coord.range", coord_range),
      STRING_KEY("endpoint.base_url", endpoint.base_url),
      STRING_KEY("endpoint.path", endpoint.path),
      STRING_KEY("endpoint.model", endpoint.model),
      STRING_KEY("endpoint.auth_env", endpoint.auth_env),
      STRING_KEY("endpoint.reg_template", endpoint.reg_template),
      STRING_KEY("endpoint.rec_template", endpoint.rec_template),
      DOUBLE_KEY("endpoint.timeout_s", endpoint.timeout_s),
      INT_KEY("endpoint.max_retries", endpoint.max_retries),
      INT_KEY("endpoint.backoff_ms", endpoint.backoff_ms),
      INT_KEY("endpoint.max_concurrent", endpoint.max_concurrent),
  };
  return keys;
}

#undef INT_KEY
#undef DOUBLE_KEY
#undef STRING_KEY

bool looks_like_secret(std::string_view key) {
  for (const char* w : {"token", "api_key", "apikey", "password", "secret"}) {
    if (key.find(w) != std::string_view::npos && key != "endpoint.auth_env") return true;
  }
  return false;
}

struct Line {
  size_t lineno;
  std::string key;
  std::string value;
};

std::vector<Line> split_lines(std::string_view text, std::string_view source) {
  std::vector<Line> out;
  size_t pos = 0, lineno = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(source) + ":" + std::to_string(lineno) +
                        ": expected key = value");
    }
    out.push_back({lineno, trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }
  return out;
}

void apply_lines(RunConfig& c, const std::vector<Line>& lines,
                 std::string_view source) {
  for (const auto& l : lines) {
    if (l.key == "config_version" || l.key == "profile") continue;
    try {
      c.set(l.key, l.value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(source) + ":" + std::to_string(l.lineno) +
                        ": " + e.what());
    }
  }
}

// Returns the file's profile, or "" when it has none.
std::string check_header(const std::vector<Line>& lines, std::string_view source) {
  bool versioned = false;
  std::string profile;
  for (size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    const std::string where = std::string(source) + ":" + std::to_string(l.lineno);
    if (l.key == "config_version") {
      if (l.value != std::to_string(kConfigVersion)) {
        throw ConfigError(where + ": unsupported config_version " + l.value);
      }
      versioned = true;
    } else if (l.key == "profile") {
      for (size_t k = 0; k < i; ++k) {
        if (lines[k].key != "config_version") {
          throw ConfigError(where + ": profile must precede other keys");
        }
      }
      profile = l.value;
    }
  }
  if (!versioned) throw ConfigError(std::string(source) + ": missing config_version");
  return profile;
}

}  // namespace

RunConfig RunConfig::profile_defaults(std::string_view name) {
  RunConfig c;
  if (name == "toy") {
    c.profile = "toy";
  } else if (name == "large") {
    c.profile = "large";
    const PPOConfig ppo = c.schedule.ppo;
    c.schedule = TrainingSchedule::large_profile();
    c.schedule.ppo.epsilon = ppo.epsilon;
  } else {
    throw ConfigError("unknown profile '" + std::string(name) +
                      "' (expected toy or large)");
  }
  return c;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  if (looks_like_secret(key)) {
    throw ConfigError("config key " + std::string(key) +
                      ": credentials are not accepted in config; put the "
                      "token in an environment variable and name it in "
                      "endpoint.auth_env");
  }
  for (const auto& k : key_table()) {
    if (key == k.name) {
      k.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::string out = "config_version = " + std::to_string(kConfigVersion) + "\n";
  out += "profile = " + profile + "\n";
  for (const auto& k : key_table()) {
    out += std::string(k.name) + " = " + k.get(*this) + "\n";
  }
  return out;
}

CoordFormat RunConfig::coord_format(int64_t range) const {
  try {
    return CoordFormat(coord_template, coord_pattern, range);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("coord format: ") + e.what());
  }
}

EndpointConfig RunConfig::endpoint_config() const {
  EndpointConfig e = endpoint;
  e.fmt = coord_format();
  return e;
}

void RunConfig::validate() const {
  try {
    scene.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  schedule.validate();
  coord_format();
  if (data.train_size < 1) throw ConfigError("data.train_size must be >= 1");
  if (data.heldout_size < 0) throw ConfigError("data.heldout_size must be >= 0");
  if (pretrain.max_steps < 1 || pretrain.batch_size < 1 || pretrain.eval_every < 1 ||
      pretrain.validation_size < 1) {
    throw ConfigError("pretrain: step counts and sizes must be >= 1");
  }
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr must be > 0");
  if (!(pretrain.caption_noise >= 0.0 && pretrain.caption_noise <= 1.0)) {
    throw ConfigError("pretrain.caption_noise must be in [0, 1]");
  }
}

RunConfig parse_config(std::string_view text, std::string_view source) {
  const auto lines = split_lines(text, source);
  const std::string profile = check_header(lines, source);
  RunConfig c = RunConfig::profile_defaults(profile.empty() ? "toy" : profile);
  apply_lines(c, lines, source);
  return c;
}

RunConfig resolve_config(
    const std::string& file,
    const std::vector<std::pair<std::string, std::string>>& overrides,
    const std::string& profile) {
  std::vector<Line> lines;
  std::string file_profile;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file: " + file);
    std::stringstream ss;
    ss << in.rdbuf();
    lines = split_lines(ss.str(), file);
    file_profile = check_header(lines, file);
  }
  const std::string chosen =
      !profile.empty() ? profile : (!file_profile.empty() ? file_profile : "toy");
  RunConfig c = RunConfig::profile_defaults(chosen);
  apply_lines(c, lines, file);
  for (const auto& [k, v] : overrides) c.set(k, v);
  c.validate();
  return c;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

}  // namespace sctune
