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

#include "sctune/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sctune/config.hpp"
#include "sctune/errors.hpp"
#include "sctune/evalharness.hpp"

namespace sctune {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kCsvHeader =
    "run,mode,cycle_steps,switch,role,pr_at_05,rec_accuracy,mean_iou,"
    "initial_pr_at_05,initial_rec_accuracy";

std::string run_name(const std::string& dir) {
  fs::path p(dir);
  if (p.filename().empty()) p = p.parent_path();
  std::string name = p.filename().string();
  for (char& c : name) {
    if (c == ',' || c == '\n' || c == '\r') c = '_';
  }
  return name;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::vector<ReportRow> collect_report(const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw DataError("no run directories given");
  std::vector<ReportRow> rows;
  for (const auto& dir : run_dirs) {
    const fs::path metrics = fs::path(dir) / "metrics.jsonl";
    std::ifstream in(metrics);
    if (!in) throw DataError("missing " + metrics.string());
    std::string mode = "iterative";
    int cycle_steps = 0;
    const fs::path cfg_path = fs::path(dir) / "config.txt";
    if (fs::exists(cfg_path)) {
      std::ifstream cin(cfg_path);
      std::stringstream ss;
      ss << cin.rdbuf();
      try {
        const RunConfig cfg = parse_config(ss.str(), cfg_path.string());
        mode = mode_name(cfg.schedule.mode);
        cycle_steps = cfg.schedule.H;
      } catch (const ConfigError& e) {
        throw DataError(e.what());
      }
    }
    const std::string name = run_name(dir);
    std::vector<ReportRow> run_rows;
    double init_pr = 0.0, init_rec = 0.0;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const json j = json::parse(line);
        if (j.value("event", "") != "eval") continue;
        const int stage = j.at("stage").get<int>();
        if (stage < 0) {
          init_pr = round_pct(j.at("pr_at_05").get<double>());
          init_rec = round_pct(j.at("rec_accuracy").get<double>());
          continue;
        }
        ReportRow r;
        r.run = name;
        r.mode = mode;
        r.cycle_steps = cycle_steps;
        r.switch_index = stage + 1;
        r.role = j.at("role").get<std::string>();
        r.pr_at_05 = round_pct(j.at("pr_at_05").get<double>());
        r.rec_accuracy = round_pct(j.at("rec_accuracy").get<double>());
        r.mean_iou = round_iou(j.at("mean_iou").get<double>());
        run_rows.push_back(r);
      } catch (const json::exception& e) {
        throw DataError(metrics.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (run_rows.empty()) throw DataError(metrics.string() + ": no evaluations recorded");
    for (auto& r : run_rows) {
      r.initial_pr_at_05 = init_pr;
      r.initial_rec_accuracy = init_rec;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::string report_table(const std::vector<ReportRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %-15s %6s %6s %-9s %8s %8s %8s %8s %8s\n", "run",
                "mode", "H", "switch", "role", "pr@0.5", "rec", "iou", "pr@0.5_0", "rec_0");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %-15s %6d %6d %-9s %8.1f %8.1f %8.4f %8.1f %8.1f\n",
                  r.run.c_str(), r.mode.c_str(), r.cycle_steps, r.switch_index,
                  r.role.c_str(), r.pr_at_05, r.rec_accuracy, r.mean_iou,
                  r.initial_pr_at_05, r.initial_rec_accuracy);
    out += buf;
  }
  return out;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += r.run + "," + r.mode + "," + std::to_string(r.cycle_steps) + "," +
           std::to_string(r.switch_index) + "," + r.role + "," +
           fixed(r.pr_at_05, 1) + "," + fixed(r.rec_accuracy, 1) + "," +
           fixed(r.mean_iou, 4) + "," + fixed(r.initial_pr_at_05, 1) + "," +
           fixed(r.initial_rec_accuracy, 1) + "\n";
  }
  return out;
}

std::vector<ReportRow> report_from_csv(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw DataError("report CSV: unexpected header");
  }
  std::vector<ReportRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 10) {
      throw DataError("report CSV line " + std::to_string(lineno) + ": expected 10 fields");
    }
    try {
      ReportRow r;
      r.run = f[0];
      r.mode = f[1];
      r.cycle_steps = std::stoi(f[2]);
      r.switch_index = std::stoi(f[3]);
      r.role = f[4];
      r.pr_at_05 = std::stod(f[5]);
      r.rec_accuracy = std::stod(f[6]);
      r.mean_iou = std::stod(f[7]);
      r.initial_pr_at_05 = std::stod(f[8]);
      r.initial_rec_accuracy = std::stod(f[9]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw DataError("report CSV line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

}  // namespace sctune
