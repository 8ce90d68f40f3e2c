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

// Per-switch trajectories gathered from training run directories.

#ifndef SCTUNE_REPORT_HPP_
#define SCTUNE_REPORT_HPP_

#include <string>
#include <string_view>
#include <vector>

namespace sctune {

struct ReportRow {
  std::string run;
  std::string mode;
  int cycle_steps = 0;
  int switch_index = 0;
  std::string role;
  double pr_at_05 = 0.0;
  double rec_accuracy = 0.0;
  double mean_iou = 0.0;
  // Before training; repeated on every row of a run.
  double initial_pr_at_05 = 0.0;
  double initial_rec_accuracy = 0.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

// Reads <dir>/metrics.jsonl and <dir>/config.txt for each run. Throws
// DataError when a directory has no metrics or no evaluations.
std::vector<ReportRow> collect_report(const std::vector<std::string>& run_dirs);

// One header line, then one line per row; the last two columns are the
// pre-training values.
std::string report_table(const std::vector<ReportRow>& rows);
std::string report_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> report_from_csv(std::string_view csv);

}  // namespace sctune

#endif  // SCTUNE_REPORT_HPP_
