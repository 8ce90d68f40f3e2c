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

// sctune command-line tool. Exit codes: 0 success, 1 usage or configuration
// error, 2 data error, 3 runtime abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sctune/config.hpp"
#include "sctune/dataprep.hpp"
#include "sctune/errors.hpp"
#include "sctune/evalharness.hpp"
#include "sctune/kernels.hpp"
#include "sctune/policy.hpp"
#include "sctune/refgame.hpp"
#include "sctune/remote.hpp"
#include "sctune/report.hpp"
#include "sctune/trainer.hpp"

namespace fs = std::filesystem;
using namespace sctune;

namespace {

struct Common {
  std::string config_file;
  std::string profile;
  std::vector<std::string> sets;
  int jobs = 0;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

RunConfig resolve(const Common& c, const Overrides& flags) {
  Overrides all;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string v) {
      const auto a = v.find_first_not_of(" \t");
      const auto z = v.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : v.substr(a, z - a + 1);
    };
    all.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  all.insert(all.end(), flags.begin(), flags.end());
  return resolve_config(c.config_file, all, c.profile);
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round_pct(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Rejects a checkpoint built for a different scene layout.
void check_compatible(const Checkpoint& c, const SceneConfig& scene,
                      const std::string& path) {
  const Vocabulary v = Vocabulary::for_scene(scene);
  if (!(c.vocab == v)) {
    throw DataError(path + ": checkpoint vocabulary (" + std::to_string(c.vocab.size()) +
                    " tokens, coordinate range " + std::to_string(c.vocab.coord_range()) +
                    ") does not match the dataset's (" + std::to_string(v.size()) +
                    " tokens, coordinate range " + std::to_string(v.coord_range()) + ")");
  }
  if (c.kind == "network" &&
      (c.arch.grid != scene.grid || c.arch.channels != scene.channels())) {
    throw DataError(path + ": checkpoint architecture expects a " +
                    std::to_string(c.arch.grid) + "x" + std::to_string(c.arch.grid) +
                    " grid with " + std::to_string(c.arch.channels) +
                    " channels; the dataset has " + std::to_string(scene.grid) + "x" +
                    std::to_string(scene.grid) + " with " +
                    std::to_string(scene.channels()) + "");
  }
}

// The role's network, falling back to a single shared "policy" network.
PolicyNetwork network_for(const Checkpoint& c, const std::string& role,
                          const std::string& path) {
  if (c.find(role)) return c.network(role);
  if (c.find("policy")) return c.network("policy");
  throw DataError(path + ": checkpoint has neither a '" + role +
                  "' nor a 'policy' network");
}

Checkpoint policy_checkpoint(const PolicyNetwork& p) {
  Checkpoint c;
  c.arch = p.arch();
  c.vocab = p.vocab();
  c.networks = {{"policy", {p.params().begin(), p.params().end()}}};
  return c;
}

// --- commands ---------------------------------------------------------------

struct GenDataArgs {
  std::string out;
};

int cmd_gen_data(const Common& common, const Overrides& flags, const GenDataArgs& a) {
  const RunConfig cfg = resolve(common, flags);
  const Dataset d = make_dataset(cfg.data.seed, static_cast<size_t>(cfg.data.train_size),
                                 cfg.scene, static_cast<size_t>(cfg.data.heldout_size));
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_dataset(d, a.out);
  std::cout << "wrote " << d.train.size() << " train and " << d.heldout.size()
            << " held-out units to " << a.out << "\n";
  return 0;
}

struct PretrainArgs {
  std::string data, out;
};

int cmd_pretrain(const Common& common, const Overrides& flags, const PretrainArgs& a) {
  const RunConfig cfg = resolve(common, flags);
  const Dataset d = load_dataset(a.data);
  const Vocabulary v = Vocabulary::for_scene(d.config);
  const CoordFormat fmt = cfg.coord_format(v.coord_range());
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt", cfg.to_text());
  const PretrainResult r = pretrain(d, cfg.pretrain, fmt, log_line);
  save_checkpoint(policy_checkpoint(r.network), (fs::path(a.out) / "init.ckpt").string());
  const nlohmann::json j = {{"steps", r.steps},
                            {"validation_pr_at_05", round_pct(r.validation_pr)},
                            {"validation_rec_accuracy", round_pct(r.validation_rec)},
                            {"in_band", r.in_band}};
  write_text(fs::path(a.out) / "pretrain.json", j.dump(2) + "\n");
  std::cout << "pretrained " << r.steps << " steps; validation Pr@0.5 "
            << pct(r.validation_pr) << ", REC " << pct(r.validation_rec)
            << "\n";
  if (!r.in_band) {
    std::cerr << "warning: validation Pr@0.5 did not reach the target band ["
              << cfg.pretrain.target_lo << ", " << cfg.pretrain.target_hi << "]\n";
  }
  return 0;
}

struct TrainArgs {
  std::string data, init, out;
  bool freeze_locator = false, freeze_describer = false;
  int total_steps = 0;
  int eval_units = 0;
};

int cmd_train(const Common& common, Overrides flags, const TrainArgs& a) {
  if (a.freeze_locator && a.freeze_describer) {
    throw ConfigError("--freeze-locator and --freeze-describer are exclusive");
  }
  if (a.freeze_locator) flags.emplace_back("schedule.mode", "describer-only");
  if (a.freeze_describer) flags.emplace_back("schedule.mode", "locator-only");
  RunConfig cfg = resolve(common, flags);
  if (a.total_steps > 0) {
    if (a.total_steps % cfg.schedule.H != 0) {
      throw ConfigError("--total-steps " + std::to_string(a.total_steps) +
                        " is not a multiple of the cycle length " +
                        std::to_string(cfg.schedule.H));
    }
    cfg.schedule.num_switches = a.total_steps / cfg.schedule.H;
    cfg.validate();
  }
  const Dataset d = load_dataset(a.data);
  const Checkpoint ck = load_checkpoint(a.init);
  if (ck.kind != "network") throw DataError(a.init + ": not a network checkpoint");
  check_compatible(ck, d.config, a.init);
  const PolicyNetwork init = network_for(ck, "describer", a.init);
  std::vector<Unit> eval_units = d.heldout;
  if (a.eval_units > 0 && static_cast<size_t>(a.eval_units) < eval_units.size()) {
    eval_units.resize(static_cast<size_t>(a.eval_units));
  }
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt", cfg.to_text());
  RunOptions opts;
  opts.out_dir = a.out;
  opts.eval_units = eval_units.empty() ? nullptr : &eval_units;
  opts.fmt = cfg.coord_format(init.vocab().coord_range());
  opts.log = log_line;
  const RunResult r = run_sc_tune(init, d, cfg.schedule, opts);
  if (r.initial_eval && !r.evals.empty()) {
    std::cout << "held-out Pr@0.5 " << pct(r.initial_eval->pr_at_05) << " -> "
              << pct(r.evals.back().pr_at_05) << "; REC "
              << pct(r.initial_eval->rec_accuracy) << " -> "
              << pct(r.evals.back().rec_accuracy) << "\n";
  }
  std::cout << "wrote " << r.evals.size() << " checkpoints to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, describer, locator, data, mode = "self-consistency";
  std::string split = "heldout", out;
  int limit = 0;
};

int cmd_eval(const Common& common, const Overrides& flags, const EvalArgs& a) {
  const RunConfig cfg = resolve(common, flags);
  const std::string dpath = a.describer.empty() ? a.checkpoint : a.describer;
  const std::string lpath = a.locator.empty() ? a.checkpoint : a.locator;
  if (lpath.empty() || (a.mode == "self-consistency" && dpath.empty())) {
    throw ConfigError("give --checkpoint, or --describer and --locator");
  }
  const Dataset d = load_dataset(a.data);
  std::vector<Unit> units = a.split == "train" ? d.train : d.heldout;
  if (a.limit > 0 && static_cast<size_t>(a.limit) < units.size()) {
    units.resize(static_cast<size_t>(a.limit));
  }
  if (units.empty()) throw DataError(a.data + ": the " + a.split + " split is empty");
  const Vocabulary v = Vocabulary::for_scene(d.config);
  const CoordFormat fmt = cfg.coord_format(v.coord_range());

  // Networks must outlive the std::function wrappers that reference them.
  std::vector<std::unique_ptr<PolicyNetwork>> keep;
  auto load_role = [&](const std::string& path, const std::string& role, auto oracle,
                       auto network) {
    const Checkpoint c = load_checkpoint(path);
    check_compatible(c, d.config, path);
    if (c.kind == "oracle") return oracle(v);
    keep.push_back(std::make_unique<PolicyNetwork>(network_for(c, role, path)));
    return network(*keep.back(), d.config);
  };
  const LocateFn locate = load_role(lpath, "locator", oracle_locator, network_locator);

  EvalResult r;
  if (a.mode == "self-consistency") {
    const DescribeFn describe =
        load_role(dpath, "describer", oracle_describer, network_describer);
    r = self_consistency_eval(describe, locate, units, v, fmt);
    std::cout << "Pr@0.5 = " << pct(r.summary.pr_at_05.value_or(0.0)) << " over "
              << r.summary.n << " units\n";
  } else {
    r = rec_accuracy(locate, labeled_items(units, v), v, fmt);
    std::cout << "REC accuracy = " << pct(r.summary.pr_at_05.value_or(0.0))
              << " over " << r.summary.n << " units\n";
  }
  if (!a.out.empty()) {
    write_report(r.summary, r.records, a.out);
    write_text(fs::path(a.out) / "config.txt", cfg.to_text());
  }
  return 0;
}

struct RemoteArgs {
  std::string annotations, format = "coco", images, out;
  size_t units = 4000;
  uint64_t sample_seed = 0;
  bool resume = false;
};

int cmd_eval_remote(const Common& common, const Overrides& flags, const RemoteArgs& a) {
  const RunConfig cfg = resolve(common, flags);
  const EndpointConfig ep = cfg.endpoint_config();
  ep.validate();
  const AnnotationSet set = load_annotations(a.annotations, parse_annotation_format(a.format));
  for (const auto& w : set.warnings) std::cerr << "warning: " << w << "\n";
  const auto units = sample_remote_units(set, a.units, a.sample_seed, a.images);
  if (units.empty()) throw DataError(a.annotations + ": no annotated boxes to evaluate");
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt", cfg.to_text());
  RemoteOptions opts;
  opts.audit_path = (fs::path(a.out) / "audit.jsonl").string();
  opts.resume = a.resume;
  opts.log = log_line;
  RemoteRunStats stats;
  const EvalResult r = remote_cycle_eval(ep, units, opts, &stats);
  write_report(r.summary, r.records, a.out);
  size_t errors = 0;
  for (const auto& rec : r.records) errors += rec.error.empty() ? 0 : 1;
  std::cout << "Pr@0.5 = " << pct(r.summary.pr_at_05.value_or(0.0)) << " over "
            << r.summary.n << " units (" << stats.requests_sent << " requests sent, "
            << stats.exchanges_replayed << " replayed from the audit log)\n";
  if (errors > 0) {
    std::cerr << "warning: " << errors << " of " << r.records.size()
              << " units failed to complete; they are scored as misses\n";
  }
  return 0;
}

struct FilterArgs {
  std::string input, format = "coco", exclude, out;
};

int cmd_filter(const FilterArgs& a) {
  const AnnotationSet set = load_annotations(a.input, parse_annotation_format(a.format));
  for (const auto& w : set.warnings) std::cerr << "warning: " << w << "\n";
  std::set<int64_t> exclude;
  if (!a.exclude.empty()) exclude = load_exclusions(a.exclude);
  const FilterResult r = filter_annotations(set, exclude);
  if (!a.out.empty()) export_triplets(r.triplets, a.out);
  nlohmann::json stats = nlohmann::json::parse(stats_json(r.stats));
  stats["records_rejected"] = set.warnings.size();
  std::cout << stats.dump(2) << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string csv;
};

int cmd_report(const ReportArgs& a) {
  std::vector<std::string> dirs;
  for (const auto& r : a.runs) {
    if (!fs::is_directory(r)) throw DataError("not a run directory: " + r);
    if (fs::exists(fs::path(r) / "metrics.jsonl")) {
      dirs.push_back(r);
      continue;
    }
    // A parent of several runs.
    std::vector<std::string> children;
    for (const auto& e : fs::directory_iterator(r)) {
      if (e.is_directory() && fs::exists(e.path() / "metrics.jsonl")) {
        children.push_back(e.path().string());
      }
    }
    if (children.empty()) throw DataError(r + ": no metrics.jsonl found");
    std::sort(children.begin(), children.end());
    dirs.insert(dirs.end(), children.begin(), children.end());
  }
  const auto rows = collect_report(dirs);
  std::cout << report_table(rows);
  if (!a.csv.empty()) write_text(a.csv, report_csv(rows));
  return 0;
}

struct StubArgs {
  std::string script, host = "127.0.0.1";
  int port = 8089;
};

int cmd_stub_server(const StubArgs& a) {
  StubServer server(StubScript::load(a.script));
  std::cerr << "stub server listening on " << a.host << ":" << a.port << std::endl;
  server.listen_blocking(a.host, a.port);
  return 0;
}

int cmd_oracle_checkpoint(const Common& common, const Overrides& flags,
                          const std::string& out, const std::string& data) {
  const RunConfig cfg = resolve(common, flags);
  const SceneConfig scene = data.empty() ? cfg.scene : load_dataset(data).config;
  Checkpoint c;
  c.kind = "oracle";
  c.vocab = Vocabulary::for_scene(scene);
  c.arch = Architecture::for_scene(scene, c.vocab);
  save_checkpoint(c, out);
  std::cout << "wrote oracle checkpoint " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sctune: cyclic describer/locator tuning on a synthetic referential game"};
  app.require_subcommand(1);
  // Global flags may also follow the subcommand.
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_file, "Config file (key = value lines)");
  app.add_option("--profile", common.profile, "Default profile: toy or large");
  app.add_option("--set", common.sets, "Override one config key (key=value); repeatable");
  app.add_option("--jobs", common.jobs, "Worker threads for parallel kernels (0 = default)")
      ->check(CLI::NonNegativeNumber);

  Overrides flags;
  auto key_flag = [&flags](CLI::App* sub, const std::string& name, const std::string& key,
                           const std::string& help) {
    sub->add_option_function<std::string>(
        name, [&flags, key](const std::string& v) { flags.emplace_back(key, v); }, help);
  };

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  gen_cmd->add_option("--out", gen.out, "Output dataset file (JSONL)")->required();
  key_flag(gen_cmd, "--train-size", "data.train_size", "Training units");
  key_flag(gen_cmd, "--heldout-size", "data.heldout_size", "Held-out units");
  key_flag(gen_cmd, "--data-seed", "data.seed", "Dataset seed");

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Supervised warm start for both roles");
  pre_cmd->add_option("--data", pre.data, "Dataset file")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  key_flag(pre_cmd, "--steps", "pretrain.max_steps", "Maximum warm-start steps");
  key_flag(pre_cmd, "--seed", "pretrain.seed", "Warm-start seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run the cyclic describer/locator schedule");
  train_cmd->add_option("--data", train.data, "Dataset file")->required();
  train_cmd->add_option("--init", train.init, "Initial checkpoint")->required();
  train_cmd->add_option("--out", train.out, "Run directory")->required();
  train_cmd->add_flag("--freeze-locator", train.freeze_locator,
                      "Train only the describer (locator stays at the initialization)");
  train_cmd->add_flag("--freeze-describer", train.freeze_describer,
                      "Train only the locator (describer stays at the initialization)");
  key_flag(train_cmd, "--cycle-steps", "schedule.H", "Steps per stage (H)");
  key_flag(train_cmd, "--switches", "schedule.num_switches", "Number of stages");
  train_cmd->add_option("--total-steps", train.total_steps,
                        "Total update steps; sets the number of stages to total / H");
  key_flag(train_cmd, "--seed", "schedule.seed", "Training seed");
  train_cmd
      ->add_option_function<std::string>(
          "--sup-mix",
          [&flags](const std::string& v) { flags.emplace_back("schedule.sup_mix_ratio", v); },
          "Mix labeled examples into locator batches at this fraction (0.5 if no value)")
      ->expected(0, 1)
      ->default_str("0.5");
  train_cmd->add_option("--eval-units", train.eval_units,
                        "Held-out units used for per-stage evaluation (0 = all)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate checkpoints on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint supplying both roles");
  eval_cmd->add_option("--describer", ev.describer, "Describer checkpoint");
  eval_cmd->add_option("--locator", ev.locator, "Locator checkpoint");
  eval_cmd->add_option("--data", ev.data, "Dataset file")->required();
  eval_cmd->add_option("--mode", ev.mode, "self-consistency or rec")
      ->check(CLI::IsMember({"self-consistency", "rec"}));
  eval_cmd->add_option("--split", ev.split, "heldout or train")
      ->check(CLI::IsMember({"heldout", "train"}));
  eval_cmd->add_option("--limit", ev.limit, "Evaluate only the first N units");
  eval_cmd->add_option("--out", ev.out, "Report directory");

  RemoteArgs rem;
  auto* rem_cmd = app.add_subcommand("eval-remote", "Self-consistency audit of a remote endpoint");
  rem_cmd->add_option("--annotations", rem.annotations, "Annotation file")->required();
  rem_cmd->add_option("--format", rem.format, "coco or tsv");
  rem_cmd->add_option("--images", rem.images, "Directory holding the image files");
  rem_cmd->add_option("--units", rem.units, "Boxes to sample, one per image");
  rem_cmd->add_option("--sample-seed", rem.sample_seed, "Sampling seed");
  rem_cmd->add_option("--out", rem.out, "Report directory (audit log goes here)")->required();
  rem_cmd->add_flag("--resume", rem.resume, "Replay exchanges already in the audit log");
  key_flag(rem_cmd, "--endpoint", "endpoint.base_url", "Endpoint base URL");
  key_flag(rem_cmd, "--concurrency", "endpoint.max_concurrent", "Requests in flight");

  FilterArgs filt;
  auto* filt_cmd = app.add_subcommand("filter", "Filter detection annotations into triplets");
  filt_cmd->add_option("--input", filt.input, "Annotation file")->required();
  filt_cmd->add_option("--format", filt.format, "coco or tsv");
  filt_cmd->add_option("--exclude", filt.exclude, "File of image ids to drop first");
  filt_cmd->add_option("--out", filt.out, "Output triplet file (JSONL)");

  ReportArgs rep;
  auto* rep_cmd = app.add_subcommand("report", "Tabulate per-switch metrics of training runs");
  rep_cmd->add_option("runs", rep.runs, "Run directories, or a parent of run directories")
      ->required();
  rep_cmd->add_option("--csv", rep.csv, "Also write the table as CSV");

  StubArgs stub;
  auto* stub_cmd = app.add_subcommand("stub-server", "Serve a scripted chat-completion endpoint");
  stub_cmd->add_option("--script", stub.script, "Stub script (JSON)")->required();
  stub_cmd->add_option("--host", stub.host, "Bind address");
  stub_cmd->add_option("--port", stub.port, "Port");

  std::string oracle_out, oracle_data;
  auto* oracle_cmd = app.add_subcommand("oracle-checkpoint",
                                        "Write a lossless oracle describer/locator checkpoint");
  oracle_cmd->add_option("--out", oracle_out, "Output checkpoint")->required();
  oracle_cmd->add_option("--data", oracle_data, "Take the scene layout from this dataset");

  auto* show_cmd = app.add_subcommand("show-config", "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (common.jobs > 0) kernels::set_num_threads(common.jobs);
    if (gen_cmd->parsed()) return cmd_gen_data(common, flags, gen);
    if (pre_cmd->parsed()) return cmd_pretrain(common, flags, pre);
    if (train_cmd->parsed()) return cmd_train(common, flags, train);
    if (eval_cmd->parsed()) return cmd_eval(common, flags, ev);
    if (rem_cmd->parsed()) return cmd_eval_remote(common, flags, rem);
    if (filt_cmd->parsed()) return cmd_filter(filt);
    if (rep_cmd->parsed()) return cmd_report(rep);
    if (stub_cmd->parsed()) return cmd_stub_server(stub);
    if (oracle_cmd->parsed()) return cmd_oracle_checkpoint(common, flags, oracle_out, oracle_data);
    if (show_cmd->parsed()) {
      std::cout << resolve(common, flags).to_text();
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const RuntimeAbort& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
