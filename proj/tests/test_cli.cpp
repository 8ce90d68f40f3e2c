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


// Runs the command-line binary as a subprocess.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>

#include "sctune/dataprep.hpp"
#include "sctune/evalharness.hpp"
#include "sctune/policy.hpp"
#include "sctune/report.hpp"
#include "sctune/remote.hpp"
#include "test_util.hpp"

namespace sctune {
namespace {

const std::string kCli = SCTUNE_CLI;
const std::string kFixtures = SCTUNE_FIXTURE_DIR;

struct CliRun {
  int code = -1;
  std::string out;
};

// stdout and stderr together.
CliRun cli(const std::string& args) {
  CliRun r;
  FILE* p = ::popen((kCli + " " + args + " 2>&1").c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

#define EXPECT_EXIT_CODE(run, expected) \
  EXPECT_EQ((run).code, expected) << (run).out

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("sctune-cli");
    data_ = dir_->file("data.bin");
    const CliRun r = cli("gen-data --out " + data_ + " --heldout-size 200");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string train_tiny(const std::string& name, const std::string& extra = "",
                                const std::string& schedule =
                                    "--switches 2 --cycle-steps 5 --eval-units 50") {
    const std::string out = dir_->file(name);
    const CliRun r = cli("train --data " + data_ + " --init " + kFixtures +
                      "/pretrained_toy.ckpt --out " + out + " " + schedule + " " + extra);
    EXPECT_EQ(r.code, 0) << r.out;
    return out;
  }

  static testing::TempDir* dir_;
  static std::string data_;
};

testing::TempDir* CliTest::dir_ = nullptr;
std::string CliTest::data_;

TEST_F(CliTest, UsageErrors) {
  EXPECT_EXIT_CODE(cli("--help"), 0);
  EXPECT_EXIT_CODE(cli(""), 1);
  EXPECT_EXIT_CODE(cli("bogus"), 1);
  EXPECT_EXIT_CODE(cli("eval --nope"), 1);
  EXPECT_EXIT_CODE(cli("show-config --set schedule.H=0"), 1);
  EXPECT_EXIT_CODE(cli("show-config --set schedule.nothing=1"), 1);
  const CliRun secret = cli("show-config --set endpoint.token=abc");
  EXPECT_EXIT_CODE(secret, 1);
  EXPECT_NE(secret.out.find("environment variable"), std::string::npos) << secret.out;
}

TEST_F(CliTest, ShowConfigPrecedence) {
  testing::write_file(dir_->file("c.txt"), "config_version = 1\nschedule.H = 20\nppo.beta = 0.5\n");
  const CliRun r = cli("--config " + dir_->file("c.txt") +
                    " show-config --set ppo.beta=0.25 --set schedule.num_switches=4");
  EXPECT_EXIT_CODE(r, 0);
  EXPECT_NE(r.out.find("schedule.H = 20\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("ppo.beta = 0.25\n"), std::string::npos);
  EXPECT_NE(r.out.find("schedule.num_switches = 4\n"), std::string::npos);
  EXPECT_NE(r.out.find("schedule.batch_size = 32\n"), std::string::npos);
}

TEST_F(CliTest, Filter) {
  const CliRun r = cli("filter --input " + kFixtures + "/filter_small.tsv --format tsv --out " +
                    dir_->file("t.jsonl"));
  EXPECT_EXIT_CODE(r, 0);
  EXPECT_NE(r.out.find("\"rule3_triplets_overlap\": 1"), std::string::npos) << r.out;
  EXPECT_EQ(import_triplets(dir_->file("t.jsonl")).size(), 1u);
  const CliRun missing = cli("filter --input /nonexistent/a.tsv --format tsv --out " +
                          dir_->file("u.jsonl"));
  EXPECT_NE(missing.code, 0);
  EXPECT_NE(missing.out.find("/nonexistent/a.tsv"), std::string::npos) << missing.out;
  testing::write_file(dir_->file("bad.tsv"), "1\t2\n");
  EXPECT_EXIT_CODE(cli("filter --input " + dir_->file("bad.tsv") + " --format tsv --out " +
                       dir_->file("v.jsonl")),
                   2);
}

TEST_F(CliTest, TinyTrainWritesTwoCheckpointsAndEchoesConfig) {
  const auto start = std::chrono::steady_clock::now();
  const std::string run = train_tiny("tiny");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 60.0);
  EXPECT_TRUE(std::filesystem::exists(run + "/switch_01.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(run + "/switch_02.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(run + "/switch_03.ckpt"));
  const std::string echoed = testing::read_file(run + "/config.txt");
  EXPECT_NE(echoed.find("schedule.H = 5\n"), std::string::npos);
  EXPECT_NE(echoed.find("schedule.num_switches = 2\n"), std::string::npos);

  // Same config and seed: identical metric log. The echoed config alone
  // reproduces the run.
  const std::string again = train_tiny("tiny_again");
  EXPECT_EQ(testing::read_file(again + "/metrics.jsonl"), testing::read_file(run + "/metrics.jsonl"));
  const CliRun echo = cli("--config " + run + "/config.txt train --data " + data_ + " --init " +
                       kFixtures + "/pretrained_toy.ckpt --out " + dir_->file("tiny_echo") +
                       " --eval-units 50");
  EXPECT_EXIT_CODE(echo, 0);
  EXPECT_EQ(testing::read_file(dir_->file("tiny_echo") + "/metrics.jsonl"),
            testing::read_file(run + "/metrics.jsonl"));
  EXPECT_EQ(testing::read_file(dir_->file("tiny_echo") + "/switch_02.ckpt"),
            testing::read_file(run + "/switch_02.ckpt"));
}

TEST_F(CliTest, FreezeLocatorKeepsInitialization) {
  const std::string run = train_tiny("frozen", "--freeze-locator");
  const Checkpoint init = load_checkpoint(kFixtures + "/pretrained_toy.ckpt");
  const Checkpoint last = load_checkpoint(run + "/switch_02.ckpt");
  EXPECT_EQ(last.find("locator")->params, init.networks.at(0).params);
  EXPECT_NE(last.find("describer")->params, init.networks.at(0).params);
  EXPECT_NE(testing::read_file(run + "/config.txt").find("schedule.mode = describer-only"),
            std::string::npos);
  EXPECT_EXIT_CODE(cli("train --data " + data_ + " --init " + kFixtures +
                       "/pretrained_toy.ckpt --out " + dir_->file("x") +
                       " --freeze-locator --freeze-describer"),
                   1);
}

TEST_F(CliTest, TotalStepsMustDivide) {
  EXPECT_EXIT_CODE(cli("train --data " + data_ + " --init " + kFixtures +
                       "/pretrained_toy.ckpt --out " + dir_->file("y") +
                       " --cycle-steps 7 --total-steps 20"),
                   1);
}

TEST_F(CliTest, EvalOracleIsPerfect) {
  EXPECT_EXIT_CODE(cli("oracle-checkpoint --out " + dir_->file("oracle.ckpt") + " --data " + data_), 0);
  const CliRun r = cli("eval --checkpoint " + dir_->file("oracle.ckpt") + " --data " + data_);
  EXPECT_EXIT_CODE(r, 0);
  EXPECT_NE(r.out.find("Pr@0.5 = 100.0 over 200 units"), std::string::npos) << r.out;
}

TEST_F(CliTest, EvalGoldenSummary) {
  const std::string out = dir_->file("golden");
  const CliRun r = cli("eval --checkpoint " + kFixtures + "/pretrained_toy.ckpt --data " + data_ +
                    " --limit 200 --out " + out);
  EXPECT_EXIT_CODE(r, 0);
  EXPECT_EQ(testing::read_file(out + "/summary.json"),
            testing::read_file(kFixtures + "/pretrained_toy_summary.json"));
  EXPECT_EXIT_CODE(cli("eval --checkpoint " + kFixtures + "/pretrained_toy.ckpt --data " + data_ +
                       " --mode rec --limit 20"),
                   0);
}

TEST_F(CliTest, EvalVocabularyMismatch) {
  const std::string other = dir_->file("other.bin");
  EXPECT_EXIT_CODE(cli("gen-data --out " + other +
                       " --train-size 10 --heldout-size 10 --set scene.num_categories=5"),
                   0);
  const CliRun r = cli("eval --checkpoint " + kFixtures + "/pretrained_toy.ckpt --data " + other);
  EXPECT_EXIT_CODE(r, 2);
  EXPECT_NE(r.out.find("vocabulary"), std::string::npos) << r.out;
  EXPECT_EXIT_CODE(cli("eval --checkpoint " + dir_->file("missing.ckpt") + " --data " + data_), 2);
}

TEST_F(CliTest, Report) {
  const std::string a = train_tiny("rep_a", "", "--cycle-steps 2 --switches 6 --eval-units 20");
  const CliRun r = cli("report " + a + " --csv " + dir_->file("r.csv"));
  EXPECT_EXIT_CODE(r, 0);
  const auto rows = report_from_csv(testing::read_file(dir_->file("r.csv")));
  EXPECT_EQ(rows.size(), 6u);
  std::filesystem::create_directories(dir_->file("empty_run"));
  EXPECT_NE(cli("report " + dir_->file("empty_run")).code, 0);
}

// Annotation fixture served by an in-process stub that echoes every box.
TEST_F(CliTest, EvalRemoteAgainstStub) {
  const auto ann = load_annotations(kFixtures + "/filter_small.tsv", AnnotationFormat::kTsv);
  StubScript script;
  const CoordFormat f;
  for (const auto& img : ann.images) {
    for (const auto& a : img.annotations) {
      const BBox b{static_cast<double>(a.box.x_min) / img.width,
                   static_cast<double>(a.box.y_min) / img.height,
                   static_cast<double>(a.box.x_max) / img.width,
                   static_cast<double>(a.box.y_max) / img.height};
      const std::string text = serialize_bbox(quantize(b, 1000), f);
      script.reg_replies[text] = "caption for " + text;
      script.rec_replies["caption for " + text] = text;
    }
  }
  StubServer server(script);
  server.start();
  const std::string images = dir_->file("images");
  std::filesystem::create_directories(images);
  for (int i = 1; i <= 4; ++i) {
    testing::write_file(images + "/img" + std::to_string(i) + ".png", "not really a png");
  }
  const std::string url = "http://127.0.0.1:" + std::to_string(server.port());
  const std::string base = "eval-remote --annotations " + kFixtures +
                           "/filter_small.tsv --format tsv --images " + images + " --endpoint " +
                           url + " --out " + dir_->file("remote");
  const CliRun r = cli(base);
  EXPECT_EXIT_CODE(r, 0);
  EXPECT_NE(r.out.find("100.0"), std::string::npos) << r.out;
  EXPECT_EQ(server.requests(), 8u);
  const auto s = read_summary(dir_->file("remote") + "/summary.json");
  EXPECT_EQ(s.n, 4u);
  EXPECT_EQ(*s.pr_at_05, 100.0);
  EXPECT_TRUE(std::filesystem::exists(dir_->file("remote") + "/audit.jsonl"));

  // Complete audit log: nothing is sent again.
  EXPECT_EXIT_CODE(cli(base + " --resume"), 0);
  EXPECT_EQ(server.requests(), 8u);
  EXPECT_EQ(read_summary(dir_->file("remote") + "/summary.json"), s);
}

TEST_F(CliTest, EvalRemoteUnreachableHost) {
  const CliRun r = cli("--set endpoint.max_retries=0 --set endpoint.timeout_s=1 eval-remote "
                    "--annotations " + kFixtures + "/filter_small.tsv --format tsv --endpoint "
                    "http://127.0.0.1:1 --out " + dir_->file("down"));
  EXPECT_EXIT_CODE(r, 0);
  EXPECT_NE(r.out.find("warning"), std::string::npos) << r.out;
  const auto s = read_summary(dir_->file("down") + "/summary.json");
  EXPECT_EQ(s.n, 4u);
  EXPECT_EQ(*s.pr_at_05, 0.0);
  EXPECT_EQ(s.parse_failure_rate, 1.0);
}

}  // namespace
}  // namespace sctune
