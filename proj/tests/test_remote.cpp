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


#include <gtest/gtest.h>

#include <cstdlib>
#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "sctune/errors.hpp"
#include "sctune/remote.hpp"
#include "test_util.hpp"

namespace sctune {
namespace {

EndpointConfig endpoint_for(const StubServer& s) {
  EndpointConfig c;
  c.base_url = "http://127.0.0.1:" + std::to_string(s.port());
  c.backoff_ms = 1;
  c.timeout_s = 5;
  return c;
}

RemoteUnit unit(const std::string& id, QuantizedBBox q) {
  return RemoteUnit{id, 0, "data:image/png;base64,AAAA", dequantize(q, 1000)};
}

TEST(RequestHash, Fnv1aVectors) {
  EXPECT_EQ(request_hash(""), "cbf29ce484222325");
  EXPECT_EQ(request_hash("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(request_hash("foobar"), "85944171f73967e8");
}

TEST(EndpointConfig, Validate) {
  EndpointConfig c;
  EXPECT_THROW(c.validate(), ConfigError);
  c.base_url = "http://localhost:1";
  EXPECT_NO_THROW(c.validate());
  c.reg_template = "describe";
  EXPECT_THROW(c.validate(), ConfigError);
  c = EndpointConfig{};
  c.base_url = "http://localhost:1";
  c.rec_template = "find it";
  EXPECT_THROW(c.validate(), ConfigError);
  c = EndpointConfig{};
  c.base_url = "http://localhost:1";
  c.max_concurrent = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RemoteEval, ExactEchoHits) {
  StubScript script;
  const std::string box = "<box>(100,100),(500,500)</box>";
  ASSERT_EQ(serialize_bbox(QuantizedBBox{100, 100, 500, 500}, CoordFormat()), box);
  script.reg_replies[box] = "the red mug";
  script.rec_replies["the red mug"] = "Sure: " + box;
  StubServer server(script);
  server.start();
  const std::vector<RemoteUnit> units{unit("a", {100, 100, 500, 500})};
  const auto r = remote_cycle_eval(endpoint_for(server), units, RemoteOptions{});
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].caption, "the red mug");
  EXPECT_EQ(r.records[0].iou, 1.0);
  EXPECT_TRUE(r.records[0].hit);
  EXPECT_EQ(r.records[0].source, "remote");
  EXPECT_EQ(server.requests(), 2u);
}

TEST(RemoteEval, NoCoordinatesIsParseFailure) {
  StubScript script;
  script.default_reply = "no idea";
  StubServer server(script);
  server.start();
  const std::vector<RemoteUnit> units{unit("a", {100, 100, 500, 500})};
  const auto r = remote_cycle_eval(endpoint_for(server), units, RemoteOptions{});
  EXPECT_FALSE(r.records[0].predicted_box);
  EXPECT_EQ(r.records[0].iou, 0.0);
  EXPECT_TRUE(r.records[0].error.empty());
  EXPECT_EQ(r.summary.parse_failure_rate, 1.0);
}

TEST(RemoteEval, ThreeRecordScript) {
  // Gold (0,0,500,1000): replies with IoU 1.0, 0.2 and 0.6.
  StubScript script;
  const CoordFormat f;
  std::vector<RemoteUnit> units;
  const std::vector<QuantizedBBox> gold{{0, 0, 500, 1000}, {0, 0, 500, 999}, {0, 0, 500, 998}};
  const std::vector<QuantizedBBox> reply{{0, 0, 500, 1000}, {0, 0, 100, 999}, {0, 0, 300, 998}};
  for (int i = 0; i < 3; ++i) {
    const std::string cap = "c" + std::to_string(i);
    script.reg_replies[serialize_bbox(gold[i], f)] = cap;
    script.rec_replies[cap] = serialize_bbox(reply[i], f);
    units.push_back(unit("u" + std::to_string(i), gold[i]));
  }
  StubServer server(script);
  server.start();
  const auto r = remote_cycle_eval(endpoint_for(server), units, RemoteOptions{});
  EXPECT_EQ(r.records[0].iou, 1.0);
  EXPECT_NEAR(r.records[1].iou, 0.2, 1e-12);
  EXPECT_NEAR(r.records[2].iou, 0.6, 1e-12);
  EXPECT_EQ(round_pct(*r.summary.pr_at_05), 66.7);
}

TEST(RemoteEval, ScenarioAndResume) {
  const auto sc = testing::remote_scenario(50);
  EXPECT_EQ(sc.hits, 20u);
  StubServer server(sc.script);
  server.start();
  EndpointConfig cfg = endpoint_for(server);
  cfg.max_concurrent = 4;
  testing::TempDir dir;
  RemoteOptions opts;
  opts.audit_path = dir.file("audit.jsonl");
  RemoteRunStats st;
  const auto full = remote_cycle_eval(cfg, sc.units, opts, &st);
  EXPECT_EQ(*full.summary.pr_at_05, 40.0);
  EXPECT_EQ(full.summary.parse_failure_rate, 0.2);
  EXPECT_EQ(st.requests_sent, 100u);
  for (size_t i = 0; i < sc.units.size(); ++i) EXPECT_EQ(full.records[i].unit_id, sc.units[i].unit_id);
  const std::string audit = testing::read_file(opts.audit_path);
  EXPECT_EQ(std::count(audit.begin(), audit.end(), '\n'), 100);

  // Complete log: nothing is sent again.
  opts.resume = true;
  const size_t before = server.requests();
  const auto again = remote_cycle_eval(cfg, sc.units, opts, &st);
  EXPECT_EQ(server.requests(), before);
  EXPECT_EQ(st.requests_sent, 0u);
  EXPECT_EQ(st.exchanges_replayed, 100u);
  EXPECT_EQ(again.records, full.records);

  // Log cut mid-line after 37 exchanges: only the rest is sent.
  size_t pos = 0;
  for (int k = 0; k < 37; ++k) pos = audit.find('\n', pos) + 1;
  testing::write_file(opts.audit_path, audit.substr(0, pos + 25));
  StubServer fresh(sc.script);
  fresh.start();
  const auto resumed = remote_cycle_eval(endpoint_for(fresh), sc.units, opts, &st);
  EXPECT_EQ(st.requests_sent, 63u);
  EXPECT_EQ(st.exchanges_replayed, 37u);
  EXPECT_EQ(fresh.requests(), 63u);
  EXPECT_EQ(fresh.duplicates(), 0u);
  EXPECT_EQ(resumed.summary, full.summary);
  EXPECT_EQ(resumed.records, full.records);
  const std::string healed = testing::read_file(opts.audit_path);
  EXPECT_EQ(std::count(healed.begin(), healed.end(), '\n'), 100);
}

TEST(RemoteEval, RetriesThenSucceeds) {
  StubScript script;
  script.fail_first = 2;
  script.default_reply = "<box>(0,0),(10,10)</box>";
  StubServer server(script);
  server.start();
  EndpointConfig cfg = endpoint_for(server);
  cfg.max_retries = 3;
  const std::vector<RemoteUnit> units{unit("a", {0, 0, 10, 10})};
  RemoteRunStats st;
  const auto r = remote_cycle_eval(cfg, units, RemoteOptions{}, &st);
  EXPECT_TRUE(r.records[0].hit);
  EXPECT_EQ(st.requests_sent, 4u);
  EXPECT_EQ(st.transport_failures, 0u);
}

TEST(RemoteEval, ExhaustedRetriesBecomeTaggedFailures) {
  StubScript script;
  script.fail_first = 100;
  StubServer server(script);
  server.start();
  EndpointConfig cfg = endpoint_for(server);
  cfg.max_retries = 1;
  const std::vector<RemoteUnit> units{unit("a", {0, 0, 10, 10})};
  RemoteRunStats st;
  const auto r = remote_cycle_eval(cfg, units, RemoteOptions{}, &st);
  EXPECT_EQ(r.records[0].iou, 0.0);
  EXPECT_NE(r.records[0].error.find("503"), std::string::npos) << r.records[0].error;
  EXPECT_EQ(st.requests_sent, 2u);
  EXPECT_EQ(st.transport_failures, 1u);
}

TEST(RemoteEval, UnreachableHostDegrades) {
  EndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.max_retries = 1;
  cfg.backoff_ms = 1;
  cfg.timeout_s = 1;
  const std::vector<RemoteUnit> units{unit("a", {0, 0, 10, 10}), unit("b", {0, 0, 20, 20})};
  const auto r = remote_cycle_eval(cfg, units, RemoteOptions{});
  ASSERT_EQ(r.records.size(), 2u);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.iou, 0.0);
    EXPECT_FALSE(rec.error.empty());
  }
  EXPECT_EQ(*r.summary.pr_at_05, 0.0);
}

TEST(RemoteEval, AuthFromEnvironment) {
  ::setenv("SCTUNE_TEST_TOKEN", "s3cret", 1);
  StubScript script;
  script.required_token = "s3cret";
  script.default_reply = "<box>(0,0),(10,10)</box>";
  StubServer server(script);
  server.start();
  EndpointConfig cfg = endpoint_for(server);
  const std::vector<RemoteUnit> units{unit("a", {0, 0, 10, 10})};
  // No token sent: the endpoint refuses and the run aborts.
  EXPECT_THROW(remote_cycle_eval(cfg, units, RemoteOptions{}), RuntimeAbort);
  cfg.auth_env = "SCTUNE_TEST_TOKEN";
  EXPECT_TRUE(remote_cycle_eval(cfg, units, RemoteOptions{}).records[0].hit);
  ::setenv("SCTUNE_TEST_TOKEN", "wrong", 1);
  EXPECT_THROW(remote_cycle_eval(cfg, units, RemoteOptions{}), RuntimeAbort);
  ::unsetenv("SCTUNE_TEST_TOKEN");
  EXPECT_THROW(remote_cycle_eval(cfg, units, RemoteOptions{}), ConfigError);
}

TEST(RemoteEval, MissingImageFileFailsUnitOnly) {
  StubScript script;
  StubServer server(script);
  server.start();
  std::vector<RemoteUnit> units{unit("a", {0, 0, 10, 10})};
  units[0].image_ref = "/nonexistent/image.jpg";
  const auto r = remote_cycle_eval(endpoint_for(server), units, RemoteOptions{});
  EXPECT_NE(r.records[0].error.find("cannot read image"), std::string::npos);
  EXPECT_EQ(server.requests(), 0u);
}

TEST(SampleRemoteUnits, OneBoxPerImageAndSeeded) {
  Rng rng(3);
  AnnotationSet a;
  for (int i = 0; i < 30; ++i) {
    AnnotatedImage img{i, 100, 50, i % 2 ? "im" + std::to_string(i) + ".png" : "", {}};
    for (int k = 0; k < 3; ++k) img.annotations.push_back({k, {k, 0, 10 + k, 10}});
    a.images.push_back(img);
  }
  const auto u = sample_remote_units(a, 20, 9, "/imgs");
  ASSERT_EQ(u.size(), 20u);
  std::set<int64_t> ids;
  for (const auto& x : u) {
    EXPECT_TRUE(ids.insert(x.image_id).second);
    const std::string expect = x.image_id % 2 ? "/imgs/im" + std::to_string(x.image_id) + ".png"
                                              : "/imgs/" + std::to_string(x.image_id) + ".jpg";
    EXPECT_EQ(x.image_ref, expect);
    EXPECT_EQ(x.box.y_max, 0.2);
  }
  const auto again = sample_remote_units(a, 20, 9, "/imgs");
  for (size_t i = 0; i < u.size(); ++i) EXPECT_EQ(u[i].unit_id, again[i].unit_id);
  EXPECT_EQ(sample_remote_units(a, 100, 9, "").size(), 30u);
}

TEST(StubScript, LoadsJson) {
  testing::TempDir dir;
  testing::write_file(dir.file("s.json"),
                      R"({"reg": {"<box>(1,2),(3,4)</box>": "x"}, "rec": {"x": "y"},
                          "default": "d", "fail_first": 2, "delay_ms": 5})");
  const auto s = StubScript::load(dir.file("s.json"));
  EXPECT_EQ(s.reg_replies.at("<box>(1,2),(3,4)</box>"), "x");
  EXPECT_EQ(s.rec_replies.at("x"), "y");
  EXPECT_EQ(s.default_reply, "d");
  EXPECT_EQ(s.fail_first, 2);
  EXPECT_EQ(s.delay_ms, 5);
  testing::write_file(dir.file("bad.json"), "{");
  EXPECT_THROW(StubScript::load(dir.file("bad.json")), DataError);
  EXPECT_THROW(StubScript::load(dir.file("none.json")), DataError);
}

}  // namespace
}  // namespace sctune
