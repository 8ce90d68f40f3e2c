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

// Self-consistency audit of a remote vision-language endpoint.
//
// Each unit costs two chat-completion calls: describe the box (REG), then
// locate the description (REC). Every exchange is appended to an audit log,
// and a resumed run replays logged exchanges instead of sending them again.

#ifndef SCTUNE_REMOTE_HPP_
#define SCTUNE_REMOTE_HPP_

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sctune/dataprep.hpp"
#include "sctune/evalharness.hpp"
#include "sctune/geometry.hpp"

namespace sctune {

struct EndpointConfig {
  // scheme://host[:port]
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string model;
  // Name of the environment variable holding the bearer token. The token
  // itself is never read from or written to a config file.
  std::string auth_env;
  std::string reg_template = "Describe the object in region {bbox} briefly.";
  std::string rec_template = "Locate this object and answer with its box: {caption}";
  CoordFormat fmt;
  double timeout_s = 30.0;
  int max_retries = 3;
  // First retry delay; doubles on every further attempt.
  int backoff_ms = 500;
  int max_concurrent = 4;

  // Throws ConfigError.
  void validate() const;
};

struct RemoteUnit {
  std::string unit_id;
  int64_t image_id = 0;
  // File path or http(s)/data URL.
  std::string image_ref;
  BBox box;
};

// At most one box per image: n images drawn without replacement, then one
// box from each, all from a seeded generator. Image files are looked up as
// image_root/file_name (or image_root/<image_id>.jpg without a file name).
std::vector<RemoteUnit> sample_remote_units(const AnnotationSet& a, size_t n,
                                            uint64_t seed,
                                            const std::string& image_root);

struct RemoteOptions {
  std::string audit_path;
  // Reuse exchanges already in the audit log; otherwise the log is
  // truncated.
  bool resume = false;
  std::function<void(const std::string&)> log;
};

struct RemoteRunStats {
  size_t requests_sent = 0;
  size_t exchanges_replayed = 0;
  size_t transport_failures = 0;
};

// Transport failures that survive the retries become zero-IoU records with
// an error tag. 401/403 responses throw RuntimeAbort.
EvalResult remote_cycle_eval(const EndpointConfig& cfg,
                             std::span<const RemoteUnit> units,
                             const RemoteOptions& opts,
                             RemoteRunStats* stats = nullptr);

// 64-bit FNV-1a, hex encoded; identifies request bodies in the audit log.
std::string request_hash(const std::string& body);

// Scripted endpoint for tests and demos.
//
// A prompt containing a box in the stub's coordinate format is a REG call and
// is answered from reg_replies keyed by the serialized box; any other prompt
// is a REC call answered from rec_replies keyed by the text after the last
// ": " in the prompt (the default REC template puts the caption there).
// Unknown keys get default_reply.
struct StubScript {
  std::map<std::string, std::string> reg_replies;
  std::map<std::string, std::string> rec_replies;
  std::string default_reply = "I am not sure.";
  CoordFormat fmt;
  // When set, requests must carry "Authorization: Bearer <token>".
  std::string required_token;
  // The first fail_first chat requests get 503.
  int fail_first = 0;
  int delay_ms = 0;

  // JSON file: {"reg": {...}, "rec": {...}, "default": "...",
  // "fail_first": n, "delay_ms": n, "required_token_env": "VAR"}.
  static StubScript load(const std::string& path);
};

class StubServer {
 public:
  explicit StubServer(StubScript script);
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  // Binds host:port (0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Blocks serving on the calling thread.
  void listen_blocking(const std::string& host, int port);
  void stop();

  int port() const { return port_; }
  // Chat requests received, including rejected ones.
  size_t requests() const { return requests_.load(); }
  // Requests whose body had been received before.
  size_t duplicates() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::atomic<size_t> requests_{0};
};

}  // namespace sctune

#endif  // SCTUNE_REMOTE_HPP_
