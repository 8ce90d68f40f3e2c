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

#include "sctune/remote.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "sctune/errors.hpp"
#include "sctune/rng.hpp"

namespace sctune {

using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto z = s.find_last_not_of(" \t\r\n");
  return s.substr(a, z - a + 1);
}

std::string replace_slot(std::string text, const std::string& slot,
                         const std::string& value) {
  const auto pos = text.find(slot);
  if (pos != std::string::npos) text.replace(pos, slot.size(), value);
  return text;
}

bool has_scheme(const std::string& ref) {
  return ref.find("://") != std::string::npos || ref.starts_with("data:");
}

std::string image_url(const std::string& ref) {
  if (has_scheme(ref)) return ref;
  std::ifstream in(ref, std::ios::binary);
  if (!in) throw DataError("cannot read image " + ref);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string ext = std::filesystem::path(ref).extension().string();
  if (!ext.empty()) ext.erase(0, 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == "jpg") ext = "jpeg";
  if (ext.empty()) ext = "jpeg";
  return "data:image/" + ext + ";base64," + httplib::detail::base64_encode(ss.str());
}

std::string request_body(const EndpointConfig& cfg, const std::string& image,
                         const std::string& prompt) {
  json content = json::array();
  content.push_back({{"type", "image_url"}, {"image_url", {{"url", image}}}});
  content.push_back({{"type", "text"}, {"text", prompt}});
  json body = {{"messages", json::array({{{"role", "user"}, {"content", content}}})},
               {"temperature", 0}};
  if (!cfg.model.empty()) body["model"] = cfg.model;
  return body.dump();
}

struct Exchange {
  std::optional<std::string> response;
  int status = 0;
  std::string error;
  int attempts = 0;
};

struct LoggedExchange {
  std::string request_hash;
  Exchange ex;
};

std::string audit_key(const std::string& unit, const std::string& leg) {
  return unit + '\n' + leg;
}

// Reads an audit log, dropping a final partial line (an interrupted write)
// from the file itself so that later appends start on a fresh line.
std::map<std::string, LoggedExchange> read_audit(const std::string& path) {
  std::map<std::string, LoggedExchange> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  in.close();
  size_t pos = 0, lineno = 0, good_end = 0;
  while (pos < text.size()) {
    const size_t nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = text.substr(pos, (complete ? nl : text.size()) - pos);
    ++lineno;
    const size_t next = complete ? nl + 1 : text.size();
    if (!line.empty()) {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        if (complete && next < text.size()) {
          throw DataError(path + ":" + std::to_string(lineno) +
                          ": malformed audit record");
        }
        break;
      }
      if (!complete) break;
      try {
        LoggedExchange e;
        e.request_hash = j.at("request_hash").get<std::string>();
        if (!j.at("response").is_null()) e.ex.response = j.at("response").get<std::string>();
        e.ex.status = j.at("status").get<int>();
        e.ex.error = j.at("error").get<std::string>();
        e.ex.attempts = j.at("attempts").get<int>();
        out[audit_key(j.at("unit_id").get<std::string>(),
                      j.at("leg").get<std::string>())] = std::move(e);
      } catch (const json::exception& e) {
        throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    pos = next;
    good_end = next;
  }
  if (good_end < text.size()) std::filesystem::resize_file(path, good_end);
  return out;
}

class Runner {
 public:
  Runner(const EndpointConfig& cfg, const RemoteOptions& opts,
         std::map<std::string, LoggedExchange> replay)
      : cfg_(cfg), opts_(opts), replay_(std::move(replay)) {
    if (!cfg.auth_env.empty()) {
      const char* tok = std::getenv(cfg.auth_env.c_str());
      if (!tok || !*tok) {
        throw ConfigError("environment variable " + cfg.auth_env +
                          " is not set");
      }
      token_ = tok;
    }
    if (!opts.audit_path.empty()) {
      const auto parent = std::filesystem::path(opts.audit_path).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent);
      audit_.open(opts.audit_path,
                  opts.resume ? std::ios::app | std::ios::binary
                              : std::ios::trunc | std::ios::binary);
      if (!audit_) throw std::runtime_error("cannot write " + opts.audit_path);
    }
  }

  EvalRecord run_unit(httplib::Client& cli, const RemoteUnit& u) {
    std::string image;
    try {
      image = image_url(u.image_ref);
    } catch (const DataError& e) {
      return failed(u, "", e.what());
    }
    const std::string box_text = serialize_bbox(quantize(u.box, cfg_.fmt.range()), cfg_.fmt);
    const Exchange reg = exchange(
        cli, u.unit_id, "reg", image, replace_slot(cfg_.reg_template, "{bbox}", box_text));
    if (!reg.response) return failed(u, "", "reg: " + reg.error);
    const std::string caption = trim(*reg.response);
    const Exchange rec = exchange(
        cli, u.unit_id, "rec", image, replace_slot(cfg_.rec_template, "{caption}", caption));
    if (!rec.response) return failed(u, caption, "rec: " + rec.error);
    std::optional<BBox> pred;
    if (auto q = parse_bbox(*rec.response, cfg_.fmt)) pred = dequantize(*q, cfg_.fmt.range());
    return make_record(u.unit_id, u.box, caption, pred, "remote");
  }

  RemoteRunStats stats() const {
    return {sent_.load(), replayed_.load(), transport_failures_.load()};
  }

 private:
  EvalRecord failed(const RemoteUnit& u, std::string caption, std::string err) {
    EvalRecord r = make_record(u.unit_id, u.box, std::move(caption), std::nullopt, "remote");
    r.error = std::move(err);
    return r;
  }

  Exchange exchange(httplib::Client& cli, const std::string& unit,
                    const std::string& leg, const std::string& image,
                    const std::string& prompt) {
    const std::string body = request_body(cfg_, image, prompt);
    const std::string hash = request_hash(body);
    if (auto it = replay_.find(audit_key(unit, leg));
        it != replay_.end() && it->second.request_hash == hash) {
      ++replayed_;
      return it->second.ex;
    }
    const std::string started = utc_now();
    const Exchange ex = send(cli, body);
    json line = {{"unit_id", unit},
                 {"leg", leg},
                 {"request_hash", hash},
                 {"prompt", prompt},
                 {"response", ex.response ? json(*ex.response) : json(nullptr)},
                 {"status", ex.status},
                 {"error", ex.error},
                 {"attempts", ex.attempts},
                 {"started_at", started},
                 {"finished_at", utc_now()}};
    if (audit_.is_open()) {
      std::lock_guard<std::mutex> lock(audit_mu_);
      audit_ << line.dump() << '\n';
      audit_.flush();
    }
    return ex;
  }

  Exchange send(httplib::Client& cli, const std::string& body) {
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    Exchange ex;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(
            std::chrono::milliseconds(static_cast<int64_t>(cfg_.backoff_ms) << (attempt - 1)));
      }
      ++ex.attempts;
      ++sent_;
      auto res = cli.Post(cfg_.path, headers, body, "application/json");
      if (!res) {
        ex.status = 0;
        ex.error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      ex.status = res->status;
      if (res->status == 401 || res->status == 403) {
        throw RuntimeAbort("endpoint rejected credentials (HTTP " +
                           std::to_string(res->status) + ")");
      }
      if (res->status == 429 || res->status >= 500) {
        ex.error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        ex.error = "HTTP " + std::to_string(res->status);
        return ex;
      }
      try {
        const json j = json::parse(res->body);
        ex.response = j.at("choices").at(0).at("message").at("content").get<std::string>();
        ex.error.clear();
      } catch (const json::exception&) {
        ex.error = "unreadable response body";
      }
      return ex;
    }
    ++transport_failures_;
    return ex;
  }

  const EndpointConfig& cfg_;
  const RemoteOptions& opts_;
  std::map<std::string, LoggedExchange> replay_;
  std::string token_;
  std::ofstream audit_;
  std::mutex audit_mu_;
  std::atomic<size_t> sent_{0}, replayed_{0}, transport_failures_{0};
};

}  // namespace

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint: base_url is required");
  if (reg_template.find("{bbox}") == std::string::npos) {
    throw ConfigError("endpoint: reg_template needs a {bbox} slot");
  }
  if (rec_template.find("{caption}") == std::string::npos) {
    throw ConfigError("endpoint: rec_template needs a {caption} slot");
  }
  if (max_concurrent < 1) throw ConfigError("endpoint: max_concurrent must be >= 1");
  if (max_retries < 0) throw ConfigError("endpoint: max_retries must be >= 0");
  if (backoff_ms < 0) throw ConfigError("endpoint: backoff_ms must be >= 0");
  if (!(timeout_s > 0.0)) throw ConfigError("endpoint: timeout_s must be > 0");
}

std::string request_hash(const std::string& body) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : body) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<RemoteUnit> sample_remote_units(const AnnotationSet& a, size_t n,
                                            uint64_t seed,
                                            const std::string& image_root) {
  std::vector<const AnnotatedImage*> pool;
  for (const auto& img : a.images) {
    if (!img.annotations.empty()) pool.push_back(&img);
  }
  std::sort(pool.begin(), pool.end(), [](const auto* x, const auto* y) {
    return x->image_id < y->image_id;
  });
  Rng rng(mix_seed(seed, 0x5e1));
  // Partial Fisher-Yates: the first n entries become the sample.
  const size_t take = std::min(n, pool.size());
  for (size_t i = 0; i < take; ++i) {
    std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  }
  std::vector<RemoteUnit> out;
  for (size_t i = 0; i < take; ++i) {
    const AnnotatedImage& img = *pool[i];
    const Annotation& ann = img.annotations[rng.index(img.annotations.size())];
    RemoteUnit u;
    u.image_id = img.image_id;
    u.unit_id = "image-" + std::to_string(img.image_id);
    const std::string file = img.file_name.empty()
                                 ? std::to_string(img.image_id) + ".jpg"
                                 : img.file_name;
    u.image_ref = has_scheme(file) || image_root.empty()
                      ? file
                      : (std::filesystem::path(image_root) / file).string();
    const double W = static_cast<double>(img.width), H = static_cast<double>(img.height);
    u.box = BBox{ann.box.x_min / W, ann.box.y_min / H, ann.box.x_max / W,
                 ann.box.y_max / H};
    out.push_back(std::move(u));
  }
  return out;
}

EvalResult remote_cycle_eval(const EndpointConfig& cfg,
                             std::span<const RemoteUnit> units,
                             const RemoteOptions& opts, RemoteRunStats* stats) {
  cfg.validate();
  std::map<std::string, LoggedExchange> replay;
  if (opts.resume && !opts.audit_path.empty()) replay = read_audit(opts.audit_path);
  Runner runner(cfg, opts, std::move(replay));

  EvalResult res;
  res.records.resize(units.size());
  std::atomic<size_t> next{0}, done{0};
  std::atomic<bool> abort{false};
  std::exception_ptr failure;
  std::mutex failure_mu;
  const auto timeout = std::chrono::duration<double>(cfg.timeout_s);
  const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout).count();

  auto worker = [&] {
    httplib::Client cli(cfg.base_url);
    cli.set_connection_timeout(usec / 1000000, usec % 1000000);
    cli.set_read_timeout(usec / 1000000, usec % 1000000);
    cli.set_write_timeout(usec / 1000000, usec % 1000000);
    while (!abort.load()) {
      const size_t i = next.fetch_add(1);
      if (i >= units.size()) break;
      try {
        res.records[i] = runner.run_unit(cli, units[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        abort = true;
        break;
      }
      const size_t d = ++done;
      if (opts.log && (d % 10 == 0 || d == units.size())) {
        opts.log("remote eval: " + std::to_string(d) + "/" +
                 std::to_string(units.size()) + " units");
      }
    }
  };
  const size_t nthreads =
      std::min<size_t>(static_cast<size_t>(cfg.max_concurrent),
                       std::max<size_t>(units.size(), 1));
  std::vector<std::thread> pool;
  for (size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  res.summary = summarize(res.records);
  if (stats) *stats = runner.stats();
  return res;
}

// ---------------------------------------------------------------------------

StubScript StubScript::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stub script: " + path);
  try {
    json j = json::parse(in);
    StubScript s;
    if (j.contains("reg")) s.reg_replies = j.at("reg").get<std::map<std::string, std::string>>();
    if (j.contains("rec")) s.rec_replies = j.at("rec").get<std::map<std::string, std::string>>();
    s.default_reply = j.value("default", s.default_reply);
    s.fail_first = j.value("fail_first", 0);
    s.delay_ms = j.value("delay_ms", 0);
    if (j.contains("range")) s.fmt = s.fmt.with_range(j.at("range").get<int64_t>());
    if (j.contains("required_token_env")) {
      const auto var = j.at("required_token_env").get<std::string>();
      const char* tok = std::getenv(var.c_str());
      if (!tok || !*tok) throw ConfigError("environment variable " + var + " is not set");
      s.required_token = tok;
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

struct StubServer::Impl {
  StubScript script;
  httplib::Server server;
  std::thread thread;
  std::mutex mu;
  std::set<std::string> seen;
  size_t duplicates = 0;
};

StubServer::StubServer(StubScript script) : impl_(std::make_unique<Impl>()) {
  impl_->script = std::move(script);
  Impl* impl = impl_.get();
  impl->server.Get("/stats", [this, impl](const httplib::Request&, httplib::Response& res) {
    size_t dup;
    {
      std::lock_guard<std::mutex> lock(impl->mu);
      dup = impl->duplicates;
    }
    res.set_content(json{{"requests", requests_.load()}, {"duplicates", dup}}.dump(),
                    "application/json");
  });
  impl->server.Post(".*", [this, impl](const httplib::Request& req, httplib::Response& res) {
    const StubScript& s = impl->script;
    const size_t nth = requests_.fetch_add(1);
    {
      std::lock_guard<std::mutex> lock(impl->mu);
      if (!impl->seen.insert(request_hash(req.body)).second) ++impl->duplicates;
    }
    if (!s.required_token.empty() &&
        req.get_header_value("Authorization") != "Bearer " + s.required_token) {
      res.status = 401;
      res.set_content(R"({"error":"unauthorized"})", "application/json");
      return;
    }
    if (static_cast<int>(nth) < s.fail_first) {
      res.status = 503;
      return;
    }
    if (s.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(s.delay_ms));
    std::string prompt;
    try {
      const json body = json::parse(req.body);
      const json& content = body.at("messages").back().at("content");
      if (content.is_string()) {
        prompt = content.get<std::string>();
      } else {
        for (const auto& part : content) {
          if (part.value("type", "") == "text") prompt += part.at("text").get<std::string>();
        }
      }
    } catch (const json::exception&) {
      res.status = 400;
      return;
    }
    std::string reply = s.default_reply;
    std::smatch m;
    if (std::regex_search(prompt, m, s.fmt.regex())) {
      if (auto it = s.reg_replies.find(m.str(0)); it != s.reg_replies.end()) reply = it->second;
    } else {
      const auto colon = prompt.rfind(": ");
      const std::string key = colon == std::string::npos ? prompt : prompt.substr(colon + 2);
      if (auto it = s.rec_replies.find(key); it != s.rec_replies.end()) reply = it->second;
    }
    json out = {{"choices", json::array({{{"index", 0},
                                          {"message", {{"role", "assistant"}, {"content", reply}}},
                                          {"finish_reason", "stop"}}})}};
    res.set_content(out.dump(), "application/json");
  });
}

StubServer::~StubServer() { stop(); }

int StubServer::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    port_ = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw std::runtime_error("stub server cannot bind " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void StubServer::listen_blocking(const std::string& host, int port) {
  port_ = port;
  if (!impl_->server.listen(host, port)) {
    throw std::runtime_error("stub server cannot listen on " + host + ":" +
                             std::to_string(port));
  }
}

void StubServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

size_t StubServer::duplicates() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->duplicates;
}

}  // namespace sctune
