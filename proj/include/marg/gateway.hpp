#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "marg/digest.hpp"
#include "marg/errors.hpp"

namespace marg {

// ---------------------------------------------------------------------------
// Usage and cost accounting
// ---------------------------------------------------------------------------

struct UsageRecord {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t calls = 0;
  double wall_time_ms = 0.0;
};

inline UsageRecord merge_usage(const UsageRecord& a, const UsageRecord& b) {
  return {a.input_tokens + b.input_tokens, a.output_tokens + b.output_tokens,
          a.calls + b.calls, a.wall_time_ms + b.wall_time_ms};
}

/// Dollars per million tokens, quoted separately for each direction.
struct PriceTable {
  double input_per_million = 0.0;
  double output_per_million = 0.0;
};

inline double estimate_cost(const UsageRecord& usage, const PriceTable& prices) {
  return (static_cast<double>(usage.input_tokens) * prices.input_per_million +
          static_cast<double>(usage.output_tokens) * prices.output_per_million) /
         1e6;
}

// ---------------------------------------------------------------------------
// Backend interface
// ---------------------------------------------------------------------------

struct ChatRequest {
  std::string stage;  // pipeline stage label, used for script lookup and caching
  std::string prompt;
  std::string model = "default";
  double temperature = 0.2;
  double top_p = 1.0;
};

struct ChatResponse {
  std::string text;
  UsageRecord usage;
  bool cached = false;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// Replays canned responses for tests and offline runs. Entries are keyed by
/// the prompt's SHA-256 digest, by a substring of the prompt, or by a
/// wildcard; more specific entries win, match entries in registration order.
class ScriptedBackend : public Backend {
 public:
  void add_digest(std::string stage, std::string digest, std::string text) {
    digest_entries_[make_key(stage, digest)] = std::move(text);
  }
  void add_match(std::string stage, std::string needle, std::string text) {
    match_entries_.push_back({std::move(stage), std::move(needle), std::move(text)});
  }
  void add_wildcard(std::string stage, std::string text) {
    wildcard_entries_[std::move(stage)] = std::move(text);
  }

  /// Loads a JSONL script. Each line holds "stage", "text" and either
  /// "key" (a digest or "*") or "match" (a prompt substring).
  void load_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open script file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw SchemaError(line_no, e.what());
      }
      if (!j.is_object() || !j.contains("stage") || !j["stage"].is_string() ||
          !j.contains("text") || !j["text"].is_string())
        throw SchemaError(line_no, "script entry needs string 'stage' and 'text'");
      std::string stage = j["stage"].get<std::string>();
      std::string text = j["text"].get<std::string>();
      if (j.contains("match")) {
        if (!j["match"].is_string())
          throw SchemaError(line_no, "'match' must be a string");
        add_match(stage, j["match"].get<std::string>(), text);
      } else if (j.contains("key")) {
        if (!j["key"].is_string()) throw SchemaError(line_no, "'key' must be a string");
        std::string key = j["key"].get<std::string>();
        if (key == "*")
          add_wildcard(stage, text);
        else
          add_digest(stage, key, text);
      } else {
        throw SchemaError(line_no, "script entry needs 'key' or 'match'");
      }
    }
  }

  ChatResponse complete(const ChatRequest& request) override {
    const std::string* text = lookup(request);
    if (!text) {
      throw ScriptMiss("no script entry for stage '" + request.stage +
                       "' digest " + sha256_hex(request.prompt) + " prompt head '" +
                       request.prompt.substr(0, 80) + "'");
    }
    ChatResponse r;
    r.text = *text;
    r.usage.input_tokens = synthetic_tokens(request.prompt);
    r.usage.output_tokens = synthetic_tokens(*text);
    r.usage.calls = 1;
    r.usage.wall_time_ms = 0.0;  // keeps replayed runs byte for byte stable
    return r;
  }

  static std::int64_t synthetic_tokens(std::string_view text) {
    return static_cast<std::int64_t>((text.size() + 3) / 4);
  }

 private:
  struct MatchEntry {
    std::string stage;
    std::string needle;
    std::string text;
  };

  static std::string make_key(const std::string& stage, const std::string& digest) {
    return stage + "\x1f" + digest;
  }

  const std::string* lookup(const ChatRequest& request) const {
    auto it = digest_entries_.find(make_key(request.stage, sha256_hex(request.prompt)));
    if (it != digest_entries_.end()) return &it->second;
    for (const auto& e : match_entries_) {
      if (e.stage == request.stage && request.prompt.find(e.needle) != std::string::npos)
        return &e.text;
    }
    auto wit = wildcard_entries_.find(request.stage);
    if (wit != wildcard_entries_.end()) return &wit->second;
    return nullptr;
  }

  std::map<std::string, std::string> digest_entries_;
  std::vector<MatchEntry> match_entries_;
  std::map<std::string, std::string> wildcard_entries_;
};

// ---------------------------------------------------------------------------
// Gateway: retry, response cache, in-process deduplication
// ---------------------------------------------------------------------------

struct GatewayOptions {
  int max_retries = 2;          // extra attempts after the first, transport errors only
  double backoff_ms = 250.0;    // doubles per retry
  std::string cache_dir;        // empty disables the on-disk cache
  std::string pipeline_version = "1";
};

/// Front door for all completions. Identical requests are answered from the
/// on-disk cache when one is configured, concurrent duplicates collapse to a
/// single backend call, and transport errors are retried with exponential
/// backoff. Cache hits and deduplicated joiners report zero usage so cost
/// totals only count work the backend actually performed.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {})
      : backend_(std::move(backend)), options_(std::move(options)) {
    if (!backend_) throw BackendUnconfigured("gateway needs a backend");
  }

  ChatResponse complete(const ChatRequest& request) {
    const std::string key = request_key(request);

    if (!options_.cache_dir.empty()) {
      if (auto text = read_cache(key)) {
        ChatResponse r;
        r.text = *text;
        r.cached = true;
        return r;
      }
    }

    std::shared_future<Settled> follower;
    std::promise<Settled> leader_promise;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = inflight_.find(key);
      if (it != inflight_.end()) {
        follower = it->second;
      } else {
        inflight_.emplace(key, leader_promise.get_future().share());
      }
    }
    if (follower.valid()) {
      Settled settled = follower.get();  // rethrows the leader's failure
      ChatResponse r;
      r.text = settled.text;
      r.cached = true;
      return r;
    }

    try {
      ChatResponse response = complete_with_retry(request);
      if (!options_.cache_dir.empty()) write_cache(key, request, response.text);
      leader_promise.set_value({response.text, response.usage});
      finish(key);
      return response;
    } catch (...) {
      leader_promise.set_exception(std::current_exception());
      finish(key);
      throw;
    }
  }

  /// Cache key over everything that influences the completion.
  std::string request_key(const ChatRequest& request) const {
    char params[64];
    std::snprintf(params, sizeof(params), "%.6g\x1f%.6g", request.temperature,
                  request.top_p);
    std::string material = options_.pipeline_version;
    material += '\x1f';
    material += request.stage;
    material += '\x1f';
    material += request.model;
    material += '\x1f';
    material += params;
    material += '\x1f';
    material += request.prompt;
    return sha256_hex(material);
  }

 private:
  struct Settled {
    std::string text;
    UsageRecord usage;
  };

  ChatResponse complete_with_retry(const ChatRequest& request) {
    int attempt = 0;
    for (;;) {
      try {
        return backend_->complete(request);
      } catch (const TransportError&) {
        if (attempt >= options_.max_retries) throw;
        double delay = options_.backoff_ms * static_cast<double>(1 << attempt);
        if (delay > 0)
          std::this_thread::sleep_for(
              std::chrono::duration<double, std::milli>(delay));
        ++attempt;
      }
    }
  }

  std::filesystem::path cache_path(const std::string& key) const {
    return std::filesystem::path(options_.cache_dir) / (key + ".json");
  }

  std::optional<std::string> read_cache(const std::string& key) const {
    std::ifstream in(cache_path(key));
    if (!in) return std::nullopt;
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;  // corrupt entries are treated as misses
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
      return std::nullopt;
    return j["text"].get<std::string>();
  }

  void write_cache(const std::string& key, const ChatRequest& request,
                   const std::string& text) const {
    std::error_code ec;
    std::filesystem::create_directories(options_.cache_dir, ec);
    nlohmann::ordered_json j;
    j["stage"] = request.stage;
    j["model"] = request.model;
    j["text"] = text;
    auto final_path = cache_path(key);
    auto tmp_path = final_path;
    tmp_path += ".tmp";
    {
      std::ofstream out(tmp_path);
      if (!out) return;  // caching is best effort
      out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp_path, final_path, ec);
  }

  void finish(const std::string& key) {
    std::lock_guard<std::mutex> lock(mutex_);
    inflight_.erase(key);
  }

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  std::mutex mutex_;
  std::map<std::string, std::shared_future<Settled>> inflight_;
};

}  // namespace marg
