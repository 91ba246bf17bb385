#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "marg/errors.hpp"
#include "marg/gateway.hpp"

namespace marg {

struct HttpBackendConfig {
  std::string base_url;  // scheme://host[:port][/path-prefix]
  std::string api_key;
  std::string model = "default";
  double timeout_seconds = 60.0;
};

/// Chat-completion backend speaking the common JSON wire shape:
/// POST {base_url}/chat/completions with model, messages, temperature, top_p;
/// the reply carries choices[0].message.content and a usage block.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty())
      throw BackendUnconfigured("http backend needs a base url");
    split_base(config_.base_url);
  }

  /// Reads MARG_API_BASE, MARG_MODEL, and MARG_API_KEY. All three must be set.
  static std::shared_ptr<HttpBackend> from_env() {
    HttpBackendConfig config;
    config.base_url = env_or_throw("MARG_API_BASE");
    config.model = env_or_throw("MARG_MODEL");
    config.api_key = env_or_throw("MARG_API_KEY");
    return std::make_shared<HttpBackend>(std::move(config));
  }

  ChatResponse complete(const ChatRequest& request) override {
    nlohmann::json body;
    body["model"] = request.model.empty() || request.model == "default"
                        ? config_.model
                        : request.model;
    body["messages"] = {{{"role", "user"}, {"content", request.prompt}}};
    body["temperature"] = request.temperature;
    body["top_p"] = request.top_p;

    httplib::Client client(host_);
    client.set_connection_timeout(std::chrono::milliseconds(
        static_cast<int>(config_.timeout_seconds * 1000.0)));
    client.set_read_timeout(std::chrono::milliseconds(
        static_cast<int>(config_.timeout_seconds * 1000.0)));
    httplib::Headers headers;
    if (!config_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto started = std::chrono::steady_clock::now();
    httplib::Result result = client.Post(path_prefix_ + "/chat/completions",
                                         headers, body.dump(),
                                         "application/json");
    auto elapsed = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - started)
                       .count();

    if (!result)
      throw TransportError("request to " + host_ + " failed: " +
                           httplib::to_string(result.error()));
    if (result->status != 200)
      throw TransportError("status " + std::to_string(result->status) +
                           " from backend: " + head_of(result->body));

    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unparsable backend reply: ") + e.what());
    }
    if (!reply.contains("choices") || reply["choices"].empty() ||
        !reply["choices"][0].contains("message"))
      throw TransportError("backend reply carries no choices: " +
                           head_of(result->body));

    ChatResponse response;
    response.text =
        reply["choices"][0]["message"].value("content", std::string());
    if (reply.contains("usage")) {
      response.usage.input_tokens = reply["usage"].value("prompt_tokens", 0);
      response.usage.output_tokens = reply["usage"].value("completion_tokens", 0);
    }
    response.usage.calls = 1;
    response.usage.wall_time_ms = elapsed;
    return response;
  }

 private:
  static std::string env_or_throw(const char* name) {
    const char* value = std::getenv(name);
    if (!value || !*value)
      throw BackendUnconfigured(std::string(name) + " is not set");
    return value;
  }

  static std::string head_of(const std::string& body) {
    return body.size() <= 120 ? body : body.substr(0, 120) + "...";
  }

  void split_base(const std::string& url) {
    std::size_t scheme = url.find("://");
    std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
    std::size_t slash = url.find('/', host_start);
    host_ = slash == std::string::npos ? url : url.substr(0, slash);
    path_prefix_ = slash == std::string::npos ? "" : url.substr(slash);
    while (!path_prefix_.empty() && path_prefix_.back() == '/')
      path_prefix_.pop_back();
  }

  HttpBackendConfig config_;
  std::string host_;
  std::string path_prefix_;
};

}  // namespace marg
