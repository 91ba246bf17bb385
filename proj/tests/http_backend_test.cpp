#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "marg/errors.hpp"
#include "marg/gateway.hpp"
#include "marg/http_backend.hpp"

namespace {

/// In-process chat-completion endpoint bound to an ephemeral port.
struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread runner;

  explicit LocalServer(httplib::Server::Handler handler) {
    server.Post("/v1/chat/completions", std::move(handler));
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    runner = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    runner.join();
  }
  std::string base_url() const {
    return "http://127.0.0.1:" + std::to_string(port) + "/v1";
  }
};

std::string chat_reply(const std::string& content, int in_tokens, int out_tokens) {
  nlohmann::json j;
  j["choices"] = {{{"message", {{"role", "assistant"}, {"content", content}}}}};
  j["usage"] = {{"prompt_tokens", in_tokens}, {"completion_tokens", out_tokens}};
  return j.dump();
}

}  // namespace

TEST_CASE("http backend posts the chat request and reads usage") {
  nlohmann::json seen;
  std::string seen_auth;
  LocalServer local([&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    seen_auth = req.get_header_value("Authorization");
    res.set_content(chat_reply("Score: 0.7, Reason: close match", 42, 7),
                    "application/json");
  });

  marg::HttpBackendConfig config;
  config.base_url = local.base_url();
  config.api_key = "test-key";
  config.model = "env-model";
  marg::HttpBackend backend(config);

  marg::ChatRequest request;
  request.stage = "sim_technical";
  request.prompt = "Compare the two technical profiles.";
  request.model = "default";
  marg::ChatResponse response = backend.complete(request);

  CHECK(response.text == "Score: 0.7, Reason: close match");
  CHECK(response.usage.input_tokens == 42);
  CHECK(response.usage.output_tokens == 7);
  CHECK(response.usage.calls == 1);
  CHECK(response.usage.wall_time_ms >= 0.0);
  CHECK_FALSE(response.cached);

  CHECK(seen_auth == "Bearer test-key");
  CHECK(seen["model"] == "env-model");  // "default" defers to the configured model
  CHECK(seen["messages"][0]["role"] == "user");
  CHECK(seen["messages"][0]["content"] == "Compare the two technical profiles.");
  CHECK(seen["temperature"].get<double>() == 0.2);
  CHECK(seen["top_p"].get<double>() == 1.0);

  request.model = "explicit-model";
  backend.complete(request);
  CHECK(seen["model"] == "explicit-model");
}

TEST_CASE("http backend maps failure modes to transport errors") {
  std::atomic<int> hits{0};
  LocalServer local([&](const httplib::Request&, httplib::Response& res) {
    int hit = ++hits;
    if (hit <= 2) {
      res.status = hit == 1 ? 500 : 429;
      res.set_content("overloaded", "text/plain");
      return;
    }
    res.set_content(chat_reply("Score: 0.5", 5, 3), "application/json");
  });

  marg::HttpBackendConfig config;
  config.base_url = local.base_url();
  config.api_key = "k";
  auto backend = std::make_shared<marg::HttpBackend>(config);

  marg::ChatRequest request;
  request.stage = "sim_claim";
  request.prompt = "p";

  // Raw backend throws; the gateway's bounded retries ride over 5xx and 429.
  CHECK_THROWS_MATCHES(backend->complete(request), marg::TransportError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("500")));
  hits = 0;
  marg::GatewayOptions options;
  options.backoff_ms = 1;
  marg::Gateway gateway(backend, options);
  marg::ChatResponse response = gateway.complete(request);
  CHECK(response.text == "Score: 0.5");
  CHECK(hits == 3);
}

TEST_CASE("http backend rejects replies without choices") {
  LocalServer local([&](const httplib::Request&, httplib::Response& res) {
    res.set_content("{\"object\":\"error\"}", "application/json");
  });
  marg::HttpBackendConfig config;
  config.base_url = local.base_url();
  marg::HttpBackend backend(config);
  marg::ChatRequest request;
  request.stage = "s";
  request.prompt = "p";
  CHECK_THROWS_AS(backend.complete(request), marg::TransportError);

  marg::HttpBackendConfig dead;
  dead.base_url = "http://127.0.0.1:1/v1";
  dead.timeout_seconds = 0.2;
  marg::HttpBackend unreachable(dead);
  CHECK_THROWS_AS(unreachable.complete(request), marg::TransportError);
}

TEST_CASE("from_env requires all three variables") {
  LocalServer local([&](const httplib::Request&, httplib::Response& res) {
    res.set_content(chat_reply("Score: 0.9", 4, 2), "application/json");
  });
  setenv("MARG_API_BASE", local.base_url().c_str(), 1);
  setenv("MARG_MODEL", "env-model", 1);
  setenv("MARG_API_KEY", "env-key", 1);
  auto backend = marg::HttpBackend::from_env();
  marg::ChatRequest request;
  request.stage = "s";
  request.prompt = "p";
  CHECK(backend->complete(request).text == "Score: 0.9");

  unsetenv("MARG_API_BASE");
  CHECK_THROWS_AS(marg::HttpBackend::from_env(), marg::BackendUnconfigured);
  setenv("MARG_API_BASE", local.base_url().c_str(), 1);
  unsetenv("MARG_API_KEY");
  CHECK_THROWS_AS(marg::HttpBackend::from_env(), marg::BackendUnconfigured);
  unsetenv("MARG_API_BASE");
  unsetenv("MARG_MODEL");
}
