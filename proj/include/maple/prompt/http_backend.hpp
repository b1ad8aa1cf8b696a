// SPDX-License-Identifier: Apache-2.0
//
// Chat-completion backend over HTTP(S). Sends role/content messages with
// temperature 0 and reads choices[0].message.content. Transport errors,
// 429 and 5xx responses are retried with exponential backoff.

#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "maple/errors.hpp"
#include "maple/prompt/backend.hpp"

namespace maple {

inline constexpr const char* kApiKeyEnv = "MAPLE_LLM_API_KEY";
inline constexpr const char* kEndpointEnv = "MAPLE_LLM_ENDPOINT";
inline constexpr const char* kModelEnv = "MAPLE_LLM_MODEL";

struct HttpBackendConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4";
  std::string api_key;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{60};

  // Reads credentials (required) and optional endpoint/model overrides.
  static HttpBackendConfig from_env() {
    HttpBackendConfig c;
    const char* key = std::getenv(kApiKeyEnv);
    if (key == nullptr || *key == '\0') {
      throw ConfigError(std::string("live LLM backend needs credentials in $") + kApiKeyEnv);
    }
    c.api_key = key;
    if (const char* ep = std::getenv(kEndpointEnv); ep && *ep) c.endpoint = ep;
    if (const char* m = std::getenv(kModelEnv); m && *m) c.model = m;
    return c;
  }
};

class HttpChatBackend : public LlmBackend {
 public:
  explicit HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.api_key.empty()) throw ConfigError("HTTP backend requires an API key");
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must include a scheme: " + config_.endpoint);
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    origin_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
  }

  static nlohmann::json request_body(const LlmRequest& r, const std::string& model) {
    return {{"model", model},
            {"temperature", 0},
            {"messages",
             nlohmann::json::array({{{"role", "system"}, {"content", r.system}}, {{"role", "user"}, {"content", r.user}}})}};
  }

  std::string complete(const LlmRequest& r) override {
    const std::string body = request_body(r, config_.model).dump();
    httplib::Headers headers{{"Authorization", "Bearer " + config_.api_key}};
    auto backoff = config_.initial_backoff;
    std::string problem;
    for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Client client(origin_);
      client.set_connection_timeout(config_.timeout);
      client.set_read_timeout(config_.timeout);
      auto res = client.Post(path_, headers, body, "application/json");
      if (!res) {
        problem = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        problem = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw BackendError("LLM endpoint returned HTTP " + std::to_string(res->status));
      try {
        auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed chat-completion response: ") + e.what());
      }
    }
    throw BackendError("LLM endpoint unreachable after " + std::to_string(config_.max_attempts) +
                       " attempts: " + problem);
  }

 private:
  HttpBackendConfig config_;
  std::string origin_;
  std::string path_;
};

}  // namespace maple
