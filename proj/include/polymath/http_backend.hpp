#pragma once

// Live OpenAI-compatible chat-completions client. Kept in its own header so
// the rest of the engine compiles without httplib; define
// POLYMATH_ENABLE_TLS (and link OpenSSL) for https base URLs.

#include <chrono>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#ifdef POLYMATH_ENABLE_TLS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <json.hpp>

#include "polymath/errors.hpp"
#include "polymath/llm_backend.hpp"

namespace polymath {

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "POLYMATH_API_KEY";
  int timeout_seconds = 60;
  int transport_retries = 3;
  int backoff_base_ms = 200;
  std::map<AssistantKind, RoleConfig> roles = default_role_configs();
};

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    api_key_ = key ? key : "";
    split_base_url();
    client_ = std::make_unique<httplib::Client>(host_);
    client_->set_connection_timeout(cfg_.timeout_seconds);
    client_->set_read_timeout(cfg_.timeout_seconds);
  }

  ChatResponse complete(AssistantKind kind, const std::vector<ChatMessage>& messages,
                        const ChatParams& params = {}) override {
    check_messages(messages);
    auto role_it = cfg_.roles.find(kind);
    if (role_it == cfg_.roles.end())
      throw Error(ErrorCode::invalid_config,
                  std::string("no role config for ") + assistant_kind_name(kind));

    json body;
    body["model"] = role_it->second.model;
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    json jmessages = json::array();
    for (const auto& m : messages) jmessages.push_back({{"role", m.role}, {"content", m.content}});
    body["messages"] = jmessages;
    std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.transport_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(
            std::chrono::milliseconds(cfg_.backoff_base_ms * (1 << (attempt - 1))));
      }
      auto started = std::chrono::steady_clock::now();
      httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
      auto result = client().Post(path_prefix_ + "/chat/completions", headers, payload,
                                  "application/json");
      double latency = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - started)
                           .count();
      if (!result) {
        last_error = "transport error: " + httplib::to_string(result.error());
        continue;
      }
      if (result->status == 401 || result->status == 403)
        throw Error(ErrorCode::auth_failure,
                    "authentication rejected (set " + cfg_.api_key_env + ")");
      if (result->status < 200 || result->status >= 300) {
        last_error = "HTTP " + std::to_string(result->status);
        continue;
      }
      json reply = json::parse(result->body, nullptr, false);
      if (reply.is_discarded() || !reply.contains("choices") || reply.at("choices").empty()) {
        last_error = "malformed completion payload";
        continue;
      }
      ChatResponse out;
      out.content = reply.at("choices").at(0).at("message").value("content", "");
      if (reply.contains("usage")) {
        out.prompt_tokens = reply.at("usage").value("prompt_tokens", 0);
        out.completion_tokens = reply.at("usage").value("completion_tokens", 0);
      }
      out.latency_ms = latency;
      record_request(kind, messages, out.content);
      return out;
    }
    throw Error(ErrorCode::transport_failure,
                last_error + " after " + std::to_string(cfg_.transport_retries + 1) + " attempts");
  }

 private:
  void split_base_url() {
    std::string url = cfg_.base_url;
    std::size_t scheme = url.find("://");
    std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
    std::size_t path_start = url.find('/', host_start);
    if (path_start == std::string::npos) {
      host_ = url;
      path_prefix_ = "";
    } else {
      host_ = url.substr(0, path_start);
      path_prefix_ = url.substr(path_start);
      if (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
#ifndef POLYMATH_ENABLE_TLS
    if (host_.rfind("https://", 0) == 0)
      throw Error(ErrorCode::invalid_config,
                  "https base URL requires a TLS-enabled build (POLYMATH_ENABLE_TLS)");
#endif
  }

  httplib::Client& client() { return *client_; }

  HttpBackendConfig cfg_;
  std::string api_key_;
  std::string host_;
  std::string path_prefix_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace polymath
