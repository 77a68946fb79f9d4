#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include "httplib.h"

#include "rubricforge/backend.hpp"
#include "rubricforge/errors.hpp"

namespace rforge {

// OpenAI-compatible chat transport:
//   POST {endpoint_url}/chat/completions
//   body {"model", "messages", "temperature", "max_tokens"}
//   success body must contain choices[0].message.content.
// Credentials come from the environment variable named in the profile and
// travel as "Authorization: Bearer <key>".
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(const BackendProfile& profile, int timeout_seconds = 120)
      : profile_(profile) {
    const std::string& url = profile_.endpoint_url;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
      throw ConfigError("endpoint_url needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_ = url;
    } else {
      base_ = url.substr(0, path_start);
      path_prefix_ = url.substr(path_start);
      while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
    client_ = std::make_unique<httplib::Client>(base_);
    client_->set_connection_timeout(timeout_seconds);
    client_->set_read_timeout(timeout_seconds);
    client_->set_write_timeout(timeout_seconds);
  }

  ChatResponse complete(const ChatRequest& request) override {
    httplib::Headers headers;
    if (!profile_.api_key_env.empty()) {
      if (const char* key = std::getenv(profile_.api_key_env.c_str()); key != nullptr)
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const std::string body = canonical_request_body(request);
    httplib::Result res =
        client_->Post(path_prefix_ + "/chat/completions", headers, body, "application/json");

    if (!res)
      throw TransportError("connection to " + base_ + " failed: " + httplib::to_string(res.error()),
                           0, 1);
    if (res->status == 429 || res->status >= 500)
      throw TransportError("server returned status " + std::to_string(res->status), res->status,
                           1);
    if (res->status < 200 || res->status >= 300)
      throw ProtocolError("server returned status " + std::to_string(res->status), res->status);

    json parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) throw DecodeError("response body is not JSON");
    if (!parsed.contains("choices") || !parsed["choices"].is_array() ||
        parsed["choices"].empty() || !parsed["choices"][0].contains("message"))
      throw DecodeError("response body missing choices[0].message");

    ChatResponse response;
    const json& message = parsed["choices"][0]["message"];
    if (!message.contains("content") || message["content"].is_null())
      throw DecodeError("response message has no content");
    response.content = message["content"].get<std::string>();
    response.finish_reason = parsed["choices"][0].value("finish_reason", "stop");
    if (parsed.contains("usage")) {
      response.usage.prompt_tokens = parsed["usage"].value("prompt_tokens", 0L);
      response.usage.completion_tokens = parsed["usage"].value("completion_tokens", 0L);
    }
    return response;
  }

 private:
  BackendProfile profile_;
  std::string base_;
  std::string path_prefix_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace rforge
