#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rubricforge/digest.hpp"
#include "rubricforge/errors.hpp"
#include "rubricforge/json_extract.hpp"

namespace rforge {

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_output_tokens = 2048;

  void validate() const {
    if (messages.empty()) throw ContractError("chat request has no messages");
    if (messages.back().role != "user")
      throw ContractError("last chat message must have role user");
  }
};

struct ChatUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
};

struct ChatResponse {
  std::string content;
  std::string finish_reason = "stop";
  ChatUsage usage;
};

enum class BackendRole { generator, judge, classifier };

inline std::string_view to_string(BackendRole role) {
  switch (role) {
    case BackendRole::generator: return "generator";
    case BackendRole::judge: return "judge";
    case BackendRole::classifier: return "classifier";
  }
  return "generator";
}

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 100;
};

struct BackendProfile {
  std::string name;
  std::string endpoint_url;
  std::string api_key_env;
  BackendRole role = BackendRole::generator;
  int max_concurrency = 4;
  RetryPolicy retry;

  void validate() const {
    if (name.empty()) throw ConfigError("backend profile has no name");
    if (max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1: " + name);
    if (retry.max_attempts < 1) throw ConfigError("max_attempts must be >= 1: " + name);
    if (retry.base_backoff_ms < 0) throw ConfigError("base_backoff_ms must be >= 0: " + name);
  }
};

// Canonical request body: sorted keys, no insignificant whitespace. This is
// both the wire body for /chat/completions and the cache-digest preimage.
inline std::string canonical_request_body(const ChatRequest& request) {
  json messages = json::array();
  for (const ChatMessage& m : request.messages)
    messages.push_back({{"role", m.role}, {"content", m.content}});
  json body{
      {"model", request.model},
      {"messages", std::move(messages)},
      {"temperature", request.temperature},
      {"max_tokens", request.max_output_tokens},
  };
  return body.dump();
}

inline std::string request_digest(const ChatRequest& request) {
  return sha256_hex(canonical_request_body(request));
}

// Exponential backoff schedule; nondecreasing in the attempt number.
inline int backoff_delay_ms(int base_backoff_ms, int attempt) {
  if (attempt < 1) return 0;
  long long delay = base_backoff_ms;
  for (int i = 1; i < attempt; ++i) delay = std::min<long long>(delay * 2, 60'000);
  return static_cast<int>(delay);
}

// ---------------------------------------------------------------------------
// Transport interface
// ---------------------------------------------------------------------------

// A single-shot transport. Implementations throw TransportError for
// retryable failures (connection loss, timeout, HTTP 429/5xx), ProtocolError
// for non-retryable rejections, DecodeError for malformed bodies.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// Wraps a function; the workhorse for scripted unit tests.
class CallbackBackend : public Backend {
 public:
  explicit CallbackBackend(std::function<ChatResponse(const ChatRequest&)> fn)
      : fn_(std::move(fn)) {}

  ChatResponse complete(const ChatRequest& request) override { return fn_(request); }

 private:
  std::function<ChatResponse(const ChatRequest&)> fn_;
};

// Replays a fixed transcript: each step is either a canned response or an
// HTTP status to fail with. Steps are consumed in order.
class ScriptedBackend : public Backend {
 public:
  using Step = std::variant<ChatResponse, int>;

  explicit ScriptedBackend(std::vector<Step> steps) : steps_(std::move(steps)) {}

  ChatResponse complete(const ChatRequest&) override {
    std::size_t index = next_.fetch_add(1);
    if (index >= steps_.size())
      throw TransportError("scripted transcript exhausted", 0, 1);
    const Step& step = steps_[index];
    if (std::holds_alternative<ChatResponse>(step)) return std::get<ChatResponse>(step);
    const int status = std::get<int>(step);
    if (status == 429 || status >= 500)
      throw TransportError("scripted failure status " + std::to_string(status), status, 1);
    throw ProtocolError("scripted failure status " + std::to_string(status), status);
  }

  std::size_t calls() const { return next_.load(); }

 private:
  std::vector<Step> steps_;
  std::atomic<std::size_t> next_{0};
};

// ---------------------------------------------------------------------------
// Response cache
// ---------------------------------------------------------------------------

namespace detail {

inline json response_to_json(const ChatResponse& response) {
  return json{
      {"content", response.content},
      {"finish_reason", response.finish_reason},
      {"usage",
       {{"prompt_tokens", response.usage.prompt_tokens},
        {"completion_tokens", response.usage.completion_tokens}}},
  };
}

inline ChatResponse response_from_json(const json& rec) {
  ChatResponse response;
  response.content = rec.value("content", "");
  response.finish_reason = rec.value("finish_reason", "stop");
  if (rec.contains("usage")) {
    response.usage.prompt_tokens = rec["usage"].value("prompt_tokens", 0L);
    response.usage.completion_tokens = rec["usage"].value("completion_tokens", 0L);
  }
  return response;
}

}  // namespace detail

// Append-only response cache keyed by (profile name, request digest).
// When constructed with a directory, entries persist to one JSONL file per
// client and reload on open.
class ResponseCache {
 public:
  ResponseCache() = default;

  explicit ResponseCache(const std::string& file_path) : file_path_(file_path) {
    std::ifstream in(file_path, std::ios::binary);
    std::string line;
    while (in && std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.contains("key") || !rec.contains("response")) continue;
      entries_[rec["key"].get<std::string>()] = detail::response_from_json(rec["response"]);
    }
  }

  std::optional<ChatResponse> lookup(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void store(const std::string& key, const ChatResponse& response) {
    std::lock_guard lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, response);
    if (!inserted || file_path_.empty()) return;
    std::ofstream out(file_path_, std::ios::binary | std::ios::app);
    if (out)
      out << json{{"key", key}, {"response", detail::response_to_json(response)}}.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  std::string file_path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, ChatResponse> entries_;
};

namespace detail {

// Counting semaphore with a runtime-configured limit.
class AdmissionLimit {
 public:
  explicit AdmissionLimit(int max_slots) : slots_(max_slots) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return slots_ > 0; });
    --slots_;
  }

  void release() {
    {
      std::lock_guard lock(mutex_);
      ++slots_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int slots_;
};

class AdmissionGuard {
 public:
  explicit AdmissionGuard(AdmissionLimit& limit) : limit_(limit) { limit_.acquire(); }
  ~AdmissionGuard() { limit_.release(); }
  AdmissionGuard(const AdmissionGuard&) = delete;
  AdmissionGuard& operator=(const AdmissionGuard&) = delete;

 private:
  AdmissionLimit& limit_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Client: retries + cache + per-profile admission
// ---------------------------------------------------------------------------

class BackendClient {
 public:
  BackendClient() = default;

  // Persist responses under cache_file (JSONL) when non-empty.
  explicit BackendClient(const std::string& cache_file)
      : cache_(cache_file.empty() ? ResponseCache() : ResponseCache(cache_file)) {}

  void register_backend(BackendProfile profile, std::shared_ptr<Backend> transport) {
    profile.validate();
    std::string name = profile.name;
    auto entry = std::make_unique<Entry>(std::move(profile), std::move(transport));
    std::lock_guard lock(mutex_);
    entries_[name] = std::move(entry);
  }

  const BackendProfile& profile(const std::string& name) const { return entry(name).profile; }

  bool has_backend(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return entries_.count(name) > 0;
  }

  // Cache-first completion with bounded retries. Identical requests within a
  // run hit the cache, observable through transport_calls().
  ChatResponse complete(const std::string& profile_name, const ChatRequest& request) {
    request.validate();
    Entry& e = entry(profile_name);
    const std::string key = e.profile.name + ":" + request_digest(request);
    if (auto cached = cache_.lookup(key)) return *cached;

    detail::AdmissionGuard guard(e.admission);
    // Another worker may have completed the same request while we waited.
    if (auto cached = cache_.lookup(key)) return *cached;

    int last_status = 0;
    std::string last_message;
    const int max_attempts = e.profile.retry.max_attempts;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      try {
        e.transport_calls.fetch_add(1);
        ChatResponse response = e.transport->complete(request);
        cache_.store(key, response);
        return response;
      } catch (const TransportError& err) {
        last_status = err.last_status();
        last_message = err.what();
        if (attempt == max_attempts) break;
        const int delay = backoff_delay_ms(e.profile.retry.base_backoff_ms, attempt);
        if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
    }
    throw TransportError("backend " + e.profile.name + " exhausted " +
                             std::to_string(max_attempts) + " attempts: " + last_message,
                         last_status, max_attempts);
  }

  std::size_t transport_calls(const std::string& profile_name) const {
    return entry(profile_name).transport_calls.load();
  }

  std::size_t cache_size() const { return cache_.size(); }

 private:
  struct Entry {
    Entry(BackendProfile p, std::shared_ptr<Backend> t)
        : profile(std::move(p)), transport(std::move(t)), admission(profile.max_concurrency) {}
    BackendProfile profile;
    std::shared_ptr<Backend> transport;
    detail::AdmissionLimit admission;
    std::atomic<std::size_t> transport_calls{0};
  };

  Entry& entry(const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("no backend registered for profile: " + name);
    return *it->second;
  }

  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::unique_ptr<Entry>> entries_;
  ResponseCache cache_;
};

}  // namespace rforge
