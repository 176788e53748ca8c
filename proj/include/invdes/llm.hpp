#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace invdes {

struct ChatMessage {
  std::string role;  // system | user | assistant | tool
  std::string content;
  long long sequence = -1;  // assigned by the memory store
};

using Transcript = std::vector<ChatMessage>;

// Append-only per-session transcript store, persisted one JSON file per
// session under a directory. Unknown sessions read back empty.
class MemoryStore {
 public:
  explicit MemoryStore(std::string dir);

  long long append(const std::string& session, ChatMessage msg);
  Transcript get(const std::string& session) const;

 private:
  std::string dir_;
  std::string session_path(const std::string& session) const;
};

// Validates a parsed LLM reply; returns an error description or nullopt.
struct ResponseSchema {
  std::string description;  // included in corrective retry messages
  std::function<std::optional<std::string>(const nlohmann::json&)> validate;
};

// Transport: takes the chat-completions request body, returns the assistant
// message content. Throws TransportError on delivery failure.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual std::string complete(const nlohmann::json& request_body) = 0;
};

// Plain HTTP(S) POST to an OpenAI-style chat-completions endpoint.
class HttpTransport : public ChatTransport {
 public:
  HttpTransport(std::string base_url, std::string api_key, int timeout_s);
  std::string complete(const nlohmann::json& request_body) override;

  // Total network attempts across the process; lets the offline test suite
  // assert that mock/deterministic runs never touch the network.
  static long network_attempts() { return attempts_.load(); }

 private:
  std::string base_url_, api_key_;
  int timeout_s_;
  static std::atomic<long> attempts_;
};

// Replays canned assistant replies in call order, from a vector or a script
// file (JSON: either an array of strings or {"replies": [...]}; entries may
// also be objects, which are serialized to their JSON text).
class MockTransport : public ChatTransport {
 public:
  explicit MockTransport(std::vector<std::string> replies);
  static std::unique_ptr<MockTransport> from_file(const std::string& path);

  std::string complete(const nlohmann::json& request_body) override;
  std::size_t calls() const { return next_; }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

struct LlmConfig {
  std::string base_url;  // AGENT_LLM_BASE_URL
  std::string api_key;   // AGENT_LLM_API_KEY
  std::string model;     // AGENT_LLM_MODEL
  double temperature = 0.0;
  int timeout_s = 60;
  int max_schema_retries = 3;  // corrective retries after the first attempt
  int max_transport_retries = 3;
  double backoff_base_s = 1.0;
  double backoff_cap_s = 30.0;

  static LlmConfig from_env();
};

// Chat-completion client with schema validation, corrective retries and
// exponential backoff. The final user message of each request and the reply
// are recorded into the session transcript when a memory store is attached.
class LlmClient {
 public:
  LlmClient(LlmConfig cfg, std::unique_ptr<ChatTransport> transport,
            MemoryStore* memory = nullptr);

  // Live client over HTTP; requires base_url and api_key.
  static std::unique_ptr<LlmClient> live(LlmConfig cfg, MemoryStore* memory = nullptr);
  static std::unique_ptr<LlmClient> mock(std::vector<std::string> replies,
                                         MemoryStore* memory = nullptr);

  // Sends messages; when schema is given, extracts the first JSON object from
  // the reply, validates it, and retries with a corrective message up to
  // max_schema_retries times. Throws SchemaError / TransportError.
  ChatMessage chat(const std::string& session, const Transcript& messages,
                   const ResponseSchema* schema = nullptr);

  // Parsed variant: returns the validated JSON object.
  nlohmann::json chat_json(const std::string& session, const Transcript& messages,
                           const ResponseSchema& schema);

  const LlmConfig& config() const { return cfg_; }

 private:
  LlmConfig cfg_;
  std::unique_ptr<ChatTransport> transport_;
  MemoryStore* memory_;

  std::string complete_with_backoff(const nlohmann::json& body);
};

// Extracts the first JSON object embedded in free text (tolerates code fences
// and prose around it). Returns nullopt if none parses.
std::optional<nlohmann::json> extract_json_object(const std::string& text);

}  // namespace invdes
