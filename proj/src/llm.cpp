#include "invdes/llm.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <thread>

#ifndef INVDES_NO_TLS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "invdes/error.hpp"
#include "invdes/util.hpp"

namespace invdes {

using nlohmann::json;

// --- MemoryStore ------------------------------------------------------------------

MemoryStore::MemoryStore(std::string dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string MemoryStore::session_path(const std::string& session) const {
  std::string safe;
  for (char c : session) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    safe += ok ? c : '_';
  }
  if (safe.empty()) safe = "session";
  return (std::filesystem::path(dir_) / (safe + ".json")).string();
}

long long MemoryStore::append(const std::string& session, ChatMessage msg) {
  Transcript transcript = get(session);
  msg.sequence = transcript.empty() ? 0 : transcript.back().sequence + 1;
  transcript.push_back(msg);
  json doc;
  doc["session"] = session;
  json messages = json::array();
  for (const auto& m : transcript) {
    messages.push_back({{"role", m.role}, {"content", m.content}, {"sequence", m.sequence}});
  }
  doc["messages"] = messages;
  write_file_atomic(session_path(session), doc.dump(2) + "\n");
  return msg.sequence;
}

Transcript MemoryStore::get(const std::string& session) const {
  const std::string path = session_path(session);
  if (!std::filesystem::exists(path)) return {};
  Transcript transcript;
  try {
    json doc = json::parse(read_file(path));
    for (const auto& m : doc.at("messages")) {
      transcript.push_back({m.value("role", ""), m.value("content", ""), m.value("sequence", -1LL)});
    }
  } catch (const json::exception& ex) {
    throw LoadError("memory file corrupt for session '" + session + "': " + ex.what());
  }
  return transcript;
}

// --- Transports -------------------------------------------------------------------

std::atomic<long> HttpTransport::attempts_{0};

HttpTransport::HttpTransport(std::string base_url, std::string api_key, int timeout_s)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)), timeout_s_(timeout_s) {
  if (base_url_.empty()) throw ConfigError("HttpTransport: base URL is empty");
}

std::string HttpTransport::complete(const json& request_body) {
  attempts_.fetch_add(1);

  // Split base URL into host part and path prefix.
  std::string url = base_url_;
  std::string scheme_host = url, prefix;
  auto scheme_end = url.find("://");
  auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start != std::string::npos) {
    scheme_host = url.substr(0, path_start);
    prefix = url.substr(path_start);
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Client client(scheme_host);
  client.set_connection_timeout(timeout_s_, 0);
  client.set_read_timeout(timeout_s_, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto res = client.Post(prefix + "/chat/completions", headers, request_body.dump(),
                         "application/json");
  if (!res) {
    throw TransportError("LLM endpoint unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 512));
  }
  try {
    json reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& ex) {
    throw TransportError("malformed chat-completions reply: " + std::string(ex.what()));
  }
}

MockTransport::MockTransport(std::vector<std::string> replies) : replies_(std::move(replies)) {}

std::unique_ptr<MockTransport> MockTransport::from_file(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& ex) {
    throw ConfigError("mock script is not valid JSON: " + std::string(ex.what()));
  }
  const json* list = &doc;
  if (doc.is_object() && doc.contains("replies")) list = &doc["replies"];
  if (!list->is_array()) throw ConfigError("mock script must be an array or {\"replies\": [...]}");
  std::vector<std::string> replies;
  for (const auto& item : *list) {
    replies.push_back(item.is_string() ? item.get<std::string>() : item.dump());
  }
  return std::make_unique<MockTransport>(std::move(replies));
}

std::string MockTransport::complete(const json&) {
  if (next_ >= replies_.size()) {
    throw TransportError("mock script exhausted after " + std::to_string(replies_.size()) +
                         " replies");
  }
  return replies_[next_++];
}

// --- Client -----------------------------------------------------------------------

LlmConfig LlmConfig::from_env() {
  LlmConfig cfg;
  if (const char* v = std::getenv("AGENT_LLM_BASE_URL")) cfg.base_url = v;
  if (const char* v = std::getenv("AGENT_LLM_API_KEY")) cfg.api_key = v;
  if (const char* v = std::getenv("AGENT_LLM_MODEL")) cfg.model = v;
  return cfg;
}

LlmClient::LlmClient(LlmConfig cfg, std::unique_ptr<ChatTransport> transport, MemoryStore* memory)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), memory_(memory) {
  if (!transport_) throw ConfigError("LlmClient requires a transport");
}

std::unique_ptr<LlmClient> LlmClient::live(LlmConfig cfg, MemoryStore* memory) {
  if (cfg.base_url.empty()) {
    throw ConfigError("live LLM mode needs AGENT_LLM_BASE_URL (and AGENT_LLM_API_KEY)");
  }
  auto transport = std::make_unique<HttpTransport>(cfg.base_url, cfg.api_key, cfg.timeout_s);
  return std::make_unique<LlmClient>(std::move(cfg), std::move(transport), memory);
}

std::unique_ptr<LlmClient> LlmClient::mock(std::vector<std::string> replies, MemoryStore* memory) {
  return std::make_unique<LlmClient>(LlmConfig{}, std::make_unique<MockTransport>(std::move(replies)),
                                     memory);
}

std::string LlmClient::complete_with_backoff(const json& body) {
  double delay = cfg_.backoff_base_s;
  for (int attempt = 0;; ++attempt) {
    try {
      return transport_->complete(body);
    } catch (const TransportError&) {
      if (attempt >= cfg_.max_transport_retries) throw;
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
      delay = std::min(delay * 2.0, cfg_.backoff_cap_s);
    }
  }
}

ChatMessage LlmClient::chat(const std::string& session, const Transcript& messages,
                            const ResponseSchema* schema) {
  if (memory_ && !messages.empty()) {
    memory_->append(session, messages.back());
  }

  Transcript working = messages;
  std::string last_reply;
  const int attempts = 1 + std::max(0, schema ? cfg_.max_schema_retries : 0);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    json body;
    body["model"] = cfg_.model;
    body["temperature"] = cfg_.temperature;
    json msgs = json::array();
    for (const auto& m : working) msgs.push_back({{"role", m.role}, {"content", m.content}});
    body["messages"] = msgs;

    last_reply = complete_with_backoff(body);
    ChatMessage reply{"assistant", last_reply, -1};
    if (memory_) memory_->append(session, reply);

    if (!schema) return reply;

    auto parsed = extract_json_object(last_reply);
    std::string problem;
    if (!parsed) {
      problem = "reply did not contain a JSON object";
    } else if (auto err = schema->validate(*parsed)) {
      problem = *err;
    } else {
      return reply;
    }

    ChatMessage corrective{
        "user",
        "Your previous reply was invalid: " + problem +
            ". Reply again with only a JSON object matching this schema: " + schema->description,
        -1};
    working.push_back(reply);
    working.push_back(corrective);
    if (memory_ && attempt + 1 < attempts) memory_->append(session, corrective);
  }
  throw SchemaError("LLM reply failed schema validation after " + std::to_string(attempts) +
                        " attempts",
                    last_reply);
}

json LlmClient::chat_json(const std::string& session, const Transcript& messages,
                          const ResponseSchema& schema) {
  ChatMessage reply = chat(session, messages, &schema);
  auto parsed = extract_json_object(reply.content);
  // chat() only returns once validation passed, so this always holds.
  return *parsed;
}

std::optional<json> extract_json_object(const std::string& text) {
  // Fast path: the whole string is a JSON object.
  {
    json j = json::parse(text, nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  // Otherwise scan for a balanced {...} span.
  for (std::size_t start = text.find('{'); start != std::string::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (c == '\\') {
          ++i;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          json j = json::parse(text.substr(start, i - start + 1), nullptr, false);
          if (!j.is_discarded() && j.is_object()) return j;
          break;
        }
      }
    }
  }
  return std::nullopt;
}

}  // namespace invdes
