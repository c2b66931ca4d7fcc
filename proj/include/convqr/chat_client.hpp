#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace convqr {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 1000;
};

struct ChatResponse {
  std::string content;
  std::string finish_reason;
};

// Chat-completion transport. Implementations must be safe for concurrent
// complete() calls; the pipeline keeps up to `max_in_flight` requests
// outstanding.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// Talks to a {model, messages[], temperature, max_tokens} ->
// {choices[0].message.content} endpoint. Base URL and key come from
// LLM_API_BASE / LLM_API_KEY unless given explicitly. Transport and 5xx
// failures surface as TransportError so callers can retry.
class HttpChatClient : public ChatClient {
 public:
  HttpChatClient(std::string base_url, std::string api_key);

  // Reads LLM_API_BASE and LLM_API_KEY.
  static std::unique_ptr<HttpChatClient> from_env();

  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::string host_;  // scheme://host[:port]
  std::string path_prefix_;
  std::string api_key_;
};

// Deterministic offline stand-in for the exploration and judge calls.
// Recognizes the three exploration prompts and the judge prompt by their
// instruction text, extracts the test instance, and emits well-formed
// candidate lines built from salient context terms. Every byte of output
// is a pure function of (seed, request), so runs are reproducible.
class MockChatClient : public ChatClient {
 public:
  explicit MockChatClient(std::uint64_t seed) : seed_(seed) {}

  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::uint64_t seed_;
};

// Test double that replays a fixed script. An entry is either a response
// body or a TransportFailure, consumed one per call.
class ScriptedChatClient : public ChatClient {
 public:
  struct TransportFailure {
    std::string message = "injected transport failure";
  };
  using Entry = std::variant<std::string, TransportFailure>;

  void push(Entry entry) { script_.push_back(std::move(entry)); }

  ChatResponse complete(const ChatRequest& request) override;

  const std::vector<ChatRequest>& requests() const { return requests_; }

 private:
  std::mutex mutex_;
  std::deque<Entry> script_;
  std::vector<ChatRequest> requests_;
};

}  // namespace convqr
