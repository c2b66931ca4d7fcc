#include "convqr/chat_client.hpp"

#include <cstdlib>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "convqr/bm25.hpp"
#include "convqr/errors.hpp"
#include "convqr/util.hpp"

namespace convqr {

HttpChatClient::HttpChatClient(std::string base_url, std::string api_key)
    : api_key_(std::move(api_key)) {
  std::string url = trim(base_url);
  if (url.empty()) throw ConfigError("client.base_url", "empty chat endpoint URL");
  if (starts_with(url, "https://")) {
    throw ConfigError("client.base_url",
                      "https endpoints are not supported in this build; use an http endpoint or proxy");
  }
  if (!starts_with(url, "http://")) {
    throw ConfigError("client.base_url", "expected an http:// URL, got \"" + url + "\"");
  }
  auto slash = url.find('/', 7);
  if (slash == std::string::npos) {
    host_ = url;
    path_prefix_.clear();
  } else {
    host_ = url.substr(0, slash);
    path_prefix_ = url.substr(slash);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

std::unique_ptr<HttpChatClient> HttpChatClient::from_env() {
  const char* base = std::getenv("LLM_API_BASE");
  const char* key = std::getenv("LLM_API_KEY");
  if (base == nullptr || std::string(base).empty()) {
    throw ConfigError("client.base_url",
                      "LLM_API_BASE is not set; set it or run with --mock-llm");
  }
  return std::make_unique<HttpChatClient>(base, key ? key : "");
}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
  nlohmann::json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  body["messages"] = std::move(messages);

  httplib::Client client(host_);
  client.set_read_timeout(120, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto result = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(),
                            "application/json");
  if (!result) {
    throw TransportError("chat endpoint unreachable: " + httplib::to_string(result.error()));
  }
  if (result->status == 429 || result->status >= 500) {
    throw TransportError("chat endpoint returned HTTP " + std::to_string(result->status));
  }
  if (result->status >= 400) {
    throw Error("chat request rejected with HTTP " + std::to_string(result->status) + ": " +
                result->body.substr(0, 200));
  }
  nlohmann::json payload;
  try {
    payload = nlohmann::json::parse(result->body);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("unparseable chat response: ") + ex.what());
  }
  if (!payload.contains("choices") || payload["choices"].empty()) {
    throw Error("chat response has no choices");
  }
  const auto& choice = payload["choices"][0];
  ChatResponse response;
  response.content = choice.contains("message") ? choice["message"].value("content", std::string())
                                                : choice.value("text", std::string());
  response.finish_reason = choice.value("finish_reason", std::string());
  return response;
}

namespace {

const std::set<std::string>& mock_stopwords() {
  static const std::set<std::string> words = {
      "the", "and", "was", "were", "from", "that", "this", "with", "what", "when",
      "where", "who", "why", "how", "did", "does", "for", "are", "its", "it",
      "about", "any", "his", "her", "their", "they", "them", "you", "your",
      "have", "has", "had", "into", "also", "there", "which", "been", "being"};
  return words;
}

bool is_turn_marker(const std::string& token) {
  if (token.size() < 2 || (token[0] != 'q' && token[0] != 'a')) return false;
  for (std::size_t i = 1; i < token.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(token[i]))) return false;
  }
  return true;
}

// Unique content words of the test instance, in first-seen order.
std::vector<std::string> salient_terms(const std::string& text) {
  std::vector<std::string> terms;
  std::set<std::string> seen;
  for (const auto& token : tokenize(text)) {
    if (token.size() < 3) continue;
    if (is_turn_marker(token)) continue;
    if (mock_stopwords().count(token) > 0) continue;
    if (seen.insert(token).second) terms.push_back(token);
  }
  return terms;
}

struct TestInstance {
  std::string context;
  std::string question;
};

// The prompt ends with "- - -\n\nConversation:\n<ctx>\n\nQuestion: <q>\n\n<Label>:".
TestInstance extract_test_instance(const std::string& prompt) {
  TestInstance instance;
  auto sep = prompt.rfind("- - -");
  std::string tail = sep == std::string::npos ? prompt : prompt.substr(sep);
  auto conv = tail.find("Conversation:\n");
  if (conv == std::string::npos) return instance;
  auto q = tail.find("\n\nQuestion: ", conv);
  if (q == std::string::npos) return instance;
  instance.context = tail.substr(conv + 14, q - (conv + 14));
  auto q_start = q + 12;
  auto q_end = tail.find("\n\n", q_start);
  if (q_end == std::string::npos) q_end = tail.size();
  instance.question = trim(tail.substr(q_start, q_end - q_start));
  return instance;
}

int requested_count(const std::string& prompt, int fallback) {
  // First integer in the instruction (the text before the first separator).
  auto sep = prompt.find("- - -");
  const std::string head = sep == std::string::npos ? prompt : prompt.substr(0, sep);
  std::size_t i = 0;
  while (i < head.size() && !std::isdigit(static_cast<unsigned char>(head[i]))) ++i;
  if (i == head.size()) return fallback;
  int value = 0;
  while (i < head.size() && std::isdigit(static_cast<unsigned char>(head[i]))) {
    value = value * 10 + (head[i] - '0');
    ++i;
  }
  return value > 0 ? value : fallback;
}

std::string question_core(const std::string& question) {
  std::string core = trim(question);
  while (!core.empty() && (core.back() == '?' || core.back() == '.' || core.back() == '!')) {
    core.pop_back();
  }
  return trim(core);
}

std::string join_terms(const std::vector<std::string>& terms, std::size_t count,
                       const std::vector<std::size_t>& order) {
  std::string out;
  for (std::size_t i = 0; i < count && i < order.size(); ++i) {
    if (!out.empty()) out.push_back(' ');
    out += terms[order[i]];
  }
  return out;
}

// Candidate i carries roughly i/n of the available salient terms, so the
// set spans vague-to-specific rewrites and retrieval ranks spread out.
std::string mock_rewrite(const TestInstance& instance, const std::vector<std::string>& terms,
                         int index, int total, Rng& rng) {
  const std::size_t max_terms = std::min<std::size_t>(terms.size(), 6);
  std::size_t k = 0;
  if (total > 1) {
    k = (static_cast<std::size_t>(index) * max_terms) / static_cast<std::size_t>(total - 1);
  }
  auto order = rng.permutation(terms.size());
  std::string rewrite = question_core(instance.question);
  const std::string extra = join_terms(terms, k, order);
  if (!extra.empty()) rewrite += " " + extra;
  return rewrite + "?";
}

std::string mock_answer(const std::vector<std::string>& terms, Rng& rng) {
  auto order = rng.permutation(terms.size());
  const std::size_t k = std::min<std::size_t>(terms.size(), 4 + rng.below(4));
  std::string body = join_terms(terms, k, order);
  if (body.empty()) body = "no further information";
  return "It likely involves " + body + ".";
}

}  // namespace

ChatResponse MockChatClient::complete(const ChatRequest& request) {
  std::string prompt;
  for (const auto& m : request.messages) prompt += m.content;

  std::uint64_t call_seed = seed_ ^ fnv1a64(prompt);

  if (prompt.find("impartial judge") != std::string::npos) {
    Rng rng(seed_substream(call_seed, "judge"));
    const std::uint64_t roll = rng.below(5);
    const char* verdict = roll < 2 ? "A" : (roll < 4 ? "B" : "Tie");
    return ChatResponse{std::string("Judge: ") + verdict, "stop"};
  }

  const TestInstance instance = extract_test_instance(prompt);
  const auto terms = salient_terms(instance.context + "\n" + instance.question);
  std::ostringstream out;

  if (prompt.find("information-Rewrite pairs") != std::string::npos) {
    const int n = requested_count(prompt, 10);
    for (int i = 0; i < n; ++i) {
      Rng rng(seed_substream(call_seed, "planning-" + std::to_string(i)));
      auto order = rng.permutation(terms.size());
      out << "Info " << (i + 1) << ": Needs " << join_terms(terms, std::min<std::size_t>(terms.size(), 2), order)
          << " background.\n";
      out << "Rewrite " << (i + 1) << ": " << mock_rewrite(instance, terms, i, n, rng) << "\n";
    }
  } else if (prompt.find("answer candidates") != std::string::npos) {
    const int n = requested_count(prompt, 5);
    for (int i = 0; i < n; ++i) {
      Rng rng(seed_substream(call_seed, "answer-" + std::to_string(i)));
      out << "Answer " << (i + 1) << ": " << mock_answer(terms, rng) << "\n";
    }
  } else if (prompt.find("candidates for the rewrite") != std::string::npos) {
    const int n = requested_count(prompt, 10);
    for (int i = 0; i < n; ++i) {
      Rng rng(seed_substream(call_seed, "rewrite-" + std::to_string(i)));
      out << "Rewrite " << (i + 1) << ": " << mock_rewrite(instance, terms, i, n, rng) << "\n";
    }
  } else {
    return ChatResponse{"", "stop"};
  }
  return ChatResponse{out.str(), "stop"};
}

ChatResponse ScriptedChatClient::complete(const ChatRequest& request) {
  std::lock_guard<std::mutex> lock(mutex_);
  requests_.push_back(request);
  if (script_.empty()) {
    throw TransportError("scripted client exhausted");
  }
  Entry entry = std::move(script_.front());
  script_.pop_front();
  if (std::holds_alternative<TransportFailure>(entry)) {
    throw TransportError(std::get<TransportFailure>(entry).message);
  }
  return ChatResponse{std::get<std::string>(entry), "stop"};
}

}  // namespace convqr
