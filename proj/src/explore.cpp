#include "convqr/explore.hpp"

#include <chrono>
#include <thread>

#include "convqr/errors.hpp"
#include "convqr/jsonl.hpp"
#include "convqr/util.hpp"

namespace convqr {

ChatResponse chat_with_retries(ChatClient& client, const ChatRequest& request,
                               int max_attempts, int backoff_base_ms) {
  if (max_attempts < 1) max_attempts = 1;
  int delay_ms = backoff_base_ms;
  for (int attempt = 1;; ++attempt) {
    try {
      return client.complete(request);
    } catch (const TransportError& err) {
      if (attempt >= max_attempts) {
        throw TransportError("chat call failed after " + std::to_string(attempt) +
                             " attempts: " + err.what());
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
  }
}

std::vector<RewriteCandidate> generate_candidates(const TurnContext& turn, PromptMethod method,
                                                  ChatClient& client,
                                                  const ExploreOptions& options) {
  const int count = options.count_for(method);
  ChatRequest request;
  request.model = options.model;
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;
  request.messages.push_back(
      ChatMessage{"user", build_prompt(method, turn.context, turn.question, count)});

  const ChatResponse response =
      chat_with_retries(client, request, options.max_attempts, options.backoff_base_ms);

  std::vector<ParsedCandidate> parsed;
  try {
    parsed = parse_candidates(response.content, method);
  } catch (const ParseEmptyError& err) {
    throw ParseEmptyError("conversation " + turn.conv_id + " turn " + std::to_string(turn.turn_id) +
                              " (" + to_string(method) + "): " + err.what(),
                          err.raw_text);
  }

  std::vector<RewriteCandidate> candidates;
  candidates.reserve(parsed.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    RewriteCandidate candidate;
    candidate.conv_id = turn.conv_id;
    candidate.turn_id = turn.turn_id;
    candidate.method = method;
    candidate.candidate_idx = static_cast<int>(i);
    if (method == PromptMethod::QueryExpansion) {
      // Human rewrite when available, else the explore stage's chosen
      // question-rewriting base, else the question itself.
      std::string base = turn.human_rewrite && !trim(*turn.human_rewrite).empty()
                             ? *turn.human_rewrite
                             : turn.qe_base.value_or(turn.question);
      candidate.pseudo_answer = parsed[i].pseudo_answer;
      candidate.rewrite =
          compose_expanded_query(base, *parsed[i].pseudo_answer, options.expansion_order);
    } else {
      candidate.rewrite = parsed[i].rewrite;
    }
    candidates.push_back(std::move(candidate));
  }
  return candidates;
}

namespace {

Verdict unswap(Verdict verdict) {
  switch (verdict) {
    case Verdict::A:
      return Verdict::B;
    case Verdict::B:
      return Verdict::A;
    case Verdict::Tie:
      return Verdict::Tie;
  }
  return Verdict::Tie;
}

}  // namespace

nlohmann::json candidate_to_json(const RewriteCandidate& candidate) {
  return nlohmann::json{
      {"conv_id", candidate.conv_id},
      {"turn_id", candidate.turn_id},
      {"method", to_string(candidate.method)},
      {"rewrite", candidate.rewrite},
      {"pseudo_answer",
       candidate.pseudo_answer ? nlohmann::json(*candidate.pseudo_answer) : nlohmann::json(nullptr)},
      {"candidate_idx", candidate.candidate_idx}};
}

RewriteCandidate candidate_from_json(const nlohmann::json& record, const std::string& where) {
  RewriteCandidate candidate;
  try {
    candidate.conv_id = record.at("conv_id").get<std::string>();
    candidate.turn_id = record.at("turn_id").get<int>();
    candidate.method = prompt_method_from_string(record.at("method").get<std::string>());
    candidate.rewrite = record.at("rewrite").get<std::string>();
    if (record.contains("pseudo_answer") && !record["pseudo_answer"].is_null()) {
      candidate.pseudo_answer = record["pseudo_answer"].get<std::string>();
    }
    candidate.candidate_idx = record.at("candidate_idx").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(where + ": bad candidate record: " + ex.what());
  }
  return candidate;
}

std::vector<RewriteCandidate> load_candidates(const std::string& path) {
  std::vector<RewriteCandidate> out;
  for_each_jsonl(path, [&](std::size_t line_no, const nlohmann::json& record) {
    out.push_back(candidate_from_json(record, path + ":" + std::to_string(line_no)));
  });
  return out;
}

void save_candidates(const std::vector<RewriteCandidate>& candidates, const std::string& path) {
  JsonlWriter writer(path);
  for (const auto& candidate : candidates) writer.add(candidate_to_json(candidate));
  writer.commit();
}

Verdict judge_pair(JudgeCriterion criterion, const std::string& conversation,
                   const std::string& rewrite_a, const std::string& rewrite_b,
                   ChatClient& client, const ExploreOptions& options) {
  ChatRequest request;
  request.model = options.model;
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;

  request.messages = {
      ChatMessage{"user", build_judge_prompt(criterion, conversation, rewrite_a, rewrite_b)}};
  const Verdict forward = parse_judge_verdict(
      chat_with_retries(client, request, options.max_attempts, options.backoff_base_ms).content);

  request.messages = {
      ChatMessage{"user", build_judge_prompt(criterion, conversation, rewrite_b, rewrite_a)}};
  const Verdict swapped = unswap(parse_judge_verdict(
      chat_with_retries(client, request, options.max_attempts, options.backoff_base_ms).content));

  return forward == swapped ? forward : Verdict::Tie;
}

}  // namespace convqr
