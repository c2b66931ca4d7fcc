#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convqr/chat_client.hpp"
#include "convqr/prompts.hpp"

namespace convqr {

struct RewriteCandidate {
  std::string conv_id;
  int turn_id = 0;
  PromptMethod method = PromptMethod::QuestionRewriting;
  std::string rewrite;
  std::optional<std::string> pseudo_answer;  // QueryExpansion only
  int candidate_idx = 0;                     // 0-based, parse order
};

struct TurnContext {
  std::string conv_id;
  int turn_id = 0;
  std::string context;  // rendered dialogue history
  std::string question;
  std::optional<std::string> human_rewrite;
  // Base for query expansion when no human rewrite exists; the explore
  // stage fills it with the first question-rewriting candidate.
  std::optional<std::string> qe_base;
};

struct ExploreOptions {
  std::string model = "gpt-4-1106-preview";
  double temperature = 0.7;
  int max_tokens = 1000;
  int count_question_rewriting = 10;
  int count_planning = 10;
  int count_query_expansion = 5;
  int max_attempts = 3;
  int backoff_base_ms = 200;
  ExpansionOrder expansion_order = ExpansionOrder::AnswerFirst;

  int count_for(PromptMethod method) const {
    switch (method) {
      case PromptMethod::QuestionRewriting:
        return count_question_rewriting;
      case PromptMethod::Planning:
        return count_planning;
      case PromptMethod::QueryExpansion:
        return count_query_expansion;
    }
    return 0;
  }
};

// Issues one chat call with retries on TransportError (exponential
// backoff, max_attempts total tries).
ChatResponse chat_with_retries(ChatClient& client, const ChatRequest& request,
                               int max_attempts, int backoff_base_ms);

// Builds the prompt for `method`, calls the client once, parses the
// response, and (for QueryExpansion) composes each pseudo answer with the
// base rewrite. ParseEmptyError is rethrown with conversation/turn ids.
std::vector<RewriteCandidate> generate_candidates(const TurnContext& turn, PromptMethod method,
                                                  ChatClient& client,
                                                  const ExploreOptions& options);

// Position-bias-controlled pairwise judgement: the instance is evaluated
// twice with operand order swapped; conflicting verdicts collapse to Tie.
Verdict judge_pair(JudgeCriterion criterion, const std::string& conversation,
                   const std::string& rewrite_a, const std::string& rewrite_b,
                   ChatClient& client, const ExploreOptions& options);

nlohmann::json candidate_to_json(const RewriteCandidate& candidate);
RewriteCandidate candidate_from_json(const nlohmann::json& record, const std::string& where);
std::vector<RewriteCandidate> load_candidates(const std::string& path);
void save_candidates(const std::vector<RewriteCandidate>& candidates, const std::string& path);

}  // namespace convqr
