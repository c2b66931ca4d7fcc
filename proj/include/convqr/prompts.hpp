#pragma once

#include <optional>
#include <string>
#include <vector>

namespace convqr {

enum class PromptMethod { QuestionRewriting, Planning, QueryExpansion };

std::string to_string(PromptMethod method);
PromptMethod prompt_method_from_string(const std::string& name);

// Stable tie-break priority used by preference construction:
// QuestionRewriting < Planning < QueryExpansion.
int method_priority(PromptMethod method);

// Default candidate counts per method.
int default_candidate_count(PromptMethod method);

// Renders instruction + format specification + one-shot demonstration +
// test instance. `context` is the rendered dialogue history (may be
// empty on a first turn); `count` is the number of candidates requested
// in the instruction.
std::string build_prompt(PromptMethod method, const std::string& context,
                         const std::string& question, int count);

// One parsed item from a model response. For QuestionRewriting/Planning
// the rewrite is filled; for QueryExpansion only the pseudo answer is —
// the final rewrite is composed against a base rewrite afterwards.
struct ParsedCandidate {
  std::string rewrite;
  std::optional<std::string> pseudo_answer;
};

// Extracts "Rewrite <i>:" lines (QuestionRewriting, Planning; "Info <i>:"
// lines are discarded) or "Answer <i>:" lines (QueryExpansion). Malformed
// lines are skipped; exact duplicates after whitespace normalization and
// case folding are dropped keeping the first. Throws ParseEmptyError when
// nothing parses.
std::vector<ParsedCandidate> parse_candidates(const std::string& raw, PromptMethod method);

enum class ExpansionOrder { AnswerFirst, RewriteFirst };

// Joins pseudo answer and base rewrite with a single newline;
// AnswerFirst puts the answer before the question.
std::string compose_expanded_query(const std::string& base_rewrite,
                                   const std::string& pseudo_answer,
                                   ExpansionOrder order = ExpansionOrder::AnswerFirst);

enum class JudgeCriterion { Clarity, Conciseness, Informativeness };

std::string to_string(JudgeCriterion criterion);
JudgeCriterion judge_criterion_from_string(const std::string& name);

enum class Verdict { A, B, Tie };

std::string to_string(Verdict verdict);

// Pairwise judge prompt for one operand order.
std::string build_judge_prompt(JudgeCriterion criterion, const std::string& conversation,
                               const std::string& rewrite_a, const std::string& rewrite_b);

// Reads the verdict from the trailing "Judge:" line (A|B|Tie,
// case-insensitive); a bare A/B/Tie response is also accepted. Throws
// JudgeParseError otherwise.
Verdict parse_judge_verdict(const std::string& raw);

}  // namespace convqr
