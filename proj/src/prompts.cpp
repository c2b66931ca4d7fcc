#include "convqr/prompts.hpp"

#include <cctype>
#include <set>
#include <sstream>

#include "convqr/errors.hpp"
#include "convqr/util.hpp"

namespace convqr {

std::string to_string(PromptMethod method) {
  switch (method) {
    case PromptMethod::QuestionRewriting:
      return "question_rewriting";
    case PromptMethod::Planning:
      return "planning";
    case PromptMethod::QueryExpansion:
      return "query_expansion";
  }
  return "unknown";
}

PromptMethod prompt_method_from_string(const std::string& name) {
  if (name == "question_rewriting") return PromptMethod::QuestionRewriting;
  if (name == "planning") return PromptMethod::Planning;
  if (name == "query_expansion") return PromptMethod::QueryExpansion;
  throw DataError("unknown prompt method \"" + name + "\"");
}

int method_priority(PromptMethod method) {
  switch (method) {
    case PromptMethod::QuestionRewriting:
      return 0;
    case PromptMethod::Planning:
      return 1;
    case PromptMethod::QueryExpansion:
      return 2;
  }
  return 3;
}

int default_candidate_count(PromptMethod method) {
  return method == PromptMethod::QueryExpansion ? 5 : 10;
}

namespace {

constexpr const char* kSeparator = "- - -";

// One-shot demonstration shared by the three exploration prompts.
constexpr const char* kDemoConversation =
    "Q1: Who designed the Eddystone Lighthouse? A1: The third Eddystone Lighthouse was designed "
    "by the civil engineer John Smeaton, who modelled its shape on an oak tree trunk.\n"
    "Q2: What material did he use? A2: Smeaton built the tower from interlocking granite blocks "
    "joined with hydraulic lime, a technique that let the structure survive heavy seas.";

constexpr const char* kDemoQuestion = "Why was it eventually replaced?";

std::string format_header(const std::string& instruction) {
  std::ostringstream out;
  out << instruction << "\n\n"
      << kSeparator << "\n\n"
      << "Follow the following format.\n\n"
      << "Conversation:\n${conversational context for the question}\n\n"
      << "Question:\n${follow-up question to be rewritten}\n\n";
  return out.str();
}

std::string test_instance(const std::string& context, const std::string& question,
                          const std::string& completion_label) {
  std::ostringstream out;
  out << kSeparator << "\n\n"
      << "Conversation:\n"
      << context << "\n\n"
      << "Question: " << question << "\n\n"
      << completion_label << ":\n";
  return out.str();
}

std::string question_rewriting_prompt(const std::string& context, const std::string& question,
                                      int count) {
  std::ostringstream out;
  out << format_header(
      "Given a question and its context, decontextualize the question by addressing coreference "
      "and omission issues. The resulting question should retain its original meaning and be as "
      "informative as possible, and should not duplicate any previously asked questions in the "
      "context. Please give me a list of " +
      std::to_string(count) + " candidates for the rewrite. Here are some examples.");
  out << "Rewrite:\n${list of " << count
      << " rewritten question candidates, each on a new line.}\n"
      << "Rewrite i:\n${(i)-th rewritten question that address coreference and omission issues}\n\n"
      << kSeparator << "\n\n"
      << "Conversation:\n"
      << kDemoConversation << "\n\n"
      << "Question: " << kDemoQuestion << "\n\n"
      << "Rewrite:\n"
      << "Rewrite 1: Why was John Smeaton's Eddystone Lighthouse eventually replaced?\n"
      << "Rewrite 2: What led to the replacement of the granite Eddystone Lighthouse designed by "
         "John Smeaton?\n\n";
  out << test_instance(context, question, "Rewrite");
  return out.str();
}

std::string planning_prompt(const std::string& context, const std::string& question, int count) {
  std::ostringstream out;
  out << format_header(
      "I am working on finding information to rewrite the question. Given a question and its "
      "context, Please provide " +
      std::to_string(count) +
      " information-Rewrite pairs, where each pair consists of information that might be needed "
      "to answer the question and a rewritten question. the rewritten question is a "
      "decontextualized version of the question by addressing coreference and omission issues "
      "with respect to each information. the resulting question should retain its original "
      "search intent. Here are some examples.");
  out << "Information-Rewrite:\n${list of " << count
      << " Information-Rewrite pairs, each on a new line}\n"
      << "Info i:\n${(i)-th information that is needed to answer the question. it should not be "
         "too specific}\n"
      << "Rewrite i:\n${(i)-th rewritten question that address coreference and omission issues "
         "with respect to (i)-th information.}\n\n"
      << kSeparator << "\n\n"
      << "Conversation:\n"
      << kDemoConversation << "\n\n"
      << "Question: " << kDemoQuestion << "\n\n"
      << "Information-Rewrite:\n"
      << "Info 1: Structural condition - details about erosion or instability affecting the rock "
         "beneath Smeaton's tower.\n"
      << "Rewrite 1: What structural problems led to the replacement of John Smeaton's Eddystone "
         "Lighthouse?\n\n"
      << "Info 2: Successor tower - information about the lighthouse that was built to take over "
         "from Smeaton's design.\n"
      << "Rewrite 2: Which lighthouse replaced John Smeaton's Eddystone tower and why was it "
         "built?\n\n";
  out << test_instance(context, question, "Information-Rewrite");
  return out.str();
}

std::string query_expansion_prompt(const std::string& context, const std::string& question,
                                   int count) {
  std::ostringstream out;
  out << format_header("Please give me a list of " + std::to_string(count) +
                       " answer candidates based on the given conversation context and question. "
                       "Here are some examples.");
  out << "Answer:\n${list of " << count << " answer candidates, each on a new line.}\n"
      << "Answer i:\n${(i)-th answer for the current question}\n\n"
      << kSeparator << "\n\n"
      << "Conversation:\n"
      << kDemoConversation << "\n\n"
      << "Question: " << kDemoQuestion << "\n\n"
      << "Answer:\n"
      << "Answer 1: The rock under Smeaton's tower was being undermined by the sea, so the "
         "lighthouse was dismantled and replaced by the Douglass tower in 1882.\n"
      << "Answer 2: Erosion of the reef beneath the structure made the old tower unsafe, "
         "prompting the construction of a new lighthouse nearby.\n\n";
  out << test_instance(context, question, "Answer");
  return out.str();
}

}  // namespace

std::string build_prompt(PromptMethod method, const std::string& context,
                         const std::string& question, int count) {
  if (trim(question).empty()) throw DataError("build_prompt requires a non-empty question");
  if (count < 1) throw DataError("build_prompt requires count >= 1");
  switch (method) {
    case PromptMethod::QuestionRewriting:
      return question_rewriting_prompt(context, question, count);
    case PromptMethod::Planning:
      return planning_prompt(context, question, count);
    case PromptMethod::QueryExpansion:
      return query_expansion_prompt(context, question, count);
  }
  throw DataError("invalid prompt method");
}

namespace {

// Matches `<label> <int>:` at the start of a (trimmed) line,
// case-insensitive label; returns the payload after the colon.
std::optional<std::string> match_labeled_line(const std::string& line, std::string_view label) {
  const std::string trimmed = trim(line);
  if (trimmed.size() < label.size() + 2) return std::nullopt;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(trimmed[i])) !=
        std::tolower(static_cast<unsigned char>(label[i]))) {
      return std::nullopt;
    }
  }
  std::size_t pos = label.size();
  if (pos >= trimmed.size() || !std::isspace(static_cast<unsigned char>(trimmed[pos]))) {
    return std::nullopt;
  }
  while (pos < trimmed.size() && std::isspace(static_cast<unsigned char>(trimmed[pos]))) ++pos;
  std::size_t digits = 0;
  while (pos < trimmed.size() && std::isdigit(static_cast<unsigned char>(trimmed[pos]))) {
    ++pos;
    ++digits;
  }
  if (digits == 0 || pos >= trimmed.size() || trimmed[pos] != ':') return std::nullopt;
  return trim(trimmed.substr(pos + 1));
}

}  // namespace

std::vector<ParsedCandidate> parse_candidates(const std::string& raw, PromptMethod method) {
  const std::string_view label =
      method == PromptMethod::QueryExpansion ? std::string_view("Answer") : std::string_view("Rewrite");
  std::vector<ParsedCandidate> out;
  std::set<std::string> seen;
  std::istringstream lines(raw);
  std::string line;
  while (std::getline(lines, line)) {
    if (method == PromptMethod::Planning && match_labeled_line(line, "Info")) continue;
    auto payload = match_labeled_line(line, label);
    if (!payload || payload->empty()) continue;
    if (!seen.insert(normalize_text(*payload)).second) continue;
    ParsedCandidate candidate;
    if (method == PromptMethod::QueryExpansion) {
      candidate.pseudo_answer = *payload;
    } else {
      candidate.rewrite = *payload;
    }
    out.push_back(std::move(candidate));
  }
  if (out.empty()) {
    throw ParseEmptyError("no candidates parsed from model response", raw);
  }
  return out;
}

std::string compose_expanded_query(const std::string& base_rewrite,
                                   const std::string& pseudo_answer, ExpansionOrder order) {
  if (trim(base_rewrite).empty() || trim(pseudo_answer).empty()) {
    throw DataError("compose_expanded_query requires non-empty inputs");
  }
  if (order == ExpansionOrder::AnswerFirst) return pseudo_answer + "\n" + base_rewrite;
  return base_rewrite + "\n" + pseudo_answer;
}

std::string to_string(JudgeCriterion criterion) {
  switch (criterion) {
    case JudgeCriterion::Clarity:
      return "clarity";
    case JudgeCriterion::Conciseness:
      return "conciseness";
    case JudgeCriterion::Informativeness:
      return "informativeness";
  }
  return "unknown";
}

JudgeCriterion judge_criterion_from_string(const std::string& name) {
  if (name == "clarity") return JudgeCriterion::Clarity;
  if (name == "conciseness") return JudgeCriterion::Conciseness;
  if (name == "informativeness") return JudgeCriterion::Informativeness;
  throw DataError("unknown judge criterion \"" + name + "\"");
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::A:
      return "A";
    case Verdict::B:
      return "B";
    case Verdict::Tie:
      return "Tie";
  }
  return "unknown";
}

std::string build_judge_prompt(JudgeCriterion criterion, const std::string& conversation,
                               const std::string& rewrite_a, const std::string& rewrite_b) {
  if (trim(rewrite_a).empty() || trim(rewrite_b).empty()) {
    throw DataError("judge requires two non-empty rewrites");
  }
  std::string name = to_string(criterion);
  std::string check;
  switch (criterion) {
    case JudgeCriterion::Clarity:
      check = "which question is less open to multiple interpretations and has a more clear intention.";
      break;
    case JudgeCriterion::Conciseness:
      check = "which question is more brief and directly states the search intent without additional elaboration.";
      break;
    case JudgeCriterion::Informativeness:
      check = "which question provides more useful and relevant information.";
      break;
  }
  std::ostringstream out;
  out << "[Instruction]\n"
      << "Please act as an impartial judge and evaluate the quality of the query-rewriting system "
         "displayed below. The system tries to rewrite the conversational input to a stand-alone "
         "question, eliminating dependency on the conversational context.\n\n"
      << "Your job is to compare the " << name << " of the two rewritten stand-alone questions.\n"
      << "That is, You should check " << check << "\n"
      << "Please choose either 'A' or 'B'. If the two questions show the same " << name
      << ", answer it by 'Tie'. For example, Judge: (A|B|Tie)\n\n"
      << "[Conversation]\n"
      << conversation << "\n\n"
      << "[The Start of stand-alone question A]\n"
      << rewrite_a << "\n"
      << "[The End of stand-alone question A]\n\n"
      << "[The Start of stand-alone question B]\n"
      << rewrite_b << "\n"
      << "[The End of stand-alone question B]\n\n"
      << "Judge: ";
  return out.str();
}

namespace {

std::optional<Verdict> verdict_from_token(const std::string& token) {
  std::string t = lower(trim(token));
  while (!t.empty() && (t.back() == '.' || t.back() == ')' || t.back() == '\'' || t.back() == '"')) {
    t.pop_back();
  }
  while (!t.empty() && (t.front() == '(' || t.front() == '\'' || t.front() == '"')) {
    t.erase(t.begin());
  }
  if (t == "a") return Verdict::A;
  if (t == "b") return Verdict::B;
  if (t == "tie") return Verdict::Tie;
  return std::nullopt;
}

}  // namespace

Verdict parse_judge_verdict(const std::string& raw) {
  // Trailing "Judge:" line wins; fall back to a bare verdict token.
  std::vector<std::string> judge_lines;
  std::istringstream lines(raw);
  std::string line;
  while (std::getline(lines, line)) {
    auto pos = line.find("Judge:");
    if (pos != std::string::npos) judge_lines.push_back(line.substr(pos + 6));
  }
  for (auto it = judge_lines.rbegin(); it != judge_lines.rend(); ++it) {
    if (auto verdict = verdict_from_token(*it)) return *verdict;
  }
  if (auto verdict = verdict_from_token(raw)) return *verdict;
  throw JudgeParseError("no verdict found in judge response: " + trim(raw).substr(0, 120));
}

}  // namespace convqr
