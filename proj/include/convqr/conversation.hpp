#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace convqr {

struct Turn {
  int turn_id = 0;  // 1-based, strictly increasing within a conversation
  std::string question;
  std::string answer;  // may be empty on the final turn
  std::vector<std::string> gold_passage_ids;
  std::optional<std::string> human_rewrite;

  // Turns without gold labels stay in the history but are excluded from
  // feedback collection and evaluation.
  bool evaluable() const { return !gold_passage_ids.empty(); }
};

struct Conversation {
  std::string conv_id;
  std::vector<Turn> turns;

  const Turn& turn(int turn_id) const;
  bool has_turn(int turn_id) const;
};

enum class TurnType { First, TopicConcentrated, TopicShifted };

std::string to_string(TurnType type);

// Loads a conversations JSONL file. `format` selects the dataset profile;
// only the native "jsonl" profile is built in (external distributions are
// converted by user scripts). Validates per-record invariants and flags
// (keeps) turns with no gold passage.
std::vector<Conversation> ingest_conversations(const std::string& path,
                                               const std::string& format = "jsonl");

Conversation conversation_from_json(const nlohmann::json& record,
                                    const std::string& where);
nlohmann::json conversation_to_json(const Conversation& conv);

// Serializes conversations in the canonical JSONL form; ingest followed by
// this round-trips byte-identically.
std::string conversations_to_jsonl(const std::vector<Conversation>& convs);

// Renders the dialogue history before `turn_index` (1-based) as one line
// per turn, "Q{i}: {question} A{i}: {answer}", joined by newlines. The
// current question is not part of the context; prompt builders receive it
// separately. `max_history_turns` = 0 keeps everything; otherwise the
// oldest turns are dropped first.
std::string build_context(const Conversation& conv, int turn_index,
                          int max_history_turns = 0);

// Classifies a turn per the source document of its first gold passage
// versus the previous evaluable turn's. `doc_of` maps passage id ->
// source document id.
TurnType classify_turn(const Conversation& conv, int turn_index,
                       const std::map<std::string, std::string>& doc_of);

// "{conv_id}_{turn_id}", the query id used in run/qrels files.
std::string query_id(const std::string& conv_id, int turn_id);

}  // namespace convqr
