#include "convqr/conversation.hpp"

#include <set>
#include <sstream>

#include "convqr/errors.hpp"
#include "convqr/jsonl.hpp"
#include "convqr/util.hpp"

namespace convqr {

const Turn& Conversation::turn(int turn_id) const {
  for (const auto& t : turns) {
    if (t.turn_id == turn_id) return t;
  }
  throw DataError("conversation " + conv_id + " has no turn " + std::to_string(turn_id));
}

bool Conversation::has_turn(int turn_id) const {
  for (const auto& t : turns) {
    if (t.turn_id == turn_id) return true;
  }
  return false;
}

std::string to_string(TurnType type) {
  switch (type) {
    case TurnType::First:
      return "first";
    case TurnType::TopicConcentrated:
      return "topic_concentrated";
    case TurnType::TopicShifted:
      return "topic_shifted";
  }
  return "unknown";
}

namespace {

std::string field_error(const std::string& where, const std::string& message) {
  return where + ": " + message;
}

}  // namespace

Conversation conversation_from_json(const nlohmann::json& record, const std::string& where) {
  if (!record.is_object()) throw DataError(field_error(where, "record is not an object"));
  Conversation conv;
  if (!record.contains("conv_id") || !record["conv_id"].is_string()) {
    throw DataError(field_error(where, "missing string field \"conv_id\""));
  }
  conv.conv_id = record["conv_id"].get<std::string>();
  if (conv.conv_id.empty()) throw DataError(field_error(where, "conv_id is empty"));
  if (!record.contains("turns") || !record["turns"].is_array() || record["turns"].empty()) {
    throw DataError(field_error(where, "conversation " + conv.conv_id + " has no turns"));
  }

  int prev_turn_id = 0;
  for (const auto& tj : record["turns"]) {
    Turn turn;
    if (!tj.contains("turn_id") || !tj["turn_id"].is_number_integer()) {
      throw DataError(field_error(where, "turn missing integer \"turn_id\""));
    }
    turn.turn_id = tj["turn_id"].get<int>();
    if (turn.turn_id < 1 || turn.turn_id <= prev_turn_id) {
      throw DataError(field_error(
          where, "conversation " + conv.conv_id + ": turn ids must be >= 1 and strictly increasing"));
    }
    prev_turn_id = turn.turn_id;

    if (!tj.contains("question") || !tj["question"].is_string()) {
      throw DataError(field_error(where, "turn missing string \"question\""));
    }
    turn.question = tj["question"].get<std::string>();
    if (trim(turn.question).empty()) {
      throw DataError(field_error(where, "conversation " + conv.conv_id + " turn " +
                                             std::to_string(turn.turn_id) + ": question is empty"));
    }
    turn.answer = tj.value("answer", std::string());
    if (tj.contains("gold_passage_ids")) {
      if (!tj["gold_passage_ids"].is_array()) {
        throw DataError(field_error(where, "\"gold_passage_ids\" must be an array"));
      }
      for (const auto& pid : tj["gold_passage_ids"]) {
        if (!pid.is_string()) {
          throw DataError(field_error(where, "gold passage ids must be strings"));
        }
        turn.gold_passage_ids.push_back(pid.get<std::string>());
      }
    }
    if (tj.contains("human_rewrite") && !tj["human_rewrite"].is_null()) {
      if (!tj["human_rewrite"].is_string()) {
        throw DataError(field_error(where, "\"human_rewrite\" must be a string or null"));
      }
      turn.human_rewrite = tj["human_rewrite"].get<std::string>();
    }
    conv.turns.push_back(std::move(turn));
  }
  return conv;
}

nlohmann::json conversation_to_json(const Conversation& conv) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& turn : conv.turns) {
    nlohmann::json tj;
    tj["turn_id"] = turn.turn_id;
    tj["question"] = turn.question;
    tj["answer"] = turn.answer;
    tj["gold_passage_ids"] = turn.gold_passage_ids;
    tj["human_rewrite"] = turn.human_rewrite ? nlohmann::json(*turn.human_rewrite)
                                             : nlohmann::json(nullptr);
    turns.push_back(std::move(tj));
  }
  return nlohmann::json{{"conv_id", conv.conv_id}, {"turns", std::move(turns)}};
}

std::string conversations_to_jsonl(const std::vector<Conversation>& convs) {
  std::string out;
  for (const auto& conv : convs) {
    out += conversation_to_json(conv).dump();
    out += '\n';
  }
  return out;
}

std::vector<Conversation> ingest_conversations(const std::string& path,
                                               const std::string& format) {
  if (format != "jsonl") {
    throw DataError("unknown dataset profile \"" + format + "\" (supported: jsonl)");
  }
  std::vector<Conversation> conversations;
  std::set<std::string> seen_ids;
  for_each_jsonl(path, [&](std::size_t line_no, const nlohmann::json& record) {
    std::string where = path + ":" + std::to_string(line_no);
    Conversation conv = conversation_from_json(record, where);
    if (!seen_ids.insert(conv.conv_id).second) {
      throw DataError(where + ": duplicate conv_id \"" + conv.conv_id + "\"");
    }
    conversations.push_back(std::move(conv));
  });
  return conversations;
}

std::string build_context(const Conversation& conv, int turn_index, int max_history_turns) {
  if (turn_index < 1 || turn_index > static_cast<int>(conv.turns.size())) {
    throw DataError("turn_index " + std::to_string(turn_index) + " out of range for conversation " +
                    conv.conv_id + " (" + std::to_string(conv.turns.size()) + " turns)");
  }
  int first = 0;
  int history = turn_index - 1;
  if (max_history_turns > 0 && history > max_history_turns) {
    first = history - max_history_turns;  // drop oldest turns first
  }
  std::ostringstream out;
  for (int i = first; i < history; ++i) {
    const Turn& t = conv.turns[static_cast<std::size_t>(i)];
    if (i > first) out << '\n';
    out << 'Q' << t.turn_id << ": " << t.question << " A" << t.turn_id << ": " << t.answer;
  }
  return out.str();
}

namespace {

const std::string& source_doc_of(const Turn& turn,
                                 const std::map<std::string, std::string>& doc_of,
                                 const std::string& conv_id) {
  const std::string& pid = turn.gold_passage_ids.front();
  auto it = doc_of.find(pid);
  if (it == doc_of.end()) {
    throw DataError("conversation " + conv_id + " turn " + std::to_string(turn.turn_id) +
                    ": passage id \"" + pid + "\" has no known source document");
  }
  return it->second;
}

}  // namespace

TurnType classify_turn(const Conversation& conv, int turn_index,
                       const std::map<std::string, std::string>& doc_of) {
  if (turn_index < 1 || turn_index > static_cast<int>(conv.turns.size())) {
    throw DataError("turn_index out of range in classify_turn");
  }
  if (turn_index == 1) return TurnType::First;
  const Turn& current = conv.turns[static_cast<std::size_t>(turn_index - 1)];
  if (!current.evaluable()) {
    throw DataError("conversation " + conv.conv_id + " turn " + std::to_string(current.turn_id) +
                    ": cannot classify a turn with no gold passage");
  }
  // Previous evaluable turn; precondition guarantees one exists.
  const Turn* previous = nullptr;
  for (int i = turn_index - 2; i >= 0; --i) {
    if (conv.turns[static_cast<std::size_t>(i)].evaluable()) {
      previous = &conv.turns[static_cast<std::size_t>(i)];
      break;
    }
  }
  if (previous == nullptr) {
    throw DataError("conversation " + conv.conv_id + " turn " + std::to_string(current.turn_id) +
                    ": no previous evaluable turn to compare against");
  }
  const std::string& cur_doc = source_doc_of(current, doc_of, conv.conv_id);
  const std::string& prev_doc = source_doc_of(*previous, doc_of, conv.conv_id);
  return cur_doc == prev_doc ? TurnType::TopicConcentrated : TurnType::TopicShifted;
}

std::string query_id(const std::string& conv_id, int turn_id) {
  return conv_id + "_" + std::to_string(turn_id);
}

}  // namespace convqr
