#include "convqr/feedback.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "convqr/errors.hpp"
#include "convqr/jsonl.hpp"
#include "convqr/util.hpp"

namespace convqr {

std::int64_t rank_key(const std::optional<int>& rank) {
  return rank ? static_cast<std::int64_t>(*rank) : std::numeric_limits<std::int64_t>::max();
}

namespace {

struct WorkItem {
  std::string conv_id;
  int turn_id;
  int candidate_idx;
  std::string method;
  std::string rewrite;
  const std::vector<std::string>* gold_ids;
};

bool record_order(const FeedbackRecord& a, const FeedbackRecord& b) {
  if (a.conv_id != b.conv_id) return a.conv_id < b.conv_id;
  if (a.turn_id != b.turn_id) return a.turn_id < b.turn_id;
  if (a.method != b.method) return a.method < b.method;
  return a.candidate_idx < b.candidate_idx;
}

}  // namespace

FeedbackOutcome collect_feedback(const std::vector<RewriteCandidate>& candidates,
                                 const std::vector<Conversation>& conversations,
                                 const PassageIndex& index, const FeedbackOptions& options) {
  if (options.top_k < 1) throw DataError("feedback top_k must be >= 1");

  std::map<std::string, const Conversation*> by_id;
  for (const auto& conv : conversations) by_id[conv.conv_id] = &conv;

  FeedbackOutcome outcome;
  std::vector<WorkItem> items;
  items.reserve(candidates.size());

  for (const auto& candidate : candidates) {
    auto it = by_id.find(candidate.conv_id);
    if (it == by_id.end()) {
      throw DataError("candidate references unknown conversation \"" + candidate.conv_id + "\"");
    }
    if (!it->second->has_turn(candidate.turn_id)) {
      throw DataError("candidate references unknown turn " + std::to_string(candidate.turn_id) +
                      " of conversation \"" + candidate.conv_id + "\"");
    }
    const Turn& turn = it->second->turn(candidate.turn_id);
    if (!turn.evaluable()) {
      ++outcome.skipped_non_evaluable;
      continue;
    }
    items.push_back(WorkItem{candidate.conv_id, candidate.turn_id, candidate.candidate_idx,
                             to_string(candidate.method), candidate.rewrite,
                             &turn.gold_passage_ids});
  }

  if (options.include_baselines) {
    for (const auto& conv : conversations) {
      for (const auto& turn : conv.turns) {
        if (!turn.evaluable()) continue;
        items.push_back(WorkItem{conv.conv_id, turn.turn_id, 0, "baseline:original",
                                 turn.question, &turn.gold_passage_ids});
        if (turn.human_rewrite && !trim(*turn.human_rewrite).empty()) {
          items.push_back(WorkItem{conv.conv_id, turn.turn_id, 0, "baseline:human",
                                   *turn.human_rewrite, &turn.gold_passage_ids});
        }
      }
    }
  }

  std::vector<FeedbackRecord> records(items.size());
  parallel_for_ordered(items.size(), options.workers, [&](std::size_t i) {
    const WorkItem& item = items[i];
    FeedbackRecord record;
    record.conv_id = item.conv_id;
    record.turn_id = item.turn_id;
    record.candidate_idx = item.candidate_idx;
    record.method = item.method;
    record.rewrite = item.rewrite;
    record.retriever_profile = options.retriever_profile;
    record.top_k = options.top_k;
    record.rank = gold_rank(index.retrieve_top_k(item.rewrite, options.top_k), *item.gold_ids);
    records[i] = std::move(record);
  });

  std::sort(records.begin(), records.end(), record_order);
  outcome.records = std::move(records);
  return outcome;
}

nlohmann::json feedback_to_json(const FeedbackRecord& record) {
  nlohmann::json out{{"conv_id", record.conv_id},
                     {"turn_id", record.turn_id},
                     {"candidate_idx", record.candidate_idx},
                     {"method", record.method},
                     {"rewrite", record.rewrite},
                     {"retriever_profile", record.retriever_profile},
                     {"top_k", record.top_k}};
  if (record.rank) out["rank"] = *record.rank;  // omitted when not retrieved
  return out;
}

FeedbackRecord feedback_from_json(const nlohmann::json& record, const std::string& where) {
  FeedbackRecord out;
  try {
    out.conv_id = record.at("conv_id").get<std::string>();
    out.turn_id = record.at("turn_id").get<int>();
    out.candidate_idx = record.at("candidate_idx").get<int>();
    out.method = record.at("method").get<std::string>();
    out.rewrite = record.at("rewrite").get<std::string>();
    out.retriever_profile = record.value("retriever_profile", std::string());
    out.top_k = record.value("top_k", 100);
    if (record.contains("rank") && !record["rank"].is_null()) {
      out.rank = record["rank"].get<int>();
      if (*out.rank < 1 || *out.rank > out.top_k) {
        throw DataError(where + ": rank " + std::to_string(*out.rank) + " outside [1, top_k]");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(where + ": bad feedback record: " + ex.what());
  }
  return out;
}

std::vector<FeedbackRecord> load_feedback(const std::string& path) {
  std::vector<FeedbackRecord> out;
  for_each_jsonl(path, [&](std::size_t line_no, const nlohmann::json& record) {
    out.push_back(feedback_from_json(record, path + ":" + std::to_string(line_no)));
  });
  return out;
}

void save_feedback(const std::vector<FeedbackRecord>& records, const std::string& path) {
  JsonlWriter writer(path);
  for (const auto& record : records) writer.add(feedback_to_json(record));
  writer.commit();
}

}  // namespace convqr
