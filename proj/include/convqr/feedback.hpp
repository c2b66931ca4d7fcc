#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convqr/bm25.hpp"
#include "convqr/conversation.hpp"
#include "convqr/explore.hpp"

namespace convqr {

// A scored candidate. `method` is the prompting method name, or
// "baseline:original" / "baseline:human" for the reference queries.
struct FeedbackRecord {
  std::string conv_id;
  int turn_id = 0;
  int candidate_idx = 0;
  std::string method;
  std::string rewrite;
  std::optional<int> rank;  // 1-based; nullopt = gold not retrieved
  std::string retriever_profile;
  int top_k = 100;
};

// Sort key treating a missing rank as +infinity.
std::int64_t rank_key(const std::optional<int>& rank);

struct FeedbackOptions {
  int top_k = 100;
  std::string retriever_profile;
  bool include_baselines = true;
  int workers = 4;
};

struct FeedbackOutcome {
  std::vector<FeedbackRecord> records;  // sorted by (conv, turn, method, idx)
  int skipped_non_evaluable = 0;
};

// Scores every candidate (plus the original-question and human-rewrite
// baselines per evaluable turn) against the frozen index. Candidates
// referencing an unknown conversation/turn raise DataError; candidates on
// non-evaluable turns are skipped and counted.
FeedbackOutcome collect_feedback(const std::vector<RewriteCandidate>& candidates,
                                 const std::vector<Conversation>& conversations,
                                 const PassageIndex& index, const FeedbackOptions& options);

nlohmann::json feedback_to_json(const FeedbackRecord& record);
FeedbackRecord feedback_from_json(const nlohmann::json& record, const std::string& where);
std::vector<FeedbackRecord> load_feedback(const std::string& path);
void save_feedback(const std::vector<FeedbackRecord>& records, const std::string& path);

}  // namespace convqr
