#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convqr/conversation.hpp"
#include "convqr/feedback.hpp"

namespace convqr {

struct ScoredQuery {
  std::string rewrite;
  int rank = 0;
};

// Up to five queries whose rank beat the optimal threshold; when none
// did, the single best-ranked rewrite with fallback = true.
struct OptimalQuerySet {
  std::string conv_id;
  int turn_id = 0;
  std::vector<ScoredQuery> queries;
  bool fallback = false;
};

struct PreferencePair {
  std::string conv_id;
  int turn_id = 0;
  std::string chosen;
  int chosen_rank = 0;
  std::string rejected;
  std::optional<int> rejected_rank;  // nullopt = not retrieved
};

// Builds the optimal-query set for one turn's records.
// Qualifying records have a rank <= optimal_threshold; up to max_n best
// are kept, ordered by (rank, method priority, rewrite). Returns nullopt
// when no record has a finite rank (turn excluded from SFT).
std::optional<OptimalQuerySet> build_optimal_set(const std::vector<FeedbackRecord>& records,
                                                 int optimal_threshold = 30, int max_n = 5);

// Enumerates valid comparison pairs for one turn — strictly better rank
// on the chosen side, chosen rank <= preferred_threshold, distinct
// normalized strings, no duplicate pair — then samples up to max_pairs of
// them uniformly without replacement (max_pairs <= 0 keeps all). Output
// is deterministically sorted.
std::vector<PreferencePair> build_pairs(const std::vector<FeedbackRecord>& records,
                                        int preferred_threshold, int max_pairs,
                                        std::uint64_t seed);

struct ExportOptions {
  bool exclude_fallback = false;
  int max_history_turns = 0;
};

struct ExportSummary {
  int n_turns = 0;
  int n_optimal_queries = 0;
  int n_pairs = 0;
  int n_fallback = 0;

  nlohmann::json to_json() const;
};

// SFT prompts are the rendered dialogue context plus "Question: {q_t}".
std::string render_training_prompt(const Conversation& conv, int turn_index,
                                   int max_history_turns = 0);

// Writes {"prompt","completion"} SFT lines and {"prompt","chosen",
// "rejected"} DPO lines; returns the counts.
ExportSummary export_training_files(const std::vector<OptimalQuerySet>& optimal_sets,
                                    const std::vector<PreferencePair>& pairs,
                                    const std::vector<Conversation>& conversations,
                                    const std::string& sft_path, const std::string& dpo_path,
                                    const ExportOptions& options = {});

nlohmann::json optimal_set_to_json(const OptimalQuerySet& set);
OptimalQuerySet optimal_set_from_json(const nlohmann::json& record, const std::string& where);
std::vector<OptimalQuerySet> load_optimal_sets(const std::string& path);
void save_optimal_sets(const std::vector<OptimalQuerySet>& sets, const std::string& path);

nlohmann::json pair_to_json(const PreferencePair& pair);
PreferencePair pair_from_json(const nlohmann::json& record, const std::string& where);
std::vector<PreferencePair> load_pairs(const std::string& path);
void save_pairs(const std::vector<PreferencePair>& pairs, const std::string& path);

}  // namespace convqr
