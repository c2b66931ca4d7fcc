// Independent reference implementations used by unit and acceptance
// tests. These recompute everything from first definitions (no shared
// code with the library paths they check, beyond the tokenizer contract
// they restate locally).
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace oracle {

// Tokenizer restated from its contract: lowercase, split on
// non-alphanumeric bytes, drop empties.
std::vector<std::string> tokenize(const std::string& text);

struct ScoredDoc {
  std::string passage_id;
  double score;
};

// Scores every document by recounting document frequencies and term
// frequencies from raw texts, applies the BM25 formula per query token in
// order, sorts with the (score desc, id asc) tie rule and keeps positive
// scores only.
std::vector<ScoredDoc> bm25_rank_all(const std::vector<std::pair<std::string, std::string>>& corpus,
                                     const std::string& query, double k1, double b,
                                     int passage_token_cap, int query_token_cap);

// Definition-level metric oracles over (query -> ranked ids) and
// (query -> relevant ids).
using RunMap = std::map<std::string, std::vector<std::string>>;
using QrelsMap = std::map<std::string, std::set<std::string>>;

double mrr(const RunMap& run, const QrelsMap& qrels);
double ndcg_at_3(const RunMap& run, const QrelsMap& qrels);
double recall_at_k(const RunMap& run, const QrelsMap& qrels, int k);

// One feedback record as the pair-construction oracle sees it.
struct FeedbackLite {
  std::string rewrite;
  std::optional<int> rank;
};

struct PairLite {
  std::string chosen;
  int chosen_rank;
  std::string rejected;
  std::optional<int> rejected_rank;
};

// Exhaustively enumerates the valid comparison pairs of one turn:
// strictly better chosen rank, chosen rank <= threshold, distinct
// normalized texts, no duplicate (chosen, rejected) text pair.
std::vector<PairLite> enumerate_valid_pairs(const std::vector<FeedbackLite>& records,
                                            int preferred_threshold);

// Filter-and-sort oracle for the optimal set: ranks <= threshold sorted
// ascending, up to max_n kept (ties left in the caller's care — used
// only on inputs with distinct ranks).
std::vector<int> optimal_ranks(const std::vector<std::optional<int>>& ranks, int threshold,
                               int max_n);

}  // namespace oracle
