#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "convqr/bm25.hpp"
#include "convqr/conversation.hpp"

namespace convqr {

// TREC-style run: query id -> ranked entries (rank = position + 1).
using Run = std::map<std::string, std::vector<RankedEntry>>;

// query id -> relevant passage ids (grade > 0).
using Qrels = std::map<std::string, std::set<std::string>>;

// "query_id Q0 passage_id rank score run_tag" lines. Ranks must be
// contiguous from 1 per query with no duplicate passage ids.
Run load_run(const std::string& path);
void save_run(const Run& run, const std::string& run_tag, const std::string& path);

// "query_id 0 passage_id grade" lines.
Qrels load_qrels(const std::string& path);
void save_qrels(const Qrels& qrels, const std::string& path);

// Mean reciprocal rank of the first relevant passage; a query absent
// from the run contributes 0. Throws on empty qrels.
double mrr(const Run& run, const Qrels& qrels);

// Binary-gain NDCG at cutoff 3 with log2(i+1) discount. Queries with no
// relevant passage in qrels are excluded (callers may report a warning).
double ndcg_at_3(const Run& run, const Qrels& qrels);

// Fraction of queries with any relevant passage in the top k.
double recall_at_k(const Run& run, const Qrels& qrels, int k);

struct SegmentMetrics {
  double mrr = 0.0;
  double ndcg3 = 0.0;
  double recall10 = 0.0;
  double recall100 = 0.0;
  int n = 0;       // queries evaluated
  int n_ndcg = 0;  // queries with at least one relevant passage
};

struct EvalReport {
  std::string run_tag;
  SegmentMetrics overall;
  std::map<TurnType, SegmentMetrics> by_type;
  std::vector<std::string> warnings;

  // Values reported x100 at one decimal, as in the result tables.
  nlohmann::json to_json() const;
  std::string table() const;
};

// Computes all metrics overall and per turn-type segment. Every query in
// qrels must have a class; missing classes raise an error listing the ids.
EvalReport evaluate_run(const Run& run, const Qrels& qrels,
                        const std::map<std::string, TurnType>& classes,
                        const std::string& run_tag);

}  // namespace convqr
