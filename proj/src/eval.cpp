#include "convqr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "convqr/errors.hpp"
#include "convqr/util.hpp"

namespace convqr {

Run load_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open run file: " + path);
  std::map<std::string, std::vector<std::pair<int, RankedEntry>>> staging;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    std::string query_id, q0, passage_id, tag;
    int rank;
    double score;
    if (!(fields >> query_id >> q0 >> passage_id >> rank >> score >> tag)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed run line");
    }
    staging[query_id].push_back({rank, RankedEntry{passage_id, score}});
  }
  Run run;
  for (auto& [query_id, entries] : staging) {
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::set<std::string> seen;
    std::vector<RankedEntry> ranked;
    ranked.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first != static_cast<int>(i + 1)) {
        throw DataError(path + ": query " + query_id + " has non-contiguous ranks");
      }
      if (!seen.insert(entries[i].second.passage_id).second) {
        throw DataError(path + ": query " + query_id + " repeats passage " +
                        entries[i].second.passage_id);
      }
      ranked.push_back(entries[i].second);
    }
    run.emplace(query_id, std::move(ranked));
  }
  return run;
}

void save_run(const Run& run, const std::string& run_tag, const std::string& path) {
  std::string out;
  for (const auto& [query_id, entries] : run) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      out += query_id;
      out += " Q0 ";
      out += entries[i].passage_id;
      out += ' ';
      out += std::to_string(i + 1);
      out += ' ';
      out += format_fixed(entries[i].score, 6);
      out += ' ';
      out += run_tag;
      out += '\n';
    }
  }
  write_file(path, out);
}

Qrels load_qrels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open qrels file: " + path);
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream fields(line);
    std::string query_id, iteration, passage_id;
    int grade;
    if (!(fields >> query_id >> iteration >> passage_id >> grade)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed qrels line");
    }
    auto& rel = qrels[query_id];  // query exists even if all grades are 0
    if (grade > 0) rel.insert(passage_id);
  }
  return qrels;
}

void save_qrels(const Qrels& qrels, const std::string& path) {
  std::string out;
  for (const auto& [query_id, relevant] : qrels) {
    for (const auto& passage_id : relevant) {
      out += query_id;
      out += " 0 ";
      out += passage_id;
      out += " 1\n";
    }
  }
  write_file(path, out);
}

namespace {

// 1-based rank of the first relevant passage in this query's ranking.
int first_relevant_rank(const Run& run, const std::string& query_id,
                        const std::set<std::string>& relevant) {
  auto it = run.find(query_id);
  if (it == run.end()) return 0;
  for (std::size_t i = 0; i < it->second.size(); ++i) {
    if (relevant.count(it->second[i].passage_id) > 0) return static_cast<int>(i + 1);
  }
  return 0;
}

double dcg_at_3(const Run& run, const std::string& query_id,
                const std::set<std::string>& relevant) {
  double dcg = 0.0;
  auto it = run.find(query_id);
  if (it == run.end()) return 0.0;
  const std::size_t depth = std::min<std::size_t>(3, it->second.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(it->second[i].passage_id) > 0) {
      dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
  }
  return dcg;
}

}  // namespace

double mrr(const Run& run, const Qrels& qrels) {
  if (qrels.empty()) throw DataError("mrr requires non-empty qrels");
  double total = 0.0;
  for (const auto& [query_id, relevant] : qrels) {
    const int rank = first_relevant_rank(run, query_id, relevant);
    if (rank > 0) total += 1.0 / static_cast<double>(rank);
  }
  return total / static_cast<double>(qrels.size());
}

double ndcg_at_3(const Run& run, const Qrels& qrels) {
  if (qrels.empty()) throw DataError("ndcg_at_3 requires non-empty qrels");
  double total = 0.0;
  std::size_t evaluated = 0;
  for (const auto& [query_id, relevant] : qrels) {
    if (relevant.empty()) continue;
    double idcg = 0.0;
    const std::size_t ideal = std::min<std::size_t>(3, relevant.size());
    for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
    total += dcg_at_3(run, query_id, relevant) / idcg;
    ++evaluated;
  }
  return evaluated == 0 ? 0.0 : total / static_cast<double>(evaluated);
}

double recall_at_k(const Run& run, const Qrels& qrels, int k) {
  if (qrels.empty()) throw DataError("recall_at_k requires non-empty qrels");
  if (k < 1) throw DataError("recall_at_k requires k >= 1");
  double hits = 0.0;
  for (const auto& [query_id, relevant] : qrels) {
    const int rank = first_relevant_rank(run, query_id, relevant);
    if (rank > 0 && rank <= k) hits += 1.0;
  }
  return hits / static_cast<double>(qrels.size());
}

namespace {

SegmentMetrics segment_metrics(const Run& run, const Qrels& qrels) {
  SegmentMetrics m;
  m.n = static_cast<int>(qrels.size());
  if (qrels.empty()) return m;
  m.mrr = mrr(run, qrels);
  m.ndcg3 = ndcg_at_3(run, qrels);
  m.recall10 = recall_at_k(run, qrels, 10);
  m.recall100 = recall_at_k(run, qrels, 100);
  for (const auto& [_, relevant] : qrels) {
    if (!relevant.empty()) ++m.n_ndcg;
  }
  return m;
}

double x100(double value) { return std::round(value * 1000.0) / 10.0; }

nlohmann::json segment_json(const SegmentMetrics& m) {
  return nlohmann::json{{"mrr", x100(m.mrr)},
                        {"ndcg3", x100(m.ndcg3)},
                        {"recall10", x100(m.recall10)},
                        {"recall100", x100(m.recall100)},
                        {"n", m.n}};
}

std::string segment_row(const std::string& name, const SegmentMetrics& m) {
  char buf[160];
  if (m.n == 0) {
    std::snprintf(buf, sizeof(buf), "%-20s %6d %8s %8s %8s %8s\n", name.c_str(), m.n, "-", "-",
                  "-", "-");
  } else {
    std::snprintf(buf, sizeof(buf), "%-20s %6d %8.1f %8.1f %8.1f %8.1f\n", name.c_str(), m.n,
                  x100(m.mrr), x100(m.ndcg3), x100(m.recall10), x100(m.recall100));
  }
  return std::string(buf);
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json segments;
  segments["overall"] = segment_json(overall);
  for (const auto& [type, metrics] : by_type) {
    segments[to_string(type)] = segment_json(metrics);
  }
  nlohmann::json out{{"run_tag", run_tag}, {"segments", std::move(segments)}};
  if (!warnings.empty()) out["warnings"] = warnings;
  return out;
}

std::string EvalReport::table() const {
  std::ostringstream out;
  char header[160];
  std::snprintf(header, sizeof(header), "%-20s %6s %8s %8s %8s %8s\n", "segment", "n", "MRR",
                "NDCG@3", "R@10", "R@100");
  out << "run: " << run_tag << "\n" << header;
  out << segment_row("overall", overall);
  for (const auto& [type, metrics] : by_type) {
    out << segment_row(to_string(type), metrics);
  }
  return out.str();
}

EvalReport evaluate_run(const Run& run, const Qrels& qrels,
                        const std::map<std::string, TurnType>& classes,
                        const std::string& run_tag) {
  std::vector<std::string> missing;
  for (const auto& [query_id, _] : qrels) {
    if (classes.find(query_id) == classes.end()) missing.push_back(query_id);
  }
  if (!missing.empty()) {
    std::string joined;
    for (const auto& id : missing) {
      if (!joined.empty()) joined += ", ";
      joined += id;
    }
    throw DataError("no turn class for queries: " + joined);
  }

  EvalReport report;
  report.run_tag = run_tag;
  report.overall = segment_metrics(run, qrels);
  for (const auto& [query_id, relevant] : qrels) {
    if (relevant.empty()) {
      report.warnings.push_back("query " + query_id +
                                " has no relevant passage; excluded from NDCG@3");
    }
  }

  for (TurnType type :
       {TurnType::First, TurnType::TopicConcentrated, TurnType::TopicShifted}) {
    Qrels subset;
    for (const auto& [query_id, relevant] : qrels) {
      if (classes.at(query_id) == type) subset.emplace(query_id, relevant);
    }
    SegmentMetrics metrics;
    if (!subset.empty()) metrics = segment_metrics(run, subset);
    metrics.n = static_cast<int>(subset.size());
    report.by_type[type] = metrics;
  }
  return report;
}

}  // namespace convqr
