#include "convqr/preference.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

#include "convqr/errors.hpp"
#include "convqr/jsonl.hpp"
#include "convqr/prompts.hpp"
#include "convqr/util.hpp"

namespace convqr {

namespace {

int method_priority_of(const std::string& method) {
  if (method == "question_rewriting") return 0;
  if (method == "planning") return 1;
  if (method == "query_expansion") return 2;
  return 3;  // baselines and unknown tags sort last
}

// Deterministic record order used throughout: best rank first, then
// method priority, then rewrite text, then candidate index.
bool better_record(const FeedbackRecord& a, const FeedbackRecord& b) {
  return std::make_tuple(rank_key(a.rank), method_priority_of(a.method), a.rewrite,
                         a.candidate_idx) <
         std::make_tuple(rank_key(b.rank), method_priority_of(b.method), b.rewrite,
                         b.candidate_idx);
}

}  // namespace

std::optional<OptimalQuerySet> build_optimal_set(const std::vector<FeedbackRecord>& records,
                                                 int optimal_threshold, int max_n) {
  if (records.empty()) throw DataError("build_optimal_set requires at least one record");
  if (optimal_threshold < 1) throw DataError("optimal_threshold must be >= 1");
  if (max_n < 1) throw DataError("max_n must be >= 1");

  std::vector<FeedbackRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), better_record);

  OptimalQuerySet set;
  set.conv_id = sorted.front().conv_id;
  set.turn_id = sorted.front().turn_id;

  for (const auto& record : sorted) {
    if (!record.rank || *record.rank > optimal_threshold) continue;
    set.queries.push_back(ScoredQuery{record.rewrite, *record.rank});
    if (static_cast<int>(set.queries.size()) == max_n) break;
  }
  if (!set.queries.empty()) {
    set.fallback = false;
    return set;
  }

  // Nothing beat the threshold: fall back to the single best finite rank.
  const FeedbackRecord& best = sorted.front();
  if (!best.rank) return std::nullopt;  // every rewrite missed the top-k entirely
  set.queries.push_back(ScoredQuery{best.rewrite, *best.rank});
  set.fallback = true;
  return set;
}

std::vector<PreferencePair> build_pairs(const std::vector<FeedbackRecord>& records,
                                        int preferred_threshold, int max_pairs,
                                        std::uint64_t seed) {
  if (preferred_threshold < 1) throw DataError("preferred_threshold must be >= 1");
  if (records.size() < 2) return {};

  std::vector<FeedbackRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(), better_record);

  std::vector<PreferencePair> valid;
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto& chosen = sorted[i];
    if (!chosen.rank || *chosen.rank > preferred_threshold) continue;
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      const auto& rejected = sorted[j];
      if (rank_key(chosen.rank) >= rank_key(rejected.rank)) continue;  // equal ranks never pair
      const std::string chosen_norm = normalize_text(chosen.rewrite);
      const std::string rejected_norm = normalize_text(rejected.rewrite);
      if (chosen_norm == rejected_norm) continue;
      if (!seen.emplace(chosen_norm, rejected_norm).second) continue;
      PreferencePair pair;
      pair.conv_id = chosen.conv_id;
      pair.turn_id = chosen.turn_id;
      pair.chosen = chosen.rewrite;
      pair.chosen_rank = *chosen.rank;
      pair.rejected = rejected.rewrite;
      pair.rejected_rank = rejected.rank;
      valid.push_back(std::move(pair));
    }
  }

  std::vector<PreferencePair> picked;
  if (max_pairs > 0 && valid.size() > static_cast<std::size_t>(max_pairs)) {
    Rng rng(seed);
    auto indices = rng.sample_without_replacement(valid.size(), static_cast<std::size_t>(max_pairs));
    picked.reserve(indices.size());
    for (std::size_t idx : indices) picked.push_back(valid[idx]);
  } else {
    picked = std::move(valid);
  }

  std::sort(picked.begin(), picked.end(), [](const PreferencePair& a, const PreferencePair& b) {
    return std::make_tuple(a.chosen_rank, rank_key(a.rejected_rank), a.chosen, a.rejected) <
           std::make_tuple(b.chosen_rank, rank_key(b.rejected_rank), b.chosen, b.rejected);
  });
  return picked;
}

std::string render_training_prompt(const Conversation& conv, int turn_index,
                                   int max_history_turns) {
  const std::string context = build_context(conv, turn_index, max_history_turns);
  const Turn& turn = conv.turns.at(static_cast<std::size_t>(turn_index - 1));
  if (context.empty()) return "Question: " + turn.question;
  return context + "\nQuestion: " + turn.question;
}

nlohmann::json ExportSummary::to_json() const {
  return nlohmann::json{{"n_turns", n_turns},
                        {"n_optimal_queries", n_optimal_queries},
                        {"n_pairs", n_pairs},
                        {"n_fallback", n_fallback}};
}

ExportSummary export_training_files(const std::vector<OptimalQuerySet>& optimal_sets,
                                    const std::vector<PreferencePair>& pairs,
                                    const std::vector<Conversation>& conversations,
                                    const std::string& sft_path, const std::string& dpo_path,
                                    const ExportOptions& options) {
  std::map<std::string, const Conversation*> by_id;
  for (const auto& conv : conversations) by_id[conv.conv_id] = &conv;

  auto prompt_for = [&](const std::string& conv_id, int turn_id) {
    auto it = by_id.find(conv_id);
    if (it == by_id.end()) {
      throw DataError("export references unknown conversation \"" + conv_id + "\"");
    }
    const Conversation& conv = *it->second;
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      if (conv.turns[i].turn_id == turn_id) {
        return render_training_prompt(conv, static_cast<int>(i + 1), options.max_history_turns);
      }
    }
    throw DataError("export references unknown turn " + std::to_string(turn_id) +
                    " of conversation \"" + conv_id + "\"");
  };

  std::vector<const OptimalQuerySet*> sets;
  sets.reserve(optimal_sets.size());
  for (const auto& set : optimal_sets) sets.push_back(&set);
  std::sort(sets.begin(), sets.end(), [](const OptimalQuerySet* a, const OptimalQuerySet* b) {
    return std::tie(a->conv_id, a->turn_id) < std::tie(b->conv_id, b->turn_id);
  });

  ExportSummary summary;
  JsonlWriter sft(sft_path);
  for (const OptimalQuerySet* set : sets) {
    if (set->fallback) ++summary.n_fallback;
    if (set->fallback && options.exclude_fallback) continue;
    ++summary.n_turns;
    const std::string prompt = prompt_for(set->conv_id, set->turn_id);
    for (const auto& query : set->queries) {
      sft.add(nlohmann::json{{"prompt", prompt}, {"completion", query.rewrite}});
      ++summary.n_optimal_queries;
    }
  }
  sft.commit();

  std::vector<const PreferencePair*> sorted_pairs;
  sorted_pairs.reserve(pairs.size());
  for (const auto& pair : pairs) sorted_pairs.push_back(&pair);
  std::sort(sorted_pairs.begin(), sorted_pairs.end(),
            [](const PreferencePair* a, const PreferencePair* b) {
              return std::make_tuple(a->conv_id, a->turn_id, a->chosen_rank,
                                     rank_key(a->rejected_rank), a->chosen, a->rejected) <
                     std::make_tuple(b->conv_id, b->turn_id, b->chosen_rank,
                                     rank_key(b->rejected_rank), b->chosen, b->rejected);
            });

  JsonlWriter dpo(dpo_path);
  for (const PreferencePair* pair : sorted_pairs) {
    const std::string prompt = prompt_for(pair->conv_id, pair->turn_id);
    dpo.add(nlohmann::json{
        {"prompt", prompt}, {"chosen", pair->chosen}, {"rejected", pair->rejected}});
    ++summary.n_pairs;
  }
  dpo.commit();
  return summary;
}

nlohmann::json optimal_set_to_json(const OptimalQuerySet& set) {
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& q : set.queries) {
    queries.push_back(nlohmann::json{{"rewrite", q.rewrite}, {"rank", q.rank}});
  }
  return nlohmann::json{{"conv_id", set.conv_id},
                        {"turn_id", set.turn_id},
                        {"queries", std::move(queries)},
                        {"fallback", set.fallback}};
}

OptimalQuerySet optimal_set_from_json(const nlohmann::json& record, const std::string& where) {
  OptimalQuerySet set;
  try {
    set.conv_id = record.at("conv_id").get<std::string>();
    set.turn_id = record.at("turn_id").get<int>();
    set.fallback = record.at("fallback").get<bool>();
    for (const auto& q : record.at("queries")) {
      set.queries.push_back(ScoredQuery{q.at("rewrite").get<std::string>(), q.at("rank").get<int>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(where + ": bad optimal-set record: " + ex.what());
  }
  return set;
}

std::vector<OptimalQuerySet> load_optimal_sets(const std::string& path) {
  std::vector<OptimalQuerySet> out;
  for_each_jsonl(path, [&](std::size_t line_no, const nlohmann::json& record) {
    out.push_back(optimal_set_from_json(record, path + ":" + std::to_string(line_no)));
  });
  return out;
}

void save_optimal_sets(const std::vector<OptimalQuerySet>& sets, const std::string& path) {
  JsonlWriter writer(path);
  for (const auto& set : sets) writer.add(optimal_set_to_json(set));
  writer.commit();
}

nlohmann::json pair_to_json(const PreferencePair& pair) {
  nlohmann::json out{{"conv_id", pair.conv_id},
                     {"turn_id", pair.turn_id},
                     {"chosen", pair.chosen},
                     {"chosen_rank", pair.chosen_rank},
                     {"rejected", pair.rejected}};
  if (pair.rejected_rank) out["rejected_rank"] = *pair.rejected_rank;
  return out;
}

PreferencePair pair_from_json(const nlohmann::json& record, const std::string& where) {
  PreferencePair pair;
  try {
    pair.conv_id = record.at("conv_id").get<std::string>();
    pair.turn_id = record.at("turn_id").get<int>();
    pair.chosen = record.at("chosen").get<std::string>();
    pair.chosen_rank = record.at("chosen_rank").get<int>();
    pair.rejected = record.at("rejected").get<std::string>();
    if (record.contains("rejected_rank") && !record["rejected_rank"].is_null()) {
      pair.rejected_rank = record["rejected_rank"].get<int>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(where + ": bad preference-pair record: " + ex.what());
  }
  return pair;
}

std::vector<PreferencePair> load_pairs(const std::string& path) {
  std::vector<PreferencePair> out;
  for_each_jsonl(path, [&](std::size_t line_no, const nlohmann::json& record) {
    out.push_back(pair_from_json(record, path + ":" + std::to_string(line_no)));
  });
  return out;
}

void save_pairs(const std::vector<PreferencePair>& pairs, const std::string& path) {
  JsonlWriter writer(path);
  for (const auto& pair : pairs) writer.add(pair_to_json(pair));
  writer.commit();
}

}  // namespace convqr
