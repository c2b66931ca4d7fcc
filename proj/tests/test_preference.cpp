#include <algorithm>
#include <doctest.h>
#include <set>

#include "convqr/errors.hpp"
#include "convqr/preference.hpp"
#include "convqr/util.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace convqr;

namespace {

FeedbackRecord rec(const std::string& rewrite, std::optional<int> rank,
                   const std::string& method = "question_rewriting", int idx = 0) {
  FeedbackRecord record;
  record.conv_id = "c1";
  record.turn_id = 2;
  record.candidate_idx = idx;
  record.method = method;
  record.rewrite = rewrite;
  record.rank = rank;
  record.top_k = 100;
  return record;
}

// Random per-turn feedback sets for property tests.
std::vector<FeedbackRecord> random_records(Rng& rng) {
  const int n = 1 + static_cast<int>(rng.below(12));
  std::vector<FeedbackRecord> records;
  for (int i = 0; i < n; ++i) {
    std::optional<int> rank;
    if (rng.below(4) != 0) rank = 1 + static_cast<int>(rng.below(100));
    // occasional duplicated text to exercise the distinct-strings rule
    std::string text = rng.below(5) == 0 && !records.empty()
                           ? records.front().rewrite
                           : "rewrite " + std::to_string(rng.below(1000));
    records.push_back(rec(text, rank, "question_rewriting", i));
  }
  return records;
}

}  // namespace

TEST_CASE("build_optimal_set keeps the best in-threshold rewrites") {
  std::vector<FeedbackRecord> records = {
      rec("r40", 40), rec("r5", 5),  rec("r12", 12), rec("r2", 2),
      rec("r31", 31), rec("r9", 9),
  };
  auto set = build_optimal_set(records, 30, 5);
  REQUIRE(set.has_value());
  CHECK_FALSE(set->fallback);
  REQUIRE(set->queries.size() == 4);
  // exhaustive filter-and-sort oracle agrees
  std::vector<std::optional<int>> ranks;
  for (const auto& r : records) ranks.push_back(r.rank);
  auto expected = oracle::optimal_ranks(ranks, 30, 5);
  REQUIRE(expected.size() == 4);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(set->queries[i].rank == expected[i]);
  }
  CHECK(set->queries[0].rewrite == "r2");
}

TEST_CASE("optimal set caps at max_n with deterministic tie-breaks") {
  std::vector<FeedbackRecord> records = {
      rec("b", 3, "planning", 0),  rec("a", 3, "question_rewriting", 1),
      rec("c", 3, "query_expansion", 2), rec("d", 1, "query_expansion", 3),
      rec("e", 2, "planning", 4),  rec("f", 3, "question_rewriting", 5),
  };
  auto set = build_optimal_set(records, 30, 5);
  REQUIRE(set.has_value());
  REQUIRE(set->queries.size() == 5);
  CHECK(set->queries[0].rewrite == "d");  // rank 1
  CHECK(set->queries[1].rewrite == "e");  // rank 2
  // rank-3 block ordered QR < Planning < QE, text ascending inside
  CHECK(set->queries[2].rewrite == "a");
  CHECK(set->queries[3].rewrite == "f");
  CHECK(set->queries[4].rewrite == "b");
}

TEST_CASE("fallback singleton is the argmin-rank rewrite") {
  auto set = build_optimal_set({rec("r60", 60), rec("r45", 45)}, 30, 5);
  REQUIRE(set.has_value());
  CHECK(set->fallback);
  REQUIRE(set->queries.size() == 1);
  CHECK(set->queries[0].rewrite == "r45");
  CHECK(set->queries[0].rank == 45);
}

TEST_CASE("all-NotFound turns produce no optimal set") {
  CHECK(build_optimal_set({rec("x", std::nullopt), rec("y", std::nullopt)}, 30, 5) ==
        std::nullopt);
  CHECK_THROWS_AS(build_optimal_set({}, 30, 5), DataError);
}

TEST_CASE("build_pairs matches the exhaustive enumeration oracle") {
  // ranks [1, 3, 3, 7, NotFound], all distinct strings
  std::vector<FeedbackRecord> records = {
      rec("q1", 1, "question_rewriting", 0),  rec("q3a", 3, "question_rewriting", 1),
      rec("q3b", 3, "question_rewriting", 2), rec("q7", 7, "question_rewriting", 3),
      rec("qnf", std::nullopt, "question_rewriting", 4),
  };
  auto pairs = build_pairs(records, 50, 0, 1234);
  // oracle enumeration
  std::vector<oracle::FeedbackLite> lite;
  for (const auto& r : records) lite.push_back({r.rewrite, r.rank});
  auto expected = oracle::enumerate_valid_pairs(lite, 50);
  CHECK(expected.size() == 9);
  REQUIRE(pairs.size() == expected.size());

  std::set<std::pair<std::string, std::string>> got_set, want_set;
  for (const auto& p : pairs) got_set.emplace(p.chosen, p.rejected);
  for (const auto& p : expected) want_set.emplace(p.chosen, p.rejected);
  CHECK(got_set == want_set);
  // the equal-rank (q3a, q3b) pair is excluded
  CHECK(got_set.count({"q3a", "q3b"}) == 0);
  CHECK(got_set.count({"q3b", "q3a"}) == 0);
}

TEST_CASE("build_pairs trivial cases") {
  CHECK(build_pairs({rec("only", 5)}, 50, 0, 1).empty());
  // best rank above the preferred threshold -> nothing qualifies
  CHECK(build_pairs({rec("a", 60), rec("b", 70)}, 50, 0, 1).empty());
  CHECK(build_pairs({}, 50, 0, 1).empty());
}

TEST_CASE("sampling respects max_pairs and is deterministic per seed") {
  std::vector<FeedbackRecord> records;
  for (int i = 0; i < 8; ++i) {
    records.push_back(rec("rewrite " + std::to_string(i), i + 1, "question_rewriting", i));
  }
  auto all = build_pairs(records, 50, 0, 500);
  CHECK(all.size() == 8 * 7 / 2);

  auto sampled = build_pairs(records, 50, 6, 500);
  CHECK(sampled.size() == 6);
  auto sampled_again = build_pairs(records, 50, 6, 500);
  REQUIRE(sampled.size() == sampled_again.size());
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    CHECK(sampled[i].chosen == sampled_again[i].chosen);
    CHECK(sampled[i].rejected == sampled_again[i].rejected);
  }
  auto other_seed = build_pairs(records, 50, 6, 501);
  bool differs = false;
  for (std::size_t i = 0; i < sampled.size() && !differs; ++i) {
    differs = sampled[i].chosen != other_seed[i].chosen ||
              sampled[i].rejected != other_seed[i].rejected;
  }
  CHECK(differs);
  // sampled pairs are a subset of the full enumeration
  std::set<std::pair<std::string, std::string>> universe;
  for (const auto& p : all) universe.emplace(p.chosen, p.rejected);
  for (const auto& p : sampled) CHECK(universe.count({p.chosen, p.rejected}) == 1);
}

TEST_CASE("pair invariants hold over 10000 random feedback sets") {
  Rng rng(991);
  for (int trial = 0; trial < 10000; ++trial) {
    auto records = random_records(rng);
    const int threshold = 1 + static_cast<int>(rng.below(100));
    const int max_pairs = rng.below(2) == 0 ? 0 : 1 + static_cast<int>(rng.below(10));
    auto pairs = build_pairs(records, threshold, max_pairs, rng.next());

    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& pair : pairs) {
      CHECK(pair.chosen_rank <= threshold);
      CHECK(rank_key(pair.chosen_rank) < rank_key(pair.rejected_rank));
      CHECK(normalize_text(pair.chosen) != normalize_text(pair.rejected));
      CHECK(seen.emplace(normalize_text(pair.chosen), normalize_text(pair.rejected)).second);
    }
    if (max_pairs > 0) CHECK(pairs.size() <= static_cast<std::size_t>(max_pairs));

    // oracle agreement on the uncapped valid set
    std::vector<oracle::FeedbackLite> lite;
    for (const auto& r : records) lite.push_back({r.rewrite, r.rank});
    auto expected = oracle::enumerate_valid_pairs(lite, threshold);
    auto uncapped = build_pairs(records, threshold, 0, 0);
    CHECK(uncapped.size() == expected.size());
  }
}

TEST_CASE("optimal-set invariants hold over random feedback sets") {
  Rng rng(992);
  for (int trial = 0; trial < 10000; ++trial) {
    auto records = random_records(rng);
    const int threshold = 1 + static_cast<int>(rng.below(60));
    auto set = build_optimal_set(records, threshold, 5);
    std::int64_t best = rank_key(std::nullopt);
    for (const auto& r : records) best = std::min(best, rank_key(r.rank));
    if (!set) {
      CHECK(best == rank_key(std::nullopt));  // only when everything missed
      continue;
    }
    CHECK(set->queries.size() >= 1);
    CHECK(set->queries.size() <= 5);
    if (set->fallback) {
      REQUIRE(set->queries.size() == 1);
      CHECK(set->queries[0].rank == best);  // argmin-rank candidate
      CHECK(set->queries[0].rank > threshold);
    } else {
      for (const auto& q : set->queries) CHECK(q.rank <= threshold);
      // sorted by rank ascending
      for (std::size_t i = 1; i < set->queries.size(); ++i) {
        CHECK(set->queries[i - 1].rank <= set->queries[i].rank);
      }
    }
  }
}

TEST_CASE("threshold monotonicity: tightening never adds items") {
  Rng rng(993);
  for (int trial = 0; trial < 2000; ++trial) {
    auto records = random_records(rng);
    const int loose = 2 + static_cast<int>(rng.below(98));
    const int tight = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(loose)));

    auto loose_set = build_optimal_set(records, loose, 5);
    auto tight_set = build_optimal_set(records, tight, 5);
    if (tight_set) {
      REQUIRE(loose_set.has_value());
      std::set<std::string> loose_queries;
      for (const auto& q : loose_set->queries) loose_queries.insert(q.rewrite);
      for (const auto& q : tight_set->queries) {
        CHECK(loose_queries.count(q.rewrite) == 1);  // set inclusion
      }
    }

    auto loose_pairs = build_pairs(records, loose, 0, 0);
    auto tight_pairs = build_pairs(records, tight, 0, 0);
    std::set<std::pair<std::string, std::string>> loose_keys;
    for (const auto& p : loose_pairs) loose_keys.emplace(p.chosen, p.rejected);
    for (const auto& p : tight_pairs) CHECK(loose_keys.count({p.chosen, p.rejected}) == 1);

    // capped sampling: the count is monotone
    auto capped_loose = build_pairs(records, loose, 6, 7);
    auto capped_tight = build_pairs(records, tight, 6, 7);
    CHECK(capped_tight.size() <= capped_loose.size());
  }
}

TEST_CASE("export writes SFT fan-out and DPO pairs with shared prompts") {
  testutil::TempDir dir("exports");
  Conversation conv;
  conv.conv_id = "c1";
  Turn t1;
  t1.turn_id = 1;
  t1.question = "who is x";
  t1.answer = "x is y";
  t1.gold_passage_ids = {"p1"};
  Turn t2;
  t2.turn_id = 2;
  t2.question = "what about him";
  t2.answer = "";
  t2.gold_passage_ids = {"p2"};
  conv.turns = {t1, t2};

  OptimalQuerySet set;
  set.conv_id = "c1";
  set.turn_id = 2;
  set.queries = {{"q alpha", 1}, {"q beta", 2}, {"q gamma", 5}, {"q delta", 9}};

  PreferencePair pair;
  pair.conv_id = "c1";
  pair.turn_id = 2;
  pair.chosen = "q alpha";
  pair.chosen_rank = 1;
  pair.rejected = "q omega";
  pair.rejected_rank = 80;

  auto summary = export_training_files({set}, {pair}, {conv}, dir.file("sft.jsonl"),
                                       dir.file("dpo.jsonl"));
  CHECK(summary.n_turns == 1);
  CHECK(summary.n_optimal_queries == 4);
  CHECK(summary.n_pairs == 1);
  CHECK(summary.n_fallback == 0);

  const std::string sft = read_file(dir.file("sft.jsonl"));
  // 4 optimal queries -> 4 lines sharing one prompt
  CHECK(std::count(sft.begin(), sft.end(), '\n') == 4);
  const std::string expected_prompt = "Q1: who is x A1: x is y\\nQuestion: what about him";
  CHECK(sft.find(expected_prompt) != std::string::npos);

  const std::string dpo = read_file(dir.file("dpo.jsonl"));
  CHECK(std::count(dpo.begin(), dpo.end(), '\n') == 1);
  CHECK(dpo.find("\"chosen\":\"q alpha\"") != std::string::npos);
  CHECK(dpo.find("\"rejected\":\"q omega\"") != std::string::npos);

  // first-turn prompts have no context block
  OptimalQuerySet first_turn;
  first_turn.conv_id = "c1";
  first_turn.turn_id = 1;
  first_turn.queries = {{"standalone q", 3}};
  export_training_files({first_turn}, {}, {conv}, dir.file("sft2.jsonl"), dir.file("dpo2.jsonl"));
  const std::string sft2 = read_file(dir.file("sft2.jsonl"));
  CHECK(sft2.find("\"prompt\":\"Question: who is x\"") != std::string::npos);
  CHECK(read_file(dir.file("dpo2.jsonl")).empty());
}

TEST_CASE("exclude-fallback drops fallback turns from SFT") {
  testutil::TempDir dir("fallback");
  Conversation conv;
  conv.conv_id = "c1";
  Turn t1;
  t1.turn_id = 1;
  t1.question = "q";
  t1.gold_passage_ids = {"p"};
  conv.turns = {t1};

  OptimalQuerySet fb;
  fb.conv_id = "c1";
  fb.turn_id = 1;
  fb.fallback = true;
  fb.queries = {{"only hope", 77}};

  ExportOptions keep;
  auto kept = export_training_files({fb}, {}, {conv}, dir.file("a.jsonl"), dir.file("b.jsonl"), keep);
  CHECK(kept.n_optimal_queries == 1);
  CHECK(kept.n_fallback == 1);

  ExportOptions drop;
  drop.exclude_fallback = true;
  auto dropped =
      export_training_files({fb}, {}, {conv}, dir.file("c.jsonl"), dir.file("d.jsonl"), drop);
  CHECK(dropped.n_optimal_queries == 0);
  CHECK(dropped.n_fallback == 1);
  CHECK(read_file(dir.file("c.jsonl")).empty());
}

TEST_CASE("export files are byte-identical across runs") {
  testutil::TempDir dir("determinism");
  Conversation conv;
  conv.conv_id = "c1";
  Turn t1;
  t1.turn_id = 1;
  t1.question = "q";
  t1.gold_passage_ids = {"p"};
  conv.turns = {t1};
  OptimalQuerySet set;
  set.conv_id = "c1";
  set.turn_id = 1;
  set.queries = {{"alpha", 1}, {"beta", 2}};
  PreferencePair pair;
  pair.conv_id = "c1";
  pair.turn_id = 1;
  pair.chosen = "alpha";
  pair.chosen_rank = 1;
  pair.rejected = "beta";
  pair.rejected_rank = 2;

  export_training_files({set}, {pair}, {conv}, dir.file("sft_a.jsonl"), dir.file("dpo_a.jsonl"));
  export_training_files({set}, {pair}, {conv}, dir.file("sft_b.jsonl"), dir.file("dpo_b.jsonl"));
  CHECK(read_file(dir.file("sft_a.jsonl")) == read_file(dir.file("sft_b.jsonl")));
  CHECK(read_file(dir.file("dpo_a.jsonl")) == read_file(dir.file("dpo_b.jsonl")));
}

TEST_CASE("optimal set and pair files round-trip") {
  testutil::TempDir dir("prefio");
  OptimalQuerySet set;
  set.conv_id = "c1";
  set.turn_id = 4;
  set.fallback = true;
  set.queries = {{"the rewrite", 44}};
  save_optimal_sets({set}, dir.file("sets.jsonl"));
  auto sets = load_optimal_sets(dir.file("sets.jsonl"));
  REQUIRE(sets.size() == 1);
  CHECK(sets[0].conv_id == "c1");
  CHECK(sets[0].fallback);
  CHECK(sets[0].queries[0].rewrite == "the rewrite");

  PreferencePair pair;
  pair.conv_id = "c1";
  pair.turn_id = 4;
  pair.chosen = "good";
  pair.chosen_rank = 2;
  pair.rejected = "bad";
  save_pairs({pair}, dir.file("pairs.jsonl"));
  auto pairs = load_pairs(dir.file("pairs.jsonl"));
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].rejected_rank == std::nullopt);
  CHECK_FALSE(pair_to_json(pair).contains("rejected_rank"));
}
