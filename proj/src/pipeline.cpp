#include "convqr/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <set>
#include <tuple>

#include "convqr/bm25.hpp"
#include "convqr/conversation.hpp"
#include "convqr/errors.hpp"
#include "convqr/eval.hpp"
#include "convqr/feedback.hpp"
#include "convqr/jsonl.hpp"
#include "convqr/preference.hpp"
#include "convqr/toy_lm.hpp"
#include "convqr/util.hpp"

namespace fs = std::filesystem;

namespace convqr {

Manifest Manifest::load_or_empty(const fs::path& path) {
  Manifest manifest;
  if (!fs::exists(path)) return manifest;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path.string()));
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("corrupt manifest " + path.string() + ": " + ex.what());
  }
  if (doc.contains("stages") && doc["stages"].is_object()) manifest.stages_ = doc["stages"];
  return manifest;
}

bool Manifest::up_to_date(const std::string& stage, const std::string& config_hash,
                          const nlohmann::json& inputs, const std::vector<std::string>& outputs,
                          const fs::path& work_dir) const {
  if (!stages_.contains(stage)) return false;
  const auto& entry = stages_[stage];
  if (entry.value("config_hash", std::string()) != config_hash) return false;
  if (entry.value("inputs", nlohmann::json::object()) != inputs) return false;
  for (const auto& out : outputs) {
    if (!fs::exists(work_dir / out)) return false;
  }
  return true;
}

void Manifest::record(const std::string& stage, const std::string& config_hash,
                      const nlohmann::json& inputs, const std::vector<std::string>& outputs) {
  std::vector<std::string> sorted_outputs = outputs;
  std::sort(sorted_outputs.begin(), sorted_outputs.end());
  stages_[stage] = nlohmann::json{
      {"config_hash", config_hash}, {"inputs", inputs}, {"outputs", sorted_outputs}};
}

void Manifest::save(const fs::path& path) const {
  nlohmann::json doc{{"version", 1}, {"stages", stages_}};
  write_file(path.string(), doc.dump(2) + "\n");
}

Pipeline::Pipeline(PipelineConfig config, bool force)
    : config_(std::move(config)), force_(force), work_(config_.paths.work_dir) {
  config_.validate();
  fs::create_directories(work_ / "artifacts" / "runs");
  fs::create_directories(work_ / "reports");
  manifest_ = Manifest::load_or_empty(work_ / "manifest.json");
}

fs::path Pipeline::artifact(const std::string& relative) const { return work_ / relative; }

std::string Pipeline::require_artifact(const std::string& relative,
                                       const std::string& producer) const {
  const fs::path path = work_ / relative;
  if (!fs::exists(path)) {
    throw StageOrderError(relative + " is missing; run `" + producer + "` first", producer);
  }
  return path.string();
}

bool Pipeline::stage_done(const std::string& stage, const nlohmann::json& inputs,
                          const std::vector<std::string>& outputs) {
  return !force_ &&
         manifest_.up_to_date(stage, config_.config_hash(), inputs, outputs, work_);
}

void Pipeline::finish_stage(const std::string& stage, const nlohmann::json& inputs,
                            const std::vector<std::string>& outputs) {
  manifest_.record(stage, config_.config_hash(), inputs, outputs);
  manifest_.save(work_ / "manifest.json");
}

std::unique_ptr<ChatClient> Pipeline::make_client() const {
  if (config_.client.mock) {
    return std::make_unique<MockChatClient>(seed_substream(config_.seed, "mock-client"));
  }
  if (!config_.client.base_url.empty()) {
    const char* key = std::getenv("LLM_API_KEY");
    return std::make_unique<HttpChatClient>(config_.client.base_url, key ? key : "");
  }
  return HttpChatClient::from_env();
}

ExploreOptions Pipeline::explore_options() const {
  ExploreOptions options;
  options.model = config_.client.model;
  options.temperature = config_.client.temperature;
  options.max_tokens = config_.client.max_tokens;
  options.count_question_rewriting = config_.counts.question_rewriting;
  options.count_planning = config_.counts.planning;
  options.count_query_expansion = config_.counts.query_expansion;
  options.max_attempts = config_.client.max_attempts;
  return options;
}

StageResult Pipeline::ingest() {
  if (config_.paths.conversations.empty()) {
    throw ConfigError("paths.conversations", "is required for `ingest`");
  }
  nlohmann::json inputs{{"conversations", file_digest(config_.paths.conversations)}};
  const std::vector<std::string> outputs{kConversations, kQrels};
  if (stage_done("ingest", inputs, outputs)) return {true, "ingest up to date"};

  auto conversations = ingest_conversations(config_.paths.conversations, config_.dataset_format);
  write_file(artifact(kConversations).string(), conversations_to_jsonl(conversations));

  Qrels qrels;
  int non_evaluable = 0;
  for (const auto& conv : conversations) {
    for (const auto& turn : conv.turns) {
      if (!turn.evaluable()) {
        ++non_evaluable;
        continue;
      }
      auto& rel = qrels[query_id(conv.conv_id, turn.turn_id)];
      rel.insert(turn.gold_passage_ids.begin(), turn.gold_passage_ids.end());
    }
  }
  save_qrels(qrels, artifact(kQrels).string());

  finish_stage("ingest", inputs, outputs);
  return {false, "ingested " + std::to_string(conversations.size()) + " conversations (" +
                     std::to_string(qrels.size()) + " evaluable turns, " +
                     std::to_string(non_evaluable) + " without gold labels)"};
}

StageResult Pipeline::index() {
  if (config_.paths.passages.empty()) {
    throw ConfigError("paths.passages", "is required for `index`");
  }
  nlohmann::json inputs{{"passages", file_digest(config_.paths.passages)}};
  const std::vector<std::string> outputs{kIndex};
  if (stage_done("index", inputs, outputs)) return {true, "index up to date"};

  auto passages = load_passages(config_.paths.passages);
  auto built = build_index(std::move(passages), retriever_profile(config_.retriever_profile));
  built.save(artifact(kIndex).string());

  finish_stage("index", inputs, outputs);
  return {false, "indexed " + std::to_string(built.doc_count()) + " passages under profile " +
                     config_.retriever_profile};
}

namespace {

struct TurnRef {
  const Conversation* conv;
  int turn_index;  // 1-based position in conv->turns
};

std::vector<TurnRef> evaluable_turns(const std::vector<Conversation>& conversations) {
  std::vector<TurnRef> turns;
  for (const auto& conv : conversations) {
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      if (conv.turns[i].evaluable()) {
        turns.push_back(TurnRef{&conv, static_cast<int>(i + 1)});
      }
    }
  }
  return turns;
}

bool candidate_order(const RewriteCandidate& a, const RewriteCandidate& b) {
  return std::make_tuple(a.conv_id, a.turn_id, method_priority(a.method), a.candidate_idx) <
         std::make_tuple(b.conv_id, b.turn_id, method_priority(b.method), b.candidate_idx);
}

}  // namespace

StageResult Pipeline::explore() {
  const std::string conversations_path = require_artifact(kConversations, "ingest");
  nlohmann::json inputs{{"conversations", file_digest(conversations_path)}};
  const bool budgeted = config_.exploration_profile == "topiocqa-budget";
  std::unique_ptr<PassageIndex> index;
  if (budgeted) {
    inputs["index"] = file_digest(require_artifact(kIndex, "index"));
  }
  const std::vector<std::string> outputs{kCandidates};
  if (stage_done("explore", inputs, outputs)) return {true, "explore up to date"};
  if (budgeted) {
    index = std::make_unique<PassageIndex>(PassageIndex::load(artifact(kIndex).string()));
  }

  auto conversations = ingest_conversations(conversations_path);
  auto turns = evaluable_turns(conversations);
  auto client = make_client();
  const ExploreOptions options = explore_options();

  std::vector<TurnContext> contexts(turns.size());
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& [conv, turn_index] = turns[i];
    const Turn& turn = conv->turns[static_cast<std::size_t>(turn_index - 1)];
    contexts[i].conv_id = conv->conv_id;
    contexts[i].turn_id = turn.turn_id;
    contexts[i].context = build_context(*conv, turn_index, config_.max_history_turns);
    contexts[i].question = turn.question;
    contexts[i].human_rewrite = turn.human_rewrite;
  }

  // Question rewriting first; its top candidate seeds query expansion.
  std::vector<std::vector<RewriteCandidate>> qr(turns.size());
  parallel_for_ordered(turns.size(), config_.client.max_in_flight, [&](std::size_t i) {
    qr[i] = generate_candidates(contexts[i], PromptMethod::QuestionRewriting, *client, options);
  });

  // Under the budget profile, planning only covers turns where question
  // rewriting yielded fewer than 3 in-threshold queries.
  std::vector<char> wants_planning(turns.size(), 1);
  if (budgeted) {
    parallel_for_ordered(turns.size(), config_.client.max_in_flight, [&](std::size_t i) {
      const Turn& turn = turns[i].conv->turns[static_cast<std::size_t>(turns[i].turn_index - 1)];
      int optimal = 0;
      for (const auto& candidate : qr[i]) {
        auto rank = gold_rank(index->retrieve_top_k(candidate.rewrite, config_.top_k),
                              turn.gold_passage_ids);
        if (rank && *rank <= config_.thresholds.optimal) ++optimal;
      }
      wants_planning[i] = optimal < 3 ? 1 : 0;
    });
  }

  std::vector<std::vector<RewriteCandidate>> planning(turns.size());
  parallel_for_ordered(turns.size(), config_.client.max_in_flight, [&](std::size_t i) {
    if (!wants_planning[i]) return;
    planning[i] = generate_candidates(contexts[i], PromptMethod::Planning, *client, options);
  });

  std::vector<std::vector<RewriteCandidate>> expansion(turns.size());
  parallel_for_ordered(turns.size(), config_.client.max_in_flight, [&](std::size_t i) {
    if (!qr[i].empty()) contexts[i].qe_base = qr[i].front().rewrite;
    expansion[i] = generate_candidates(contexts[i], PromptMethod::QueryExpansion, *client, options);
  });

  std::vector<RewriteCandidate> all;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    all.insert(all.end(), qr[i].begin(), qr[i].end());
    all.insert(all.end(), planning[i].begin(), planning[i].end());
    all.insert(all.end(), expansion[i].begin(), expansion[i].end());
  }
  std::sort(all.begin(), all.end(), candidate_order);
  save_candidates(all, artifact(kCandidates).string());

  finish_stage("explore", inputs, outputs);
  return {false, "explored " + std::to_string(all.size()) + " candidates over " +
                     std::to_string(turns.size()) + " turns"};
}

StageResult Pipeline::feedback() {
  const std::string candidates_path = require_artifact(kCandidates, "explore");
  const std::string conversations_path = require_artifact(kConversations, "ingest");
  const std::string index_path = require_artifact(kIndex, "index");
  nlohmann::json inputs{{"candidates", file_digest(candidates_path)},
                        {"conversations", file_digest(conversations_path)},
                        {"index", file_digest(index_path)}};
  const std::vector<std::string> outputs{kFeedback, kRunOriginal, kRunHuman, kRunRfBest};
  if (stage_done("feedback", inputs, outputs)) return {true, "feedback up to date"};

  auto candidates = load_candidates(candidates_path);
  auto conversations = ingest_conversations(conversations_path);
  auto index = PassageIndex::load(index_path);

  FeedbackOptions options;
  options.top_k = config_.top_k;
  options.retriever_profile = config_.retriever_profile;
  options.workers = config_.client.max_in_flight;
  auto outcome = collect_feedback(candidates, conversations, index, options);
  save_feedback(outcome.records, artifact(kFeedback).string());

  // Baseline and best-explored-rewrite runs for the eval stage.
  Run original_run, human_run, best_run;
  std::map<std::pair<std::string, int>, const FeedbackRecord*> best;
  for (const auto& record : outcome.records) {
    if (starts_with(record.method, "baseline:")) continue;
    auto key = std::make_pair(record.conv_id, record.turn_id);
    auto it = best.find(key);
    if (it == best.end() ||
        rank_key(record.rank) < rank_key(it->second->rank)) {
      best[key] = &record;
    }
  }
  for (const auto& conv : conversations) {
    for (const auto& turn : conv.turns) {
      if (!turn.evaluable()) continue;
      const std::string qid = query_id(conv.conv_id, turn.turn_id);
      original_run[qid] = index.retrieve_top_k(turn.question, config_.top_k).entries;
      if (turn.human_rewrite && !trim(*turn.human_rewrite).empty()) {
        human_run[qid] = index.retrieve_top_k(*turn.human_rewrite, config_.top_k).entries;
      }
      auto it = best.find({conv.conv_id, turn.turn_id});
      if (it != best.end()) {
        best_run[qid] = index.retrieve_top_k(it->second->rewrite, config_.top_k).entries;
      }
    }
  }
  save_run(original_run, "baseline_original", artifact(kRunOriginal).string());
  save_run(human_run, "baseline_human", artifact(kRunHuman).string());
  save_run(best_run, "rf_best", artifact(kRunRfBest).string());

  finish_stage("feedback", inputs, outputs);
  return {false, "scored " + std::to_string(outcome.records.size()) + " records (" +
                     std::to_string(outcome.skipped_non_evaluable) + " skipped non-evaluable)"};
}

StageResult Pipeline::build_rf() {
  const std::string feedback_path = require_artifact(kFeedback, "feedback");
  nlohmann::json inputs{{"feedback", file_digest(feedback_path)}};
  const std::vector<std::string> outputs{kOptimalSets, kPairs};
  if (stage_done("build-rf", inputs, outputs)) return {true, "build-rf up to date"};

  auto records = load_feedback(feedback_path);
  std::map<std::pair<std::string, int>, std::vector<FeedbackRecord>> by_turn;
  for (auto& record : records) {
    if (starts_with(record.method, "baseline:")) continue;  // eval-only rows
    by_turn[{record.conv_id, record.turn_id}].push_back(std::move(record));
  }

  std::vector<OptimalQuerySet> sets;
  std::vector<PreferencePair> pairs;
  for (const auto& [key, turn_records] : by_turn) {
    auto set = build_optimal_set(turn_records, config_.thresholds.optimal, 5);
    if (set) sets.push_back(std::move(*set));
    const std::uint64_t seed = seed_substream(
        config_.seed, "pairs:" + key.first + ":" + std::to_string(key.second));
    auto turn_pairs =
        build_pairs(turn_records, config_.thresholds.preferred, config_.max_pairs, seed);
    pairs.insert(pairs.end(), turn_pairs.begin(), turn_pairs.end());
  }
  save_optimal_sets(sets, artifact(kOptimalSets).string());
  save_pairs(pairs, artifact(kPairs).string());

  finish_stage("build-rf", inputs, outputs);
  int fallbacks = 0;
  for (const auto& set : sets) {
    if (set.fallback) ++fallbacks;
  }
  return {false, "built " + std::to_string(sets.size()) + " optimal sets (" +
                     std::to_string(fallbacks) + " fallback) and " + std::to_string(pairs.size()) +
                     " pairs"};
}

StageResult Pipeline::export_files() {
  const std::string sets_path = require_artifact(kOptimalSets, "build-rf");
  const std::string pairs_path = require_artifact(kPairs, "build-rf");
  const std::string conversations_path = require_artifact(kConversations, "ingest");
  nlohmann::json inputs{{"optimal_sets", file_digest(sets_path)},
                        {"pairs", file_digest(pairs_path)},
                        {"conversations", file_digest(conversations_path)}};
  const std::vector<std::string> outputs{kSft, kDpo, kExportSummary};
  if (stage_done("export", inputs, outputs)) return {true, "export up to date"};

  ExportOptions options;
  options.exclude_fallback = config_.exclude_fallback;
  options.max_history_turns = config_.max_history_turns;
  auto summary = export_training_files(load_optimal_sets(sets_path), load_pairs(pairs_path),
                                       ingest_conversations(conversations_path),
                                       artifact(kSft).string(), artifact(kDpo).string(), options);
  write_file(artifact(kExportSummary).string(), summary.to_json().dump(2) + "\n");

  finish_stage("export", inputs, outputs);
  return {false, "exported " + std::to_string(summary.n_optimal_queries) + " SFT lines (" +
                     std::to_string(summary.n_turns) + " turns, " +
                     std::to_string(summary.n_fallback) + " fallback) and " +
                     std::to_string(summary.n_pairs) + " DPO pairs"};
}

namespace {

struct TrainingData {
  ToyVocab vocab;
  std::vector<SftExample> sft;
  std::vector<DpoExample> dpo;
  std::vector<SftExample> prestage;
};

TrainingData load_training_data(const std::string& sft_path, const std::string& dpo_path,
                                const std::vector<Conversation>* prestage_convs,
                                int max_history_turns) {
  TrainingData data;
  std::vector<std::string> texts;
  std::vector<std::pair<std::string, std::string>> sft_rows;
  std::vector<std::tuple<std::string, std::string, std::string>> dpo_rows;

  for_each_jsonl(sft_path, [&](std::size_t line_no, const nlohmann::json& record) {
    (void)line_no;
    sft_rows.emplace_back(record.at("prompt").get<std::string>(),
                          record.at("completion").get<std::string>());
    texts.push_back(sft_rows.back().second);
  });
  for_each_jsonl(dpo_path, [&](std::size_t line_no, const nlohmann::json& record) {
    (void)line_no;
    dpo_rows.emplace_back(record.at("prompt").get<std::string>(),
                          record.at("chosen").get<std::string>(),
                          record.at("rejected").get<std::string>());
    texts.push_back(std::get<1>(dpo_rows.back()));
    texts.push_back(std::get<2>(dpo_rows.back()));
  });

  std::vector<std::pair<std::string, std::string>> prestage_rows;
  if (prestage_convs) {
    for (const auto& conv : *prestage_convs) {
      for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        const Turn& turn = conv.turns[i];
        if (trim(turn.answer).empty()) continue;
        prestage_rows.emplace_back(
            render_training_prompt(conv, static_cast<int>(i + 1), max_history_turns),
            turn.answer);
        texts.push_back(turn.answer);
      }
    }
  }

  data.vocab = ToyVocab::build(texts);
  for (const auto& [prompt, completion] : sft_rows) {
    data.sft.push_back({prompt, data.vocab.encode(completion)});
  }
  for (const auto& [prompt, chosen, rejected] : dpo_rows) {
    data.dpo.push_back({prompt, data.vocab.encode(chosen), data.vocab.encode(rejected)});
  }
  for (const auto& [prompt, answer] : prestage_rows) {
    data.prestage.push_back({prompt, data.vocab.encode(answer)});
  }
  return data;
}

nlohmann::json train_report(const std::string& objective, int steps, const TrainResult& result,
                            double grad_check_err) {
  nlohmann::json report{{"objective", objective},
                        {"steps", steps},
                        {"final_loss", result.loss_curve.back()},
                        {"margin_curve", result.margin_curve},
                        {"grad_check_max_rel_err", grad_check_err},
                        {"loss_curve", result.loss_curve}};
  return report;
}

}  // namespace

StageResult Pipeline::train_toy() {
  const std::string sft_path = require_artifact(kSft, "export");
  const std::string dpo_path = require_artifact(kDpo, "export");
  nlohmann::json inputs{{"sft", file_digest(sft_path)}, {"dpo", file_digest(dpo_path)}};
  std::vector<Conversation> prestage_convs;
  if (config_.train.answer_prestage) {
    const std::string conversations_path = require_artifact(kConversations, "ingest");
    inputs["conversations"] = file_digest(conversations_path);
    prestage_convs = ingest_conversations(conversations_path);
  }
  const std::vector<std::string> outputs{kTrainSftReport, kTrainDpoReport};
  if (stage_done("train-toy", inputs, outputs)) return {true, "train-toy up to date"};

  auto data = load_training_data(sft_path, dpo_path,
                                 config_.train.answer_prestage ? &prestage_convs : nullptr,
                                 config_.max_history_turns);
  if (data.sft.empty()) throw DataError("SFT export is empty; nothing to train on");
  if (data.dpo.empty()) throw DataError("DPO export is empty; nothing to train on");

  auto params = ToyLMParams::zeros(config_.train.context_buckets, data.vocab.size());

  TrainConfig sft_config;
  sft_config.learning_rate = config_.train.sft_learning_rate;
  sft_config.steps = config_.train.sft_steps;
  sft_config.seed = config_.seed;

  if (config_.train.answer_prestage && !data.prestage.empty()) {
    TrainConfig prestage_config = sft_config;
    prestage_config.steps = config_.train.prestage_steps;
    params = train_sft(std::move(params), data.prestage, prestage_config).params;
  }

  const double sft_err = grad_check_sft(params, data.sft, 1e-5, 200,
                                        seed_substream(config_.seed, "grad-check-sft"));
  auto sft_result = train_sft(std::move(params), data.sft, sft_config);
  write_file(artifact(kTrainSftReport).string(),
             train_report("sft", sft_config.steps, sft_result, sft_err).dump(2) + "\n");

  TrainConfig dpo_config;
  dpo_config.beta = config_.train.beta;
  dpo_config.learning_rate = config_.train.dpo_learning_rate;
  dpo_config.steps = config_.train.dpo_steps;
  dpo_config.seed = config_.seed;
  const double dpo_err = grad_check_dpo(sft_result.params, sft_result.params, data.dpo,
                                        dpo_config.beta, 1e-5, 200,
                                        seed_substream(config_.seed, "grad-check-dpo"));
  auto dpo_result = train_dpo(sft_result.params, data.dpo, dpo_config);
  write_file(artifact(kTrainDpoReport).string(),
             train_report("dpo", dpo_config.steps, dpo_result, dpo_err).dump(2) + "\n");

  finish_stage("train-toy", inputs, outputs);

  auto margins = dpo_margins(dpo_result.params, sft_result.params, data.dpo, dpo_config.beta);
  int positive = 0;
  for (double m : margins) {
    if (m > 0.0) ++positive;
  }
  return {false,
          "trained toy LM (vocab " + std::to_string(data.vocab.size()) + "): sft final loss " +
              format_fixed(sft_result.loss_curve.back(), 4) + ", dpo final loss " +
              format_fixed(dpo_result.loss_curve.back(), 4) + ", positive margins " +
              std::to_string(positive) + "/" + std::to_string(margins.size())};
}

namespace {

std::map<std::string, TurnType> classify_all(const std::vector<Conversation>& conversations,
                                             const std::map<std::string, std::string>& doc_of) {
  std::map<std::string, TurnType> classes;
  for (const auto& conv : conversations) {
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
      if (!conv.turns[i].evaluable()) continue;
      classes[query_id(conv.conv_id, conv.turns[i].turn_id)] =
          classify_turn(conv, static_cast<int>(i + 1), doc_of);
    }
  }
  return classes;
}

}  // namespace

StageResult Pipeline::eval(const std::string& run_tag) {
  std::string run_path;
  std::string tag = run_tag;
  if (run_tag == "baseline_original") {
    run_path = require_artifact(kRunOriginal, "feedback");
  } else if (run_tag == "baseline_human") {
    run_path = require_artifact(kRunHuman, "feedback");
  } else if (run_tag == "rf_best") {
    run_path = require_artifact(kRunRfBest, "feedback");
  } else {
    if (!fs::exists(run_tag)) {
      throw StageOrderError("run file \"" + run_tag + "\" not found; run `feedback` first",
                            "feedback");
    }
    run_path = run_tag;
    tag = fs::path(run_tag).stem().string();
  }
  const std::string qrels_path = require_artifact(kQrels, "ingest");
  const std::string conversations_path = require_artifact(kConversations, "ingest");
  const std::string index_path = require_artifact(kIndex, "index");

  nlohmann::json inputs{{"run", file_digest(run_path)},
                        {"qrels", file_digest(qrels_path)},
                        {"conversations", file_digest(conversations_path)},
                        {"index", file_digest(index_path)}};
  const std::string json_out = "reports/eval_" + tag + ".json";
  const std::string text_out = "reports/eval_" + tag + ".txt";
  const std::vector<std::string> outputs{json_out, text_out};
  if (stage_done("eval:" + tag, inputs, outputs)) {
    std::cout << read_file(artifact(text_out).string());
    return {true, "eval " + tag + " up to date"};
  }

  auto run = load_run(run_path);
  auto qrels = load_qrels(qrels_path);
  auto conversations = ingest_conversations(conversations_path);
  auto doc_of = PassageIndex::load(index_path).source_doc_map();
  auto classes = classify_all(conversations, doc_of);

  auto report = evaluate_run(run, qrels, classes, tag);
  write_file(artifact(json_out).string(), report.to_json().dump(2) + "\n");
  write_file(artifact(text_out).string(), report.table());
  std::cout << report.table();

  finish_stage("eval:" + tag, inputs, outputs);
  return {false, "evaluated run " + tag + " over " + std::to_string(report.overall.n) + " queries"};
}

StageResult Pipeline::judge(const std::string& criterion_name) {
  const JudgeCriterion criterion = judge_criterion_from_string(criterion_name);
  const std::string feedback_path = require_artifact(kFeedback, "feedback");
  const std::string conversations_path = require_artifact(kConversations, "ingest");
  nlohmann::json inputs{{"feedback", file_digest(feedback_path)},
                        {"conversations", file_digest(conversations_path)}};
  const std::string verdicts_out = "reports/judge_" + criterion_name + ".jsonl";
  const std::string summary_out = "reports/judge_" + criterion_name + "_summary.json";
  const std::vector<std::string> outputs{verdicts_out, summary_out};
  if (stage_done("judge:" + criterion_name, inputs, outputs)) {
    return {true, "judge " + criterion_name + " up to date"};
  }

  auto records = load_feedback(feedback_path);
  auto conversations = ingest_conversations(conversations_path);
  std::map<std::string, const Conversation*> by_id;
  for (const auto& conv : conversations) by_id[conv.conv_id] = &conv;

  // Best explored rewrite per turn (same rule as the rf_best run).
  std::map<std::pair<std::string, int>, const FeedbackRecord*> best;
  for (const auto& record : records) {
    if (starts_with(record.method, "baseline:")) continue;
    auto key = std::make_pair(record.conv_id, record.turn_id);
    auto it = best.find(key);
    if (it == best.end() || rank_key(record.rank) < rank_key(it->second->rank)) {
      best[key] = &record;
    }
  }

  auto client = make_client();
  const ExploreOptions options = explore_options();

  struct Task {
    std::string conv_id;
    int turn_id;
    int turn_index;
    std::string ours;
    std::string human;
  };
  std::vector<Task> tasks;
  for (const auto& [key, record] : best) {
    const Conversation* conv = by_id.at(key.first);
    for (std::size_t i = 0; i < conv->turns.size(); ++i) {
      const Turn& turn = conv->turns[i];
      if (turn.turn_id != key.second) continue;
      if (!turn.human_rewrite || trim(*turn.human_rewrite).empty()) break;
      tasks.push_back(Task{key.first, key.second, static_cast<int>(i + 1), record->rewrite,
                           *turn.human_rewrite});
      break;
    }
  }

  std::vector<Verdict> verdicts(tasks.size());
  parallel_for_ordered(tasks.size(), config_.client.max_in_flight, [&](std::size_t i) {
    const Conversation* conv = by_id.at(tasks[i].conv_id);
    const std::string context =
        build_context(*conv, tasks[i].turn_index, config_.max_history_turns);
    verdicts[i] =
        judge_pair(criterion, context, tasks[i].ours, tasks[i].human, *client, options);
  });

  JsonlWriter writer(artifact(verdicts_out).string());
  int ours_wins = 0, human_wins = 0, ties = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const char* verdict = verdicts[i] == Verdict::A   ? "ours"
                          : verdicts[i] == Verdict::B ? "human"
                                                      : "tie";
    (verdicts[i] == Verdict::A ? ours_wins : verdicts[i] == Verdict::B ? human_wins : ties)++;
    writer.add(nlohmann::json{{"conv_id", tasks[i].conv_id},
                              {"turn_id", tasks[i].turn_id},
                              {"criterion", criterion_name},
                              {"ours", tasks[i].ours},
                              {"human", tasks[i].human},
                              {"verdict", verdict}});
  }
  writer.commit();
  write_file(artifact(summary_out).string(),
             nlohmann::json{{"criterion", criterion_name},
                            {"n", tasks.size()},
                            {"ours_wins", ours_wins},
                            {"human_wins", human_wins},
                            {"ties", ties}}
                     .dump(2) +
                 "\n");

  finish_stage("judge:" + criterion_name, inputs, outputs);
  return {false, "judged " + std::to_string(tasks.size()) + " turns on " + criterion_name + ": " +
                     std::to_string(ours_wins) + " ours / " + std::to_string(human_wins) +
                     " human / " + std::to_string(ties) + " ties"};
}

void Pipeline::report(std::ostream& out) const {
  out << "work dir: " << work_.string() << "\n";
  out << "config hash: " << config_.config_hash() << "\n\n";
  if (manifest_.stages().empty()) {
    out << "no stages have run yet\n";
    return;
  }
  for (const auto& [stage, entry] : manifest_.stages().items()) {
    out << "stage " << stage << "\n";
    for (const auto& output : entry.value("outputs", nlohmann::json::array())) {
      const std::string rel = output.get<std::string>();
      const bool exists = fs::exists(work_ / rel);
      out << "  " << rel << (exists ? "" : "  [missing]") << "\n";
    }
  }
  const fs::path summary = work_ / kExportSummary;
  if (fs::exists(summary)) {
    out << "\nexport summary: " << trim(read_file(summary.string())) << "\n";
  }
  for (const char* report_path : {kTrainSftReport, kTrainDpoReport}) {
    const fs::path path = work_ / report_path;
    if (!fs::exists(path)) continue;
    const auto doc = nlohmann::json::parse(read_file(path.string()));
    out << doc.value("objective", std::string("?")) << ": steps " << doc.value("steps", 0)
        << ", final loss " << doc.value("final_loss", 0.0) << ", grad check max rel err "
        << doc.value("grad_check_max_rel_err", 0.0) << "\n";
  }
}

std::string error_json(const std::string& type, const std::string& message) {
  return nlohmann::json{{"error", {{"type", type}, {"message", message}}}}.dump();
}

}  // namespace convqr
