#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "convqr/errors.hpp"
#include "convqr/pipeline.hpp"

namespace {

struct CliOverrides {
  std::string config_path;
  std::string conversations;
  std::string passages;
  std::string work_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> retriever_profile;
  std::optional<int> top_k;
  std::optional<int> threshold_optimal;
  std::optional<int> threshold_preferred;
  std::optional<int> max_pairs;
  bool mock_llm = false;
  bool exclude_fallback = false;
  bool force = false;
};

convqr::PipelineConfig effective_config(const CliOverrides& cli) {
  convqr::PipelineConfig config;
  if (!cli.config_path.empty()) config = convqr::PipelineConfig::load(cli.config_path);
  if (!cli.conversations.empty()) config.paths.conversations = cli.conversations;
  if (!cli.passages.empty()) config.paths.passages = cli.passages;
  if (!cli.work_dir.empty()) config.paths.work_dir = cli.work_dir;
  if (cli.seed) config.seed = *cli.seed;
  if (cli.retriever_profile) config.retriever_profile = *cli.retriever_profile;
  if (cli.top_k) config.top_k = *cli.top_k;
  if (cli.threshold_optimal) config.thresholds.optimal = *cli.threshold_optimal;
  if (cli.threshold_preferred) config.thresholds.preferred = *cli.threshold_preferred;
  if (cli.max_pairs) config.max_pairs = *cli.max_pairs;
  if (cli.mock_llm) config.client.mock = true;
  if (cli.exclude_fallback) config.exclude_fallback = true;
  config.validate();
  return config;
}

int fail(const std::string& type, const std::string& message) {
  std::cerr << convqr::error_json(type, message) << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conversational query rewriting pipeline: explore rewrites, collect retriever "
               "feedback, build preference datasets, evaluate runs, and train the toy aligner"};
  app.require_subcommand(1);

  CliOverrides cli;
  app.add_option("--config", cli.config_path, "pipeline config JSON");
  app.add_option("--conversations", cli.conversations, "conversations JSONL path");
  app.add_option("--passages", cli.passages, "passages JSONL path");
  app.add_option("--work-dir", cli.work_dir, "artifact directory");
  app.add_option("--seed", cli.seed, "master seed for all randomized steps");
  app.add_option("--retriever-profile", cli.retriever_profile,
                 "qrecc-bm25 or topiocqa-bm25");
  app.add_option("--top-k", cli.top_k, "retrieval depth");
  app.add_option("--threshold-optimal", cli.threshold_optimal, "optimal-query rank threshold");
  app.add_option("--threshold-preferred", cli.threshold_preferred,
                 "preferred-side rank threshold for pairs");
  app.add_option("--max-pairs", cli.max_pairs, "sampled pairs per turn (0 keeps all)");
  app.add_flag("--mock-llm", cli.mock_llm, "use the deterministic offline chat client");
  app.add_flag("--exclude-fallback", cli.exclude_fallback,
               "drop fallback optimal queries from the SFT export");
  app.add_flag("--force", cli.force, "re-run stages even when the manifest says up-to-date");

  auto* ingest = app.add_subcommand("ingest", "validate conversations and write qrels");
  auto* index = app.add_subcommand("index", "build the BM25 passage index");
  auto* explore = app.add_subcommand("explore", "generate rewrite candidates");
  auto* feedback = app.add_subcommand("feedback", "rank candidates against the frozen retriever");
  auto* build_rf = app.add_subcommand("build-rf", "assemble optimal queries and preference pairs");
  auto* export_cmd = app.add_subcommand("export", "write SFT/DPO training files");
  auto* train = app.add_subcommand("train-toy", "train the toy LM with SFT then DPO");
  auto* eval = app.add_subcommand("eval", "score a retrieval run");
  auto* judge = app.add_subcommand("judge", "pairwise-judge best rewrites against human rewrites");
  auto* report = app.add_subcommand("report", "summarize pipeline state");

  std::string run_tag = "baseline_original";
  eval->add_option("--run", run_tag,
                   "run tag (baseline_original, baseline_human, rf_best) or a run-file path");
  std::string criterion = "clarity";
  judge->add_option("--criterion", criterion, "clarity, conciseness, or informativeness");
  bool answer_prestage = false;
  train->add_flag("--answer-prestage", answer_prestage,
                  "first fit (context -> answer) replication before the optimal-query stage");

  CLI11_PARSE(app, argc, argv);

  try {
    convqr::PipelineConfig config = effective_config(cli);
    if (answer_prestage) config.train.answer_prestage = true;
    convqr::Pipeline pipeline(std::move(config), cli.force);

    convqr::StageResult result;
    if (ingest->parsed()) {
      result = pipeline.ingest();
    } else if (index->parsed()) {
      result = pipeline.index();
    } else if (explore->parsed()) {
      result = pipeline.explore();
    } else if (feedback->parsed()) {
      result = pipeline.feedback();
    } else if (build_rf->parsed()) {
      result = pipeline.build_rf();
    } else if (export_cmd->parsed()) {
      result = pipeline.export_files();
    } else if (train->parsed()) {
      result = pipeline.train_toy();
    } else if (eval->parsed()) {
      result = pipeline.eval(run_tag);
    } else if (judge->parsed()) {
      result = pipeline.judge(criterion);
    } else if (report->parsed()) {
      pipeline.report(std::cout);
      return 0;
    }
    std::cout << (result.skipped ? "[skip] " : "[done] ") << result.message << "\n";
    return 0;
  } catch (const convqr::ConfigError& err) {
    return fail("config", err.what());
  } catch (const convqr::StageOrderError& err) {
    return fail("stage_order", err.what());
  } catch (const convqr::TransportError& err) {
    return fail("transport", err.what());
  } catch (const convqr::Error& err) {
    return fail("pipeline", err.what());
  } catch (const std::exception& err) {
    return fail("internal", err.what());
  }
}
