#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace convqr {

// One JSON document drives the whole pipeline; CLI flags override fields
// one-for-one. The canonical serialization (paths stripped) is hashed
// into the artifact manifest.
struct PipelineConfig {
  struct Paths {
    std::string conversations;
    std::string passages;
    std::string work_dir = "work";
  } paths;

  std::string retriever_profile = "topiocqa-bm25";
  std::string dataset_format = "jsonl";
  // "all-turns" runs planning everywhere; "topiocqa-budget" only where
  // question rewriting yielded fewer than 3 optimal queries.
  std::string exploration_profile = "all-turns";

  struct Thresholds {
    int optimal = 30;
    int preferred = 50;
  } thresholds;

  struct Counts {
    int question_rewriting = 10;
    int planning = 10;
    int query_expansion = 5;
  } counts;

  int top_k = 100;
  int max_pairs = 6;
  int max_history_turns = 0;  // 0 = unlimited
  bool exclude_fallback = false;

  struct Client {
    std::string base_url;  // falls back to LLM_API_BASE
    std::string model = "gpt-4-1106-preview";
    double temperature = 0.7;
    int max_tokens = 1000;
    int max_in_flight = 4;
    int max_attempts = 3;
    bool mock = false;
  } client;

  struct Train {
    double beta = 0.1;
    double sft_learning_rate = 0.01;
    int sft_steps = 150;
    double dpo_learning_rate = 1.0;
    int dpo_steps = 300;
    int context_buckets = 64;
    bool answer_prestage = false;
    int prestage_steps = 40;
  } train;

  std::uint64_t seed = 0;

  static PipelineConfig from_json(const nlohmann::json& doc);
  static PipelineConfig load(const std::string& path);

  nlohmann::json to_json() const;
  // Canonical form with filesystem paths removed; hashing this keeps the
  // manifest identical across machines with different checkouts.
  std::string canonical_without_paths() const;
  std::string config_hash() const;

  // Throws ConfigError naming the offending field path.
  void validate() const;
};

}  // namespace convqr
