#include "convqr/config.hpp"

#include "convqr/bm25.hpp"
#include "convqr/errors.hpp"
#include "convqr/util.hpp"

namespace convqr {

namespace {

// Extracts doc[outer][inner] (or doc[outer] with empty inner) into `out`
// if present, type-checked with the JSON path in the error.
template <typename T>
void read_field(const nlohmann::json& doc, const std::string& outer, const std::string& inner,
                T& out) {
  const nlohmann::json* node = &doc;
  std::string path = outer;
  if (!doc.contains(outer)) return;
  node = &doc.at(outer);
  if (!inner.empty()) {
    if (!node->is_object()) throw ConfigError(outer, "must be an object");
    if (!node->contains(inner)) return;
    node = &node->at(inner);
    path += "." + inner;
  }
  try {
    out = node->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path, "has the wrong type");
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("", "config must be a JSON object");
  PipelineConfig config;
  read_field(doc, "paths", "conversations", config.paths.conversations);
  read_field(doc, "paths", "passages", config.paths.passages);
  read_field(doc, "paths", "work_dir", config.paths.work_dir);
  read_field(doc, "retriever_profile", "", config.retriever_profile);
  read_field(doc, "dataset_format", "", config.dataset_format);
  read_field(doc, "exploration_profile", "", config.exploration_profile);
  read_field(doc, "thresholds", "optimal", config.thresholds.optimal);
  read_field(doc, "thresholds", "preferred", config.thresholds.preferred);
  read_field(doc, "counts", "question_rewriting", config.counts.question_rewriting);
  read_field(doc, "counts", "planning", config.counts.planning);
  read_field(doc, "counts", "query_expansion", config.counts.query_expansion);
  read_field(doc, "top_k", "", config.top_k);
  read_field(doc, "max_pairs", "", config.max_pairs);
  read_field(doc, "max_history_turns", "", config.max_history_turns);
  read_field(doc, "exclude_fallback", "", config.exclude_fallback);
  read_field(doc, "client", "base_url", config.client.base_url);
  read_field(doc, "client", "model", config.client.model);
  read_field(doc, "client", "temperature", config.client.temperature);
  read_field(doc, "client", "max_tokens", config.client.max_tokens);
  read_field(doc, "client", "max_in_flight", config.client.max_in_flight);
  read_field(doc, "client", "max_attempts", config.client.max_attempts);
  read_field(doc, "client", "mock", config.client.mock);
  read_field(doc, "train", "beta", config.train.beta);
  read_field(doc, "train", "sft_learning_rate", config.train.sft_learning_rate);
  read_field(doc, "train", "sft_steps", config.train.sft_steps);
  read_field(doc, "train", "dpo_learning_rate", config.train.dpo_learning_rate);
  read_field(doc, "train", "dpo_steps", config.train.dpo_steps);
  read_field(doc, "train", "context_buckets", config.train.context_buckets);
  read_field(doc, "train", "answer_prestage", config.train.answer_prestage);
  read_field(doc, "train", "prestage_steps", config.train.prestage_steps);
  read_field(doc, "seed", "", config.seed);
  config.validate();
  return config;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("", std::string("config file is not valid JSON: ") + ex.what());
  }
  return from_json(doc);
}

nlohmann::json PipelineConfig::to_json() const {
  return nlohmann::json{
      {"paths",
       {{"conversations", paths.conversations},
        {"passages", paths.passages},
        {"work_dir", paths.work_dir}}},
      {"retriever_profile", retriever_profile},
      {"dataset_format", dataset_format},
      {"exploration_profile", exploration_profile},
      {"thresholds", {{"optimal", thresholds.optimal}, {"preferred", thresholds.preferred}}},
      {"counts",
       {{"question_rewriting", counts.question_rewriting},
        {"planning", counts.planning},
        {"query_expansion", counts.query_expansion}}},
      {"top_k", top_k},
      {"max_pairs", max_pairs},
      {"max_history_turns", max_history_turns},
      {"exclude_fallback", exclude_fallback},
      {"client",
       {{"base_url", client.base_url},
        {"model", client.model},
        {"temperature", client.temperature},
        {"max_tokens", client.max_tokens},
        {"max_in_flight", client.max_in_flight},
        {"max_attempts", client.max_attempts},
        {"mock", client.mock}}},
      {"train",
       {{"beta", train.beta},
        {"sft_learning_rate", train.sft_learning_rate},
        {"sft_steps", train.sft_steps},
        {"dpo_learning_rate", train.dpo_learning_rate},
        {"dpo_steps", train.dpo_steps},
        {"context_buckets", train.context_buckets},
        {"answer_prestage", train.answer_prestage},
        {"prestage_steps", train.prestage_steps}}},
      {"seed", seed}};
}

std::string PipelineConfig::canonical_without_paths() const {
  nlohmann::json doc = to_json();
  doc.erase("paths");
  return doc.dump();
}

std::string PipelineConfig::config_hash() const {
  return "fnv1a64:" + to_hex(fnv1a64(canonical_without_paths()));
}

void PipelineConfig::validate() const {
  if (thresholds.optimal < 1) throw ConfigError("thresholds.optimal", "must be >= 1");
  if (thresholds.preferred < 1) throw ConfigError("thresholds.preferred", "must be >= 1");
  if (top_k < 1) throw ConfigError("top_k", "must be >= 1");
  if (max_pairs < 0) throw ConfigError("max_pairs", "must be >= 0 (0 keeps all pairs)");
  if (max_history_turns < 0) throw ConfigError("max_history_turns", "must be >= 0");
  if (counts.question_rewriting < 1) throw ConfigError("counts.question_rewriting", "must be >= 1");
  if (counts.planning < 1) throw ConfigError("counts.planning", "must be >= 1");
  if (counts.query_expansion < 1) throw ConfigError("counts.query_expansion", "must be >= 1");
  if (client.temperature < 0.0) throw ConfigError("client.temperature", "must be >= 0");
  if (client.max_tokens < 1) throw ConfigError("client.max_tokens", "must be >= 1");
  if (client.max_in_flight < 1) throw ConfigError("client.max_in_flight", "must be >= 1");
  if (client.max_attempts < 1) throw ConfigError("client.max_attempts", "must be >= 1");
  if (train.beta <= 0.0) throw ConfigError("train.beta", "must be > 0");
  if (train.sft_learning_rate <= 0.0) throw ConfigError("train.sft_learning_rate", "must be > 0");
  if (train.dpo_learning_rate <= 0.0) throw ConfigError("train.dpo_learning_rate", "must be > 0");
  if (train.sft_steps < 0) throw ConfigError("train.sft_steps", "must be >= 0");
  if (train.dpo_steps < 0) throw ConfigError("train.dpo_steps", "must be >= 0");
  if (train.prestage_steps < 0) throw ConfigError("train.prestage_steps", "must be >= 0");
  if (train.context_buckets < 1) throw ConfigError("train.context_buckets", "must be >= 1");
  if (exploration_profile != "all-turns" && exploration_profile != "topiocqa-budget") {
    throw ConfigError("exploration_profile", "must be \"all-turns\" or \"topiocqa-budget\"");
  }
  if (dataset_format != "jsonl") throw ConfigError("dataset_format", "only \"jsonl\" is supported");
  (void)convqr::retriever_profile(retriever_profile);  // throws on unknown names
}

}  // namespace convqr
