#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "convqr/chat_client.hpp"
#include "convqr/config.hpp"
#include "convqr/explore.hpp"

namespace convqr {

// Content-addressed record of what each stage ran with. Re-running a
// stage whose config hash and input digests are unchanged (and whose
// outputs still exist) is a no-op unless forced.
class Manifest {
 public:
  static Manifest load_or_empty(const std::filesystem::path& path);

  bool up_to_date(const std::string& stage, const std::string& config_hash,
                  const nlohmann::json& inputs,
                  const std::vector<std::string>& outputs,
                  const std::filesystem::path& work_dir) const;

  void record(const std::string& stage, const std::string& config_hash,
              const nlohmann::json& inputs, const std::vector<std::string>& outputs);

  void save(const std::filesystem::path& path) const;
  const nlohmann::json& stages() const { return stages_; }

 private:
  nlohmann::json stages_ = nlohmann::json::object();
};

struct StageResult {
  bool skipped = false;  // manifest said up-to-date
  std::string message;
};

// Orchestrates the pipeline stages over a work directory. Every stage
// reads prior artifacts by well-known relative paths and appends to the
// manifest; missing prerequisites raise StageOrderError naming the stage
// to run first.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, bool force = false);

  StageResult ingest();
  StageResult index();
  StageResult explore();
  StageResult feedback();
  StageResult build_rf();
  StageResult export_files();
  StageResult train_toy();
  // run_tag: "baseline_original", "baseline_human", "rf_best", or a path
  // to an external run file.
  StageResult eval(const std::string& run_tag);
  StageResult judge(const std::string& criterion);
  // Human-readable stage/report overview, written to `out`.
  void report(std::ostream& out) const;

  const PipelineConfig& config() const { return config_; }
  std::filesystem::path artifact(const std::string& relative) const;

  // Relative artifact paths (under the work dir).
  static constexpr const char* kConversations = "artifacts/conversations.jsonl";
  static constexpr const char* kQrels = "artifacts/qrels.txt";
  static constexpr const char* kIndex = "artifacts/index.bin";
  static constexpr const char* kCandidates = "artifacts/candidates.jsonl";
  static constexpr const char* kFeedback = "artifacts/feedback.jsonl";
  static constexpr const char* kRunOriginal = "artifacts/runs/baseline_original.run";
  static constexpr const char* kRunHuman = "artifacts/runs/baseline_human.run";
  static constexpr const char* kRunRfBest = "artifacts/runs/rf_best.run";
  static constexpr const char* kOptimalSets = "artifacts/optimal_sets.jsonl";
  static constexpr const char* kPairs = "artifacts/pairs.jsonl";
  static constexpr const char* kSft = "artifacts/sft.jsonl";
  static constexpr const char* kDpo = "artifacts/dpo.jsonl";
  static constexpr const char* kExportSummary = "artifacts/export_summary.json";
  static constexpr const char* kTrainSftReport = "reports/train_sft.json";
  static constexpr const char* kTrainDpoReport = "reports/train_dpo.json";

 private:
  std::unique_ptr<ChatClient> make_client() const;
  ExploreOptions explore_options() const;
  std::string require_artifact(const std::string& relative, const std::string& producer) const;
  bool stage_done(const std::string& stage, const nlohmann::json& inputs,
                  const std::vector<std::string>& outputs);
  void finish_stage(const std::string& stage, const nlohmann::json& inputs,
                    const std::vector<std::string>& outputs);

  PipelineConfig config_;
  bool force_;
  std::filesystem::path work_;
  Manifest manifest_;
};

// Renders one machine-readable error line for stderr.
std::string error_json(const std::string& type, const std::string& message);

}  // namespace convqr
