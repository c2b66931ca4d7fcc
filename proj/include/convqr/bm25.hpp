#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace convqr {

struct Passage {
  std::string passage_id;
  std::string text;
  std::string source_doc;
};

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

// Named retriever profile -> BM25 parameters. Throws on unknown profile.
Bm25Params retriever_profile(const std::string& name);

// Token caps applied before indexing/scoring.
inline constexpr int kQueryTokenCap = 128;
inline constexpr int kPassageTokenCap = 384;

// Lowercases and splits on any non-alphanumeric byte; empty tokens dropped.
// No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

struct RankedEntry {
  std::string passage_id;
  double score = 0.0;
};

// Descending by score, score ties broken by passage_id ascending.
struct RankedResult {
  std::vector<RankedEntry> entries;
};

// Immutable after construction; concurrent retrievals over one index are
// safe.
class PassageIndex {
 public:
  PassageIndex(std::vector<Passage> passages, Bm25Params params);

  int doc_count() const { return static_cast<int>(doc_lengths_.size()); }
  double avg_doc_length() const { return avg_doc_length_; }
  const Bm25Params& params() const { return params_; }
  const std::string& passage_id(int ordinal) const { return passage_ids_.at(static_cast<std::size_t>(ordinal)); }
  int doc_length(int ordinal) const { return doc_lengths_.at(static_cast<std::size_t>(ordinal)); }

  // passage id -> source document id (for turn-type classification).
  std::map<std::string, std::string> source_doc_map() const;

  // Okapi BM25 with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
  // Duplicate query tokens contribute once per occurrence.
  double score(const std::vector<std::string>& query_tokens, int ordinal) const;

  // Tokenizes (capped at kQueryTokenCap tokens), scores all matching
  // documents and returns up to k positive-scoring passages.
  RankedResult retrieve_top_k(const std::string& query, int k) const;

  void save(const std::string& path) const;
  static PassageIndex load(const std::string& path);

 private:
  PassageIndex() = default;

  struct Posting {
    std::int32_t ordinal;
    std::int32_t term_frequency;
  };

  double idf(std::size_t doc_frequency) const;

  std::vector<std::string> passage_ids_;
  std::vector<std::string> source_docs_;
  std::vector<std::int32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
  Bm25Params params_;
  // term -> postings sorted by ordinal
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

PassageIndex build_index(std::vector<Passage> passages, Bm25Params params);

std::vector<Passage> load_passages(const std::string& path);

// Smallest 1-based position in `result` whose passage id is gold;
// nullopt when no gold passage was retrieved.
std::optional<int> gold_rank(const RankedResult& result,
                             const std::vector<std::string>& gold_ids);

}  // namespace convqr
