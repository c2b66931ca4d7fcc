#include "convqr/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "convqr/errors.hpp"
#include "convqr/jsonl.hpp"
#include "convqr/util.hpp"

namespace convqr {

Bm25Params retriever_profile(const std::string& name) {
  if (name == "qrecc-bm25") return Bm25Params{0.82, 0.68};
  if (name == "topiocqa-bm25") return Bm25Params{0.9, 0.4};
  throw ConfigError("retriever_profile",
                    "unknown profile \"" + name + "\" (supported: qrecc-bm25, topiocqa-bm25)");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    bool alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
    if (alnum) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

PassageIndex::PassageIndex(std::vector<Passage> passages, Bm25Params params) {
  if (passages.empty()) throw DataError("cannot build an index over an empty corpus");
  if (params.k1 < 0.0) throw DataError("bm25 k1 must be >= 0");
  if (params.b < 0.0 || params.b > 1.0) throw DataError("bm25 b must be in [0, 1]");
  params_ = params;

  std::set<std::string> seen;
  passage_ids_.reserve(passages.size());
  source_docs_.reserve(passages.size());
  doc_lengths_.reserve(passages.size());

  double total_length = 0.0;
  for (std::size_t ordinal = 0; ordinal < passages.size(); ++ordinal) {
    const Passage& p = passages[ordinal];
    if (p.passage_id.empty()) throw DataError("passage with empty passage_id");
    if (!seen.insert(p.passage_id).second) {
      throw DataError("duplicate passage_id \"" + p.passage_id + "\"");
    }
    if (trim(p.text).empty()) throw DataError("passage \"" + p.passage_id + "\" has empty text");
    auto tokens = tokenize(p.text);
    if (tokens.size() > static_cast<std::size_t>(kPassageTokenCap)) {
      tokens.resize(static_cast<std::size_t>(kPassageTokenCap));
    }
    std::map<std::string, std::int32_t> counts;
    for (const auto& t : tokens) ++counts[t];
    for (const auto& [term, tf] : counts) {
      postings_[term].push_back(Posting{static_cast<std::int32_t>(ordinal), tf});
    }
    passage_ids_.push_back(p.passage_id);
    source_docs_.push_back(p.source_doc);
    doc_lengths_.push_back(static_cast<std::int32_t>(tokens.size()));
    total_length += static_cast<double>(tokens.size());
  }
  avg_doc_length_ = total_length / static_cast<double>(passages.size());
  // Postings are already ordinal-sorted because passages were scanned in
  // order; keep the invariant explicit for loaded indexes too.
}

PassageIndex build_index(std::vector<Passage> passages, Bm25Params params) {
  return PassageIndex(std::move(passages), params);
}

std::map<std::string, std::string> PassageIndex::source_doc_map() const {
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < passage_ids_.size(); ++i) {
    out[passage_ids_[i]] = source_docs_[i];
  }
  return out;
}

double PassageIndex::idf(std::size_t doc_frequency) const {
  const double n = static_cast<double>(doc_count());
  const double df = static_cast<double>(doc_frequency);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double PassageIndex::score(const std::vector<std::string>& query_tokens, int ordinal) const {
  if (ordinal < 0 || ordinal >= doc_count()) {
    throw DataError("document ordinal out of range in bm25 score");
  }
  const double len = static_cast<double>(doc_lengths_[static_cast<std::size_t>(ordinal)]);
  const double norm = 1.0 - params_.b + params_.b * len / avg_doc_length_;
  double total = 0.0;
  for (const auto& term : query_tokens) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& plist = it->second;
    auto pos = std::lower_bound(plist.begin(), plist.end(), ordinal,
                                [](const Posting& p, int o) { return p.ordinal < o; });
    if (pos == plist.end() || pos->ordinal != ordinal) continue;
    const double tf = static_cast<double>(pos->term_frequency);
    total += idf(plist.size()) * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
  }
  return total;
}

RankedResult PassageIndex::retrieve_top_k(const std::string& query, int k) const {
  if (k < 1) throw DataError("retrieve_top_k requires k >= 1");
  auto tokens = tokenize(query);
  if (tokens.size() > static_cast<std::size_t>(kQueryTokenCap)) {
    tokens.resize(static_cast<std::size_t>(kQueryTokenCap));
  }

  // Term-at-a-time accumulation; the per-document summation order equals
  // the query token order, matching the score() path bit for bit.
  std::vector<double> scores(static_cast<std::size_t>(doc_count()), 0.0);
  std::vector<bool> touched(static_cast<std::size_t>(doc_count()), false);
  for (const auto& term : tokens) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& plist = it->second;
    const double term_idf = idf(plist.size());
    for (const Posting& p : plist) {
      const double len = static_cast<double>(doc_lengths_[static_cast<std::size_t>(p.ordinal)]);
      const double norm = 1.0 - params_.b + params_.b * len / avg_doc_length_;
      const double tf = static_cast<double>(p.term_frequency);
      scores[static_cast<std::size_t>(p.ordinal)] +=
          term_idf * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
      touched[static_cast<std::size_t>(p.ordinal)] = true;
    }
  }

  std::vector<int> candidates;
  for (int d = 0; d < doc_count(); ++d) {
    if (touched[static_cast<std::size_t>(d)] && scores[static_cast<std::size_t>(d)] > 0.0) {
      candidates.push_back(d);
    }
  }
  std::sort(candidates.begin(), candidates.end(), [&](int lhs, int rhs) {
    const double ls = scores[static_cast<std::size_t>(lhs)];
    const double rs = scores[static_cast<std::size_t>(rhs)];
    if (ls != rs) return ls > rs;
    return passage_ids_[static_cast<std::size_t>(lhs)] < passage_ids_[static_cast<std::size_t>(rhs)];
  });
  if (candidates.size() > static_cast<std::size_t>(k)) {
    candidates.resize(static_cast<std::size_t>(k));
  }

  RankedResult result;
  result.entries.reserve(candidates.size());
  for (int d : candidates) {
    result.entries.push_back(
        RankedEntry{passage_ids_[static_cast<std::size_t>(d)], scores[static_cast<std::size_t>(d)]});
  }
  return result;
}

namespace {

constexpr char kIndexMagic[4] = {'C', 'Q', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string str() {
    std::uint32_t len = u32();
    need(len);
    std::string s = data_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  unsigned char byte() { return static_cast<unsigned char>(data_[pos_++]); }

  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw DataError("truncated index file: " + path_);
  }

  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void PassageIndex::save(const std::string& path) const {
  std::string out;
  out.append(kIndexMagic, sizeof(kIndexMagic));
  put_u32(out, kIndexVersion);
  put_f64(out, params_.k1);
  put_f64(out, params_.b);
  put_f64(out, avg_doc_length_);
  put_u32(out, static_cast<std::uint32_t>(passage_ids_.size()));
  for (std::size_t i = 0; i < passage_ids_.size(); ++i) {
    put_str(out, passage_ids_[i]);
    put_str(out, source_docs_[i]);
    put_u32(out, static_cast<std::uint32_t>(doc_lengths_[i]));
  }
  // Terms in sorted order so the file bytes are deterministic.
  std::vector<const std::string*> terms;
  terms.reserve(postings_.size());
  for (const auto& [term, _] : postings_) terms.push_back(&term);
  std::sort(terms.begin(), terms.end(),
            [](const std::string* a, const std::string* b) { return *a < *b; });
  put_u32(out, static_cast<std::uint32_t>(terms.size()));
  for (const std::string* term : terms) {
    const auto& plist = postings_.at(*term);
    put_str(out, *term);
    put_u32(out, static_cast<std::uint32_t>(plist.size()));
    for (const Posting& p : plist) {
      put_u32(out, static_cast<std::uint32_t>(p.ordinal));
      put_u32(out, static_cast<std::uint32_t>(p.term_frequency));
    }
  }
  write_file(path, out);
}

PassageIndex PassageIndex::load(const std::string& path) {
  const std::string data = read_file(path);
  if (data.size() < 8 || std::memcmp(data.data(), kIndexMagic, sizeof(kIndexMagic)) != 0) {
    throw DataError("not an index file: " + path);
  }
  Reader reader(data, path);
  reader.u32();  // magic, already checked
  const std::uint32_t version = reader.u32();
  if (version != kIndexVersion) {
    throw DataError("unsupported index version " + std::to_string(version) + " in " + path);
  }
  PassageIndex index;
  index.params_.k1 = reader.f64();
  index.params_.b = reader.f64();
  index.avg_doc_length_ = reader.f64();
  const std::uint32_t docs = reader.u32();
  index.passage_ids_.reserve(docs);
  index.source_docs_.reserve(docs);
  index.doc_lengths_.reserve(docs);
  for (std::uint32_t i = 0; i < docs; ++i) {
    index.passage_ids_.push_back(reader.str());
    index.source_docs_.push_back(reader.str());
    index.doc_lengths_.push_back(static_cast<std::int32_t>(reader.u32()));
  }
  const std::uint32_t terms = reader.u32();
  for (std::uint32_t i = 0; i < terms; ++i) {
    std::string term = reader.str();
    const std::uint32_t n = reader.u32();
    std::vector<Posting> plist;
    plist.reserve(n);
    for (std::uint32_t j = 0; j < n; ++j) {
      Posting p;
      p.ordinal = static_cast<std::int32_t>(reader.u32());
      p.term_frequency = static_cast<std::int32_t>(reader.u32());
      if (p.ordinal < 0 || p.ordinal >= static_cast<std::int32_t>(docs)) {
        throw DataError("posting ordinal out of range in " + path);
      }
      plist.push_back(p);
    }
    index.postings_.emplace(std::move(term), std::move(plist));
  }
  if (!reader.done()) throw DataError("trailing bytes in index file: " + path);
  return index;
}

std::vector<Passage> load_passages(const std::string& path) {
  std::vector<Passage> passages;
  for_each_jsonl(path, [&](std::size_t line_no, const nlohmann::json& record) {
    std::string where = path + ":" + std::to_string(line_no);
    if (!record.contains("passage_id") || !record["passage_id"].is_string() ||
        !record.contains("text") || !record["text"].is_string()) {
      throw DataError(where + ": passage record needs string \"passage_id\" and \"text\"");
    }
    Passage p;
    p.passage_id = record["passage_id"].get<std::string>();
    p.text = record["text"].get<std::string>();
    p.source_doc = record.value("source_doc", std::string());
    passages.push_back(std::move(p));
  });
  return passages;
}

std::optional<int> gold_rank(const RankedResult& result,
                             const std::vector<std::string>& gold_ids) {
  if (gold_ids.empty()) throw DataError("gold_rank called with empty gold_ids");
  for (std::size_t i = 0; i < result.entries.size(); ++i) {
    for (const auto& gold : gold_ids) {
      if (result.entries[i].passage_id == gold) return static_cast<int>(i + 1);
    }
  }
  return std::nullopt;
}

}  // namespace convqr
