#pragma once

#include <functional>
#include <string>

#include <json.hpp>

namespace convqr {

// Calls fn(line_number, parsed_json) for every non-blank line.
// Line numbers are 1-based. Malformed JSON raises DataError naming the
// file and line.
void for_each_jsonl(const std::string& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn);

// Serializes one record per line with nlohmann's canonical (key-sorted,
// compact) dump. All pipeline artifacts go through this so byte-identical
// reruns fall out of deterministic record order.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::string path) : path_(std::move(path)) {}

  void add(const nlohmann::json& record) {
    buffer_ += record.dump();
    buffer_ += '\n';
    ++count_;
  }

  // Writes the whole buffer at once; never leaves a partial file behind
  // a successful return.
  void commit() const;

  std::size_t count() const { return count_; }

 private:
  std::string path_;
  std::string buffer_;
  std::size_t count_ = 0;
};

}  // namespace convqr
