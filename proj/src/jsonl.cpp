#include "convqr/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "convqr/errors.hpp"
#include "convqr/util.hpp"

namespace convqr {

void for_each_jsonl(const std::string& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      std::ostringstream msg;
      msg << path << ":" << line_no << ": malformed JSON line: " << ex.what();
      throw DataError(msg.str());
    }
    fn(line_no, record);
  }
}

void JsonlWriter::commit() const { write_file(path_, buffer_); }

}  // namespace convqr
