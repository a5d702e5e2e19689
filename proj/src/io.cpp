#include "kat/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace kat::io {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<SequenceRecord> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<SequenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    SequenceRecord rec;
    rec.tokens = j.at("tokens").get<std::vector<int>>();
    rec.label = j.at("label").get<int>();
    if (rec.tokens.empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": empty token list");
    }
    for (int t : rec.tokens) {
      if (t < 0) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                 ": negative token id");
      }
    }
    if (rec.label < 0) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": negative label");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<SequenceRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const SequenceRecord& rec : records) {
    nlohmann::json j;
    j["tokens"] = rec.tokens;
    j["label"] = rec.label;
    out << j.dump() << "\n";
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << contents;
}

}  // namespace kat::io
