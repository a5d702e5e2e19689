#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace kat::io {

// Float formatting for CSV output: 17 significant digits, enough to
// round-trip any double exactly.
std::string g17(double v);

struct SequenceRecord {
  std::vector<int> tokens;
  int label = 0;
};

// JSONL, one {"tokens": [...], "label": n} object per line.
std::vector<SequenceRecord> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<SequenceRecord>& records);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace kat::io
