// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/manifest.hpp"

#include <fstream>
#include <sstream>

#include "tsse/audio.hpp"
#include "tsse/error.hpp"

namespace tsse {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  TSSE_CHECK(in.good(), ErrorKind::kIo, "cannot open manifest " + file.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    const std::string where = file.string() + ":" + std::to_string(lineno);
    TSSE_CHECK(fields.size() == 3, ErrorKind::kIo, where + ": expected id, path and fs separated by tabs");
    ManifestEntry e;
    e.id = fields[0];
    e.path = fields[1];
    if (e.path.is_relative()) e.path = file.parent_path() / e.path;
    try {
      std::size_t used = 0;
      e.fs = std::stoi(fields[2], &used);
      TSSE_CHECK(used == fields[2].size(), ErrorKind::kIo, where + ": bad sample rate");
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kIo, where + ": bad sample rate '" + fields[2] + "'");
    }
    TSSE_CHECK(is_supported_rate(e.fs), ErrorKind::kUnsupportedRate,
               where + ": unsupported sample rate " + fields[2]);
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  TSSE_CHECK(out.good(), ErrorKind::kIo, "cannot write manifest " + file.string());
  for (const auto& e : entries) out << e.id << '\t' << e.path.string() << '\t' << e.fs << '\n';
}

}  // namespace tsse
