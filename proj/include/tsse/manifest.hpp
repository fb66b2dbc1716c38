// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace tsse {

/// One line of a corpus manifest: `id<TAB>path<TAB>fs`. Blank lines and
/// lines starting with '#' are skipped. Relative paths resolve against the
/// manifest's directory.
struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  int fs = 0;

  bool operator==(const ManifestEntry&) const = default;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file, const std::vector<ManifestEntry>& entries);

}  // namespace tsse
