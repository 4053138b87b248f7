#pragma once

// Run manifest embedded in every JSON output: enough to rerun a command and
// get the same bytes back.

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gmed {

/// Hex SHA-256 of a file. For a directory, the digest of the sorted
/// "<name> <file digest>\n" lines of its regular files.
std::string sha256_path(const std::filesystem::path& path);

struct InputDigest {
  std::string role;  // "subjects", "mediators", "fit"
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::string tool_version;
  std::vector<InputDigest> inputs;
  std::optional<double> runtime_seconds;  // omitted with --no-timing

  void add_input(const std::string& role, const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
};

const char* tool_version() noexcept;

}  // namespace gmed
