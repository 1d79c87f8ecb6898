// SPDX-License-Identifier: Apache-2.0
//
// Sectioned key-value pipeline config with per-section key validation and
// command-line overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tinyllm::cli {

class PipelineConfig {
 public:
  // Empty path: no file, relative paths resolve against the working directory.
  static PipelineConfig load(const std::filesystem::path& file);
  static PipelineConfig parse(std::istream& in, const std::filesystem::path& base_dir);

  // "section.key=value", or "key=value" for a global key. Validated at once.
  void set(std::string_view assignment);
  void set(const std::string& section, const std::string& key, const std::string& value);

  // Throws naming the first unknown section or key.
  void validate_keys() const;

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  std::string require(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  // Comma-separated, items trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;
  std::vector<double> get_doubles(const std::string& section, const std::string& key) const;
  std::vector<int> get_ints(const std::string& section, const std::string& key) const;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::optional<std::filesystem::path> get_path(const std::string& section, const std::string& key) const;
  std::filesystem::path require_path(const std::string& section, const std::string& key) const;
  std::vector<std::filesystem::path> get_paths(const std::string& section, const std::string& key) const;

  std::filesystem::path root() const;
  std::uint64_t seed() const;

  // Canonical "key=value" lines of a section plus the global seed.
  std::string section_text(const std::string& section) const;

  static const std::map<std::string, std::vector<std::string>>& schema();

 private:
  std::filesystem::path base_dir_;
  std::map<std::string, std::map<std::string, std::string>> values_;  // "" holds global keys
};

// "\n" and "\t" escapes in single-line config values.
std::string unescape(std::string_view s);

}  // namespace tinyllm::cli
