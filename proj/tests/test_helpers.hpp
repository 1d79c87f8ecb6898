// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "tinyllm/tokenizer.hpp"

namespace tinyllm::testing {

inline const Tokenizer& gpt2_tokenizer() {
  static const Tokenizer tok =
      Tokenizer::load(std::filesystem::path(TINYLLM_ASSET_DIR) / "vocab.json",
                      std::filesystem::path(TINYLLM_ASSET_DIR) / "merges.txt");
  return tok;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("tinyllm_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace tinyllm::testing
