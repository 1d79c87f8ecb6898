// SPDX-License-Identifier: Apache-2.0
//
// Byte-level BPE tokenizer compatible with the GPT-2 vocabulary.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tinyllm {

using TokenId = std::int32_t;

inline constexpr int kGpt2VocabSize = 50257;
inline constexpr TokenId kEndOfText = 50256;
inline constexpr std::string_view kEndOfTextMarker = "<|endoftext|>";

class Tokenizer {
 public:
  // Reads a JSON vocab map (token string -> id) and a merges list (one
  // space-separated pair per line, rank = line order). Throws tinyllm::Error on
  // missing or malformed assets and when the vocabulary is not the 50,257-entry
  // GPT-2 table.
  static Tokenizer load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path);

  // Looks for assets/vocab.json and assets/merges.txt under `root`.
  static Tokenizer load_from_dir(const std::filesystem::path& root);

  // Any byte string is encodable. The end-of-text id is only produced for a
  // literal "<|endoftext|>" in the input.
  std::vector<TokenId> encode(std::string_view text) const;

  // Concatenates the bytes of each token; throws on ids outside [0, V).
  std::string decode(std::span<const TokenId> ids) const;

  const std::string& token_bytes(TokenId id) const;

  int vocab_size() const { return static_cast<int>(id_to_bytes_.size()); }
  TokenId eot_id() const { return kEndOfText; }

 private:
  Tokenizer() = default;

  void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;
  void encode_word(std::string_view word, std::vector<TokenId>& out) const;

  struct Merge {
    std::int32_t rank;
    TokenId merged;
  };

  std::vector<std::string> id_to_bytes_;
  std::unordered_map<std::string, TokenId> bytes_to_id_;
  std::unordered_map<std::uint64_t, Merge> merges_;
  TokenId byte_ids_[256] = {};
};

}  // namespace tinyllm
