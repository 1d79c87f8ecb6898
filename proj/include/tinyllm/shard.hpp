// SPDX-License-Identifier: Apache-2.0
//
// Token shard files: "TLLMSHRD", u32 version, u32 reserved, u64 token_count,
// then token_count little-endian u16 ids. A corpus is an ordered list of
// shards in one directory; documents end with the end-of-text id and may
// straddle shard boundaries.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tinyllm/tokenizer.hpp"

namespace tinyllm {

inline constexpr char kShardMagic[8] = {'T', 'L', 'L', 'M', 'S', 'H', 'R', 'D'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::size_t kShardHeaderBytes = 24;
inline constexpr std::uint64_t kDefaultShardBytes = 200ull * 1000 * 1000;
inline constexpr std::uint64_t kMinShardBytes = 1ull << 20;

struct TokenShard {
  std::filesystem::path path;
  std::uint64_t token_count = 0;
  std::uint32_t version = kShardVersion;
};

// Reads just the header; validates magic, version and on-disk size.
TokenShard inspect_shard(const std::filesystem::path& path);

std::vector<TokenId> read_shard(const std::filesystem::path& path);

// Shards in `dir` (files named *.bin with a shard header), sorted by name.
std::vector<TokenShard> list_shards(const std::filesystem::path& dir);

// Appends tokens and rolls over to a new file whenever the current one holds
// shard_bytes / 2 tokens. Existing shard files in the directory are removed
// on construction so reruns never mix old and new output.
class ShardWriter {
 public:
  ShardWriter(std::filesystem::path out_dir, std::uint64_t shard_bytes, std::string prefix = "shard");
  ~ShardWriter();
  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;

  void append(std::span<const TokenId> tokens);
  // Flushes the partial shard (if any) and returns every shard written.
  std::vector<TokenShard> finish();

  std::uint64_t tokens_written() const { return total_; }

 private:
  void flush();

  std::filesystem::path dir_;
  std::string prefix_;
  std::uint64_t capacity_;
  std::vector<std::uint16_t> buffer_;
  std::vector<TokenShard> shards_;
  std::uint64_t total_ = 0;
  bool finished_ = false;
};

// Streams tokens across an ordered shard list, loading `chunk_tokens` at a
// time so a corpus never has to fit in memory.
class ShardStreamReader {
 public:
  explicit ShardStreamReader(std::vector<TokenShard> shards, std::size_t chunk_tokens = 1u << 20);
  explicit ShardStreamReader(const std::filesystem::path& dir, std::size_t chunk_tokens = 1u << 20);

  // Fills up to out.size() tokens; returns how many were read (0 at end).
  std::size_t read(std::span<TokenId> out);

  // Next document including its terminating end-of-text id. A trailing run
  // without a terminator is returned as-is. False at end of stream.
  bool next_document(std::vector<TokenId>& doc);

  bool exhausted();
  std::uint64_t total_tokens() const { return total_; }
  void rewind();

 private:
  bool fill();

  std::vector<TokenShard> shards_;
  std::size_t chunk_;
  std::size_t shard_index_ = 0;
  std::uint64_t shard_offset_ = 0;
  std::ifstream file_;
  std::vector<std::uint16_t> buffer_;
  std::size_t buffer_pos_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace tinyllm
