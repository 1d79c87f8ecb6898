// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/shard.hpp"

#include <algorithm>
#include <cstring>

#include "binary_io.hpp"
#include "tinyllm/error.hpp"

namespace tinyllm {
namespace fs = std::filesystem;

TokenShard inspect_shard(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open shard " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kShardMagic, 8) != 0) throw Error("bad shard magic in " + path.string());
  const auto version = io::read_u32(in);
  io::read_u32(in);
  const auto count = io::read_u64(in);
  if (!in) throw Error("truncated shard header in " + path.string());
  if (version != kShardVersion) {
    throw Error("shard version mismatch in " + path.string() + ": expected 1, got " + std::to_string(version));
  }
  const auto expected = kShardHeaderBytes + 2 * count;
  const auto actual = fs::file_size(path);
  if (actual != expected) {
    throw Error("shard " + path.string() + " has " + std::to_string(actual) + " bytes, expected " +
                std::to_string(expected));
  }
  return TokenShard{path, count, version};
}

std::vector<TokenId> read_shard(const fs::path& path) {
  const auto shard = inspect_shard(path);
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(kShardHeaderBytes));
  std::vector<std::uint16_t> raw(shard.token_count);
  io::read_u16_array(in, raw);
  if (!in) throw Error("truncated shard " + path.string());
  return {raw.begin(), raw.end()};
}

std::vector<TokenShard> list_shards(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("shard directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<TokenShard> shards;
  for (const auto& f : files) shards.push_back(inspect_shard(f));
  return shards;
}

ShardWriter::ShardWriter(fs::path out_dir, std::uint64_t shard_bytes, std::string prefix)
    : dir_(std::move(out_dir)), prefix_(std::move(prefix)), capacity_(shard_bytes / 2) {
  if (shard_bytes < 2) throw Error("shard size limit too small");
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) throw Error("cannot create output directory " + dir_.string());
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && entry.path().extension() == ".bin" && name.rfind(prefix_ + "_", 0) == 0) {
      fs::remove(entry.path());
    }
  }
  buffer_.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(capacity_, 1u << 22)));
}

ShardWriter::~ShardWriter() {
  if (!finished_) {
    try {
      finish();
    } catch (...) {
    }
  }
}

void ShardWriter::append(std::span<const TokenId> tokens) {
  for (const TokenId id : tokens) {
    if (id < 0 || id > 0xFFFF) throw Error("token id " + std::to_string(id) + " does not fit a u16 shard");
    buffer_.push_back(static_cast<std::uint16_t>(id));
    if (buffer_.size() == capacity_) flush();
  }
  total_ += tokens.size();
}

void ShardWriter::flush() {
  if (buffer_.empty()) return;
  char name[64];
  std::snprintf(name, sizeof(name), "_%06zu.bin", shards_.size());
  const fs::path path = dir_ / (prefix_ + name);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write shard " + path.string());
  out.write(kShardMagic, 8);
  io::write_u32(out, kShardVersion);
  io::write_u32(out, 0);
  io::write_u64(out, buffer_.size());
  io::write_u16_array(out, buffer_);
  if (!out) throw Error("failed writing shard " + path.string());
  shards_.push_back(TokenShard{path, buffer_.size(), kShardVersion});
  buffer_.clear();
}

std::vector<TokenShard> ShardWriter::finish() {
  if (!finished_) {
    flush();
    finished_ = true;
  }
  return shards_;
}

ShardStreamReader::ShardStreamReader(std::vector<TokenShard> shards, std::size_t chunk_tokens)
    : shards_(std::move(shards)), chunk_(std::max<std::size_t>(chunk_tokens, 1)) {
  for (const auto& s : shards_) total_ += s.token_count;
}

ShardStreamReader::ShardStreamReader(const fs::path& dir, std::size_t chunk_tokens)
    : ShardStreamReader(list_shards(dir), chunk_tokens) {}

void ShardStreamReader::rewind() {
  shard_index_ = 0;
  shard_offset_ = 0;
  file_.close();
  buffer_.clear();
  buffer_pos_ = 0;
}

bool ShardStreamReader::fill() {
  while (shard_index_ < shards_.size()) {
    const auto& shard = shards_[shard_index_];
    if (shard_offset_ < shard.token_count) {
      if (!file_.is_open()) {
        file_.open(shard.path, std::ios::binary);
        if (!file_) throw Error("cannot open shard " + shard.path.string());
      }
      const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(chunk_, shard.token_count - shard_offset_));
      file_.seekg(static_cast<std::streamoff>(kShardHeaderBytes + 2 * shard_offset_));
      buffer_.resize(n);
      io::read_u16_array(file_, buffer_);
      if (!file_) throw Error("truncated shard " + shard.path.string());
      buffer_pos_ = 0;
      shard_offset_ += n;
      return true;
    }
    file_.close();
    ++shard_index_;
    shard_offset_ = 0;
  }
  return false;
}

bool ShardStreamReader::exhausted() {
  return buffer_pos_ >= buffer_.size() && !fill();
}

std::size_t ShardStreamReader::read(std::span<TokenId> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    if (buffer_pos_ >= buffer_.size() && !fill()) break;
    const std::size_t n = std::min(out.size() - got, buffer_.size() - buffer_pos_);
    for (std::size_t i = 0; i < n; ++i) out[got + i] = buffer_[buffer_pos_ + i];
    buffer_pos_ += n;
    got += n;
  }
  return got;
}

bool ShardStreamReader::next_document(std::vector<TokenId>& doc) {
  doc.clear();
  while (true) {
    if (buffer_pos_ >= buffer_.size() && !fill()) return !doc.empty();
    while (buffer_pos_ < buffer_.size()) {
      const TokenId id = buffer_[buffer_pos_++];
      doc.push_back(id);
      if (id == kEndOfText) return true;
    }
  }
}

}  // namespace tinyllm
