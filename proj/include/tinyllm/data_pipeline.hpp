// SPDX-License-Identifier: Apache-2.0
//
// Corpus preparation: sensor tables -> prompt documents -> token shards,
// ratio-based mixing of tokenized sources and the train/validation split.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinyllm/shard.hpp"
#include "tinyllm/tokenizer.hpp"

namespace tinyllm {

struct SensorColumn {
  std::string name;
  std::string unit;
  std::vector<double> values;
};

struct SensorTable {
  std::vector<SensorColumn> columns;
  std::vector<double> timestamps;  // empty when the source has none

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().values.size(); }
  const SensorColumn* find(const std::string& name) const;
  // Equal column lengths; timestamps (if any) aligned and non-decreasing.
  void validate() const;
};

struct PromptTemplateConfig {
  std::string context_text;
  std::vector<std::string> column_order;
  std::string separator = "\n";
  // Rows rendered into one document; 0 puts the whole table in one document.
  std::size_t rows_per_document = 0;
};

struct NormRange {
  double lo = 0.0;
  double hi = 100.0;
};

// Raw CSV with a header row. Quoted fields may contain commas.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

// Numeric columns (and an optional timestamp column) of a CSV slice.
SensorTable sensor_table_from_csv(const CsvTable& csv, const std::vector<std::string>& columns,
                                  const std::map<std::string, std::string>& units,
                                  const std::string& timestamp_column = {}, std::size_t row_begin = 0,
                                  std::size_t row_end = static_cast<std::size_t>(-1));

// v -> round(100 (v - lo) / (hi - lo)) clamped to [0, 100]; all zeros if hi == lo.
std::vector<int> normalize_series(std::span<const double> values, double lo, double hi);

// Collapses blank runs, strips control characters (newlines survive as single
// line breaks) and trims every line.
std::string clean_text(std::string_view text);

// "Name: [v1, v2, ...]" lines joined by tmpl.separator, rows [begin, end).
std::string render_columns(const SensorTable& table, const PromptTemplateConfig& tmpl,
                           const std::map<std::string, NormRange>& ranges, std::size_t row_begin,
                           std::size_t row_end);

std::vector<std::string> transform_table(const SensorTable& table, const PromptTemplateConfig& tmpl,
                                         const std::map<std::string, NormRange>& ranges);

// Plain-text corpus: one document per blank-line separated block.
std::vector<std::string> read_text_documents(const std::filesystem::path& path);
void write_text_documents(const std::filesystem::path& path, std::span<const std::string> docs);

// Pulls the next document into `doc`; returns false at end of input.
using DocumentSource = std::function<bool(std::string& doc)>;

std::vector<TokenShard> tokenize_corpus(const DocumentSource& docs, const Tokenizer& tok,
                                        std::uint64_t shard_size_limit, const std::filesystem::path& out_dir);
std::vector<TokenShard> tokenize_corpus(std::span<const std::string> docs, const Tokenizer& tok,
                                        std::uint64_t shard_size_limit, const std::filesystem::path& out_dir);

struct MixSource {
  std::filesystem::path dir;
  double ratio = 0.0;
};

struct MixSpec {
  std::vector<MixSource> sources;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> target_tokens;

  void validate() const;
};

struct MixResult {
  std::vector<TokenShard> shards;
  std::vector<std::uint64_t> source_tokens;
  std::vector<std::uint64_t> source_documents;

  std::uint64_t total_tokens() const;
  double share(std::size_t source) const;
};

MixResult mix_shards(const MixSpec& spec, const std::filesystem::path& out_dir,
                     std::uint64_t shard_size_limit = kDefaultShardBytes);

struct SplitResult {
  std::vector<TokenShard> train;
  std::vector<TokenShard> val;
  std::uint64_t train_tokens = 0;
  std::uint64_t val_tokens = 0;
  std::uint64_t train_documents = 0;
  std::uint64_t val_documents = 0;

  double train_share() const;
};

// Document ordinal -> train when hash(seed, ordinal) / 2^64 < train_ratio.
bool assign_to_train(std::uint64_t seed, std::uint64_t ordinal, double train_ratio);

SplitResult split_dataset(const std::vector<TokenShard>& shards, double train_ratio, std::uint64_t seed,
                          const std::filesystem::path& train_dir, const std::filesystem::path& val_dir,
                          std::uint64_t shard_size_limit = kDefaultShardBytes);

}  // namespace tinyllm
