// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/data_pipeline.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "tinyllm/error.hpp"
#include "tinyllm/log.hpp"
#include "tinyllm/random.hpp"

namespace tinyllm {
namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

double parse_number(const std::string& s, const std::string& column, std::size_t row) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw Error("column " + column + " row " + std::to_string(row) + ": not a number: \"" + s + "\"");
  }
  return v;
}

}  // namespace

const SensorColumn* SensorTable::find(const std::string& name) const {
  for (const auto& c : columns) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

void SensorTable::validate() const {
  const std::size_t n = rows();
  for (const auto& c : columns) {
    if (c.values.size() != n) throw Error("column " + c.name + " length differs from the other columns");
  }
  if (!timestamps.empty()) {
    if (timestamps.size() != n) throw Error("timestamps are not aligned with the table rows");
    for (std::size_t i = 1; i < n; ++i) {
      if (timestamps[i] < timestamps[i - 1]) throw Error("timestamps decrease at row " + std::to_string(i));
    }
  }
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error("missing column: " + name);
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open csv " + path.string());
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                  std::to_string(table.header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw Error("csv " + path.string() + " has no header row");
  return table;
}

SensorTable sensor_table_from_csv(const CsvTable& csv, const std::vector<std::string>& columns,
                                  const std::map<std::string, std::string>& units,
                                  const std::string& timestamp_column, std::size_t row_begin,
                                  std::size_t row_end) {
  row_end = std::min(row_end, csv.rows.size());
  row_begin = std::min(row_begin, row_end);
  SensorTable table;
  for (const auto& name : columns) {
    const std::size_t idx = csv.column(name);
    SensorColumn col;
    col.name = name;
    if (const auto u = units.find(name); u != units.end()) col.unit = u->second;
    for (std::size_t r = row_begin; r < row_end; ++r) col.values.push_back(parse_number(csv.rows[r][idx], name, r));
    table.columns.push_back(std::move(col));
  }
  if (!timestamp_column.empty()) {
    const std::size_t idx = csv.column(timestamp_column);
    for (std::size_t r = row_begin; r < row_end; ++r) {
      table.timestamps.push_back(parse_number(csv.rows[r][idx], timestamp_column, r));
    }
  }
  table.validate();
  return table;
}

std::vector<int> normalize_series(std::span<const double> values, double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || hi < lo) throw Error("normalization range requires lo <= hi");
  std::vector<int> out;
  out.reserve(values.size());
  for (const double v : values) {
    if (!std::isfinite(v)) throw Error("non-finite sensor value");
    if (hi == lo) {
      out.push_back(0);
      continue;
    }
    const double scaled = std::round(100.0 * (v - lo) / (hi - lo));
    out.push_back(static_cast<int>(std::clamp(scaled, 0.0, 100.0)));
  }
  return out;
}

std::string clean_text(std::string_view text) {
  std::vector<std::string> lines;
  std::string cur;
  bool pending_space = false;
  auto end_line = [&] {
    if (!cur.empty()) lines.push_back(cur);
    cur.clear();
    pending_space = false;
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '\n') {
      end_line();
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f') {
      pending_space = !cur.empty();
    } else if (c < 0x20 || c == 0x7F) {
      continue;
    } else {
      if (pending_space) cur += ' ';
      pending_space = false;
      cur += ch;
    }
  }
  end_line();
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

std::string render_columns(const SensorTable& table, const PromptTemplateConfig& tmpl,
                           const std::map<std::string, NormRange>& ranges, std::size_t row_begin,
                           std::size_t row_end) {
  std::string out;
  bool first = true;
  for (const auto& name : tmpl.column_order) {
    const SensorColumn* col = table.find(name);
    if (!col) throw Error("missing column: " + name);
    const auto range = ranges.find(name);
    if (range == ranges.end()) throw Error("missing normalization range for column " + name);
    const auto slice = std::span<const double>(col->values).subspan(row_begin, row_end - row_begin);
    const auto norm = normalize_series(slice, range->second.lo, range->second.hi);
    if (!first) out += tmpl.separator;
    first = false;
    out += name + ": [";
    for (std::size_t i = 0; i < norm.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(norm[i]);
    }
    out += "]";
  }
  return out;
}

std::vector<std::string> transform_table(const SensorTable& table, const PromptTemplateConfig& tmpl,
                                         const std::map<std::string, NormRange>& ranges) {
  table.validate();
  const std::size_t n = table.rows();
  if (n == 0) throw Error("empty table");
  for (const auto& name : tmpl.column_order) {
    if (!table.find(name)) throw Error("missing column: " + name);
  }
  const std::size_t group = tmpl.rows_per_document == 0 ? n : tmpl.rows_per_document;
  std::vector<std::string> docs;
  for (std::size_t begin = 0; begin < n; begin += group) {
    const std::size_t end = std::min(n, begin + group);
    std::string doc = tmpl.context_text;
    if (!doc.empty()) doc += '\n';
    doc += render_columns(table, tmpl, ranges, begin, end);
    docs.push_back(clean_text(doc));
  }
  return docs;
}

std::vector<std::string> read_text_documents(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open text corpus " + path.string());
  std::vector<std::string> docs;
  std::string line, cur;
  auto flush = [&] {
    if (!cur.empty()) docs.push_back(cur);
    cur.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      flush();
      continue;
    }
    if (!cur.empty()) cur += '\n';
    cur += line;
  }
  flush();
  return docs;
}

void write_text_documents(const fs::path& path, std::span<const std::string> docs) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i) out << "\n\n";
    out << clean_text(docs[i]);
  }
  out << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<TokenShard> tokenize_corpus(const DocumentSource& docs, const Tokenizer& tok,
                                        std::uint64_t shard_size_limit, const fs::path& out_dir) {
  if (shard_size_limit < kMinShardBytes) throw Error("shard size limit must be at least 1 MiB");
  ShardWriter writer(out_dir, shard_size_limit);
  std::string doc;
  std::vector<TokenId> ids;
  while (docs(doc)) {
    ids = tok.encode(doc);
    ids.push_back(tok.eot_id());
    writer.append(ids);
  }
  return writer.finish();
}

std::vector<TokenShard> tokenize_corpus(std::span<const std::string> docs, const Tokenizer& tok,
                                        std::uint64_t shard_size_limit, const fs::path& out_dir) {
  std::size_t next = 0;
  return tokenize_corpus(
      [&](std::string& doc) {
        if (next >= docs.size()) return false;
        doc = docs[next++];
        return true;
      },
      tok, shard_size_limit, out_dir);
}

void MixSpec::validate() const {
  if (sources.empty()) throw Error("mix needs at least one source");
  double sum = 0.0;
  for (const auto& s : sources) {
    if (!(s.ratio >= 0.0 && s.ratio <= 1.0)) throw Error("mix ratio outside [0, 1] for " + s.dir.string());
    sum += s.ratio;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("mix ratios must sum to 1, got " + std::to_string(sum));
}

std::uint64_t MixResult::total_tokens() const {
  return std::accumulate(source_tokens.begin(), source_tokens.end(), std::uint64_t{0});
}

double MixResult::share(std::size_t source) const {
  const auto total = total_tokens();
  return total == 0 ? 0.0 : static_cast<double>(source_tokens.at(source)) / static_cast<double>(total);
}

MixResult mix_shards(const MixSpec& spec, const fs::path& out_dir, std::uint64_t shard_size_limit) {
  spec.validate();
  std::vector<ShardStreamReader> readers;
  for (const auto& s : spec.sources) {
    auto shards = list_shards(s.dir);
    if (shards.empty()) throw Error("empty source: no shards in " + s.dir.string());
    readers.emplace_back(std::move(shards));
  }
  MixResult result;
  result.source_tokens.assign(spec.sources.size(), 0);
  result.source_documents.assign(spec.sources.size(), 0);
  ShardWriter writer(out_dir, shard_size_limit);
  std::mt19937_64 rng(spec.seed);

  // One document of look-ahead per source; its length seeds the running mean.
  std::vector<std::vector<TokenId>> pending(spec.sources.size());
  std::vector<bool> active(spec.sources.size());
  auto refill = [&](std::size_t i) {
    if (readers[i].next_document(pending[i])) return;
    if (active[i]) {
      log::warn("mix: source " + spec.sources[i].dir.string() + " exhausted; renormalizing the remaining ratios");
    }
    active[i] = false;
  };
  for (std::size_t i = 0; i < active.size(); ++i) {
    active[i] = spec.sources[i].ratio > 0.0;
    if (active[i]) refill(i);
  }

  std::vector<double> weight(spec.sources.size());
  while (true) {
    if (spec.target_tokens && writer.tokens_written() >= *spec.target_tokens) break;
    // Whole documents are drawn with probability ratio / mean document length,
    // so each source's expected token share is its ratio.
    double mass = 0.0;
    for (std::size_t i = 0; i < active.size(); ++i) {
      weight[i] = 0.0;
      if (!active[i]) continue;
      const double mean_len = static_cast<double>(result.source_tokens[i] + pending[i].size()) /
                              static_cast<double>(result.source_documents[i] + 1);
      weight[i] = spec.sources[i].ratio / mean_len;
      mass += weight[i];
    }
    if (mass <= 0.0) break;
    const double u = unit_interval(rng()) * mass;
    std::size_t pick = active.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (!active[i]) continue;
      pick = i;
      acc += weight[i];
      if (u < acc) break;
    }
    writer.append(pending[pick]);
    result.source_tokens[pick] += pending[pick].size();
    result.source_documents[pick] += 1;
    refill(pick);
  }
  result.shards = writer.finish();
  return result;
}

double SplitResult::train_share() const {
  const auto total = train_tokens + val_tokens;
  return total == 0 ? 0.0 : static_cast<double>(train_tokens) / static_cast<double>(total);
}

bool assign_to_train(std::uint64_t seed, std::uint64_t ordinal, double train_ratio) {
  return unit_interval(splitmix64(splitmix64(seed) ^ ordinal)) < train_ratio;
}

SplitResult split_dataset(const std::vector<TokenShard>& shards, double train_ratio, std::uint64_t seed,
                          const fs::path& train_dir, const fs::path& val_dir, std::uint64_t shard_size_limit) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw Error("train ratio must be in (0, 1)");
  if (shards.empty()) throw Error("empty input: no shards to split");
  ShardStreamReader reader(shards);
  ShardWriter train(train_dir, shard_size_limit);
  ShardWriter val(val_dir, shard_size_limit);
  SplitResult result;
  std::vector<TokenId> doc;
  std::uint64_t ordinal = 0;
  while (reader.next_document(doc)) {
    if (assign_to_train(seed, ordinal++, train_ratio)) {
      train.append(doc);
      result.train_tokens += doc.size();
      ++result.train_documents;
    } else {
      val.append(doc);
      result.val_tokens += doc.size();
      ++result.val_documents;
    }
  }
  if (ordinal == 0) throw Error("empty input: no documents to split");
  result.train = train.finish();
  result.val = val.finish();
  return result;
}

}  // namespace tinyllm
