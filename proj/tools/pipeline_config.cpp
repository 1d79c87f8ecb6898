// SPDX-License-Identifier: Apache-2.0

#include "pipeline_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "tinyllm/error.hpp"

namespace tinyllm::cli {
namespace fs = std::filesystem;
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string qualified(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

template <typename T>
T parse_number(const std::string& text, const std::string& where, const char* kind) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw Error(where + ": expected " + kind + ", got '" + text + "'");
  return value;
}

}  // namespace

const std::map<std::string, std::vector<std::string>>& PipelineConfig::schema() {
  static const std::map<std::string, std::vector<std::string>> s = {
      {"", {"seed", "threads", "assets", "log_level", "root"}},
      {"prepare",
       {"csv", "columns", "units", "ranges", "timestamp", "rows_per_document", "context", "separator", "text",
        "output"}},
      {"tokenize", {"inputs", "outputs", "shard_bytes"}},
      {"mix", {"sources", "ratios", "output", "target_tokens", "shard_bytes"}},
      {"split", {"input", "train_ratio", "train_output", "val_output", "shard_bytes"}},
      {"pretrain",
       {"train", "val", "output", "layers", "channels", "heads", "context", "micro_batch", "seq_len", "grad_accum",
        "steps", "warmup", "lr_max", "lr_min", "clip", "beta1", "beta2", "weight_decay", "eval_interval",
        "eval_batches", "checkpoint_interval", "resume"}},
      {"finetune",
       {"base", "records", "eval_records", "split", "output", "rank", "alpha", "dropout", "targets", "lr", "steps",
        "batch", "grad_accum", "eval_interval", "clip", "weight_decay"}},
      {"merge", {"base", "adapter", "output"}},
      {"quantize", {"input", "output", "bits", "block_size"}},
      {"generate",
       {"model", "prompt", "prompt_file", "temperature", "repeat_penalty", "repeat_window", "max_new_tokens"}},
      {"eval", {"model", "cases", "records", "labels", "k", "temperature", "repeat_penalty", "report"}},
      {"bench",
       {"model", "prompt", "max_new_tokens", "temperature", "repeat_penalty", "instances", "background", "report"}},
  };
  return s;
}

PipelineConfig PipelineConfig::load(const fs::path& file) {
  if (file.empty()) {
    PipelineConfig cfg;
    cfg.base_dir_ = fs::current_path();
    return cfg;
  }
  std::ifstream in(file);
  if (!in) throw Error("cannot open config " + file.string());
  auto dir = fs::absolute(file).parent_path();
  try {
    return parse(in, dir);
  } catch (const Error& e) {
    throw Error(file.string() + ": " + e.what());
  }
}

PipelineConfig PipelineConfig::parse(std::istream& in, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error("line " + std::to_string(e.line()) + ": " + e.message());
  }
  PipelineConfig cfg;
  cfg.base_dir_ = base_dir;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      cfg.values_[""][name] = trim(node.data());
      continue;
    }
    auto& section = cfg.values_[name];
    for (const auto& [key, leaf] : node) {
      if (!leaf.empty()) throw Error("nested value under " + name + "." + key);
      section[key] = trim(leaf.data());
    }
  }
  cfg.validate_keys();
  return cfg;
}

void PipelineConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw Error("override '" + std::string(assignment) + "' is not key=value");
  const auto name = trim(assignment.substr(0, eq));
  const auto value = trim(assignment.substr(eq + 1));
  const auto dot = name.find('.');
  if (dot == std::string::npos) {
    set("", name, value);
  } else {
    set(name.substr(0, dot), name.substr(dot + 1), value);
  }
}

void PipelineConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  values_[section][key] = value;
  validate_keys();
}

void PipelineConfig::validate_keys() const {
  const auto& s = schema();
  for (const auto& [section, keys] : values_) {
    const auto it = s.find(section);
    if (it == s.end()) throw Error("unknown config section '" + section + "'");
    for (const auto& [key, _] : keys) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw Error("unknown config key '" + qualified(section, key) + "'");
    }
  }
}

bool PipelineConfig::has(const std::string& section, const std::string& key) const {
  return get(section, key).has_value();
}

std::optional<std::string> PipelineConfig::get(const std::string& section, const std::string& key) const {
  const auto s = values_.find(section);
  if (s == values_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end() || k->second.empty()) return std::nullopt;
  return k->second;
}

std::string PipelineConfig::require(const std::string& section, const std::string& key) const {
  auto v = get(section, key);
  if (!v) throw Error("missing required config key '" + qualified(section, key) + "'");
  return *v;
}

std::string PipelineConfig::get_string(const std::string& section, const std::string& key,
                                       const std::string& fallback) const {
  return get(section, key).value_or(fallback);
}

int PipelineConfig::get_int(const std::string& section, const std::string& key, int fallback) const {
  const auto v = get(section, key);
  return v ? parse_number<int>(*v, qualified(section, key), "an integer") : fallback;
}

std::uint64_t PipelineConfig::get_u64(const std::string& section, const std::string& key,
                                      std::uint64_t fallback) const {
  const auto v = get(section, key);
  return v ? parse_number<std::uint64_t>(*v, qualified(section, key), "a non-negative integer") : fallback;
}

double PipelineConfig::get_double(const std::string& section, const std::string& key, double fallback) const {
  const auto v = get(section, key);
  return v ? parse_number<double>(*v, qualified(section, key), "a number") : fallback;
}

std::vector<std::string> PipelineConfig::get_list(const std::string& section, const std::string& key) const {
  std::vector<std::string> out;
  const auto v = get(section, key);
  if (!v) return out;
  std::stringstream ss(*v);
  for (std::string item; std::getline(ss, item, ',');) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> PipelineConfig::get_doubles(const std::string& section, const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(section, key))
    out.push_back(parse_number<double>(item, qualified(section, key), "a number"));
  return out;
}

std::vector<int> PipelineConfig::get_ints(const std::string& section, const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : get_list(section, key))
    out.push_back(parse_number<int>(item, qualified(section, key), "an integer"));
  return out;
}

fs::path PipelineConfig::root() const {
  const auto r = get("", "root");
  if (!r) return base_dir_;
  const fs::path p(*r);
  return p.is_absolute() ? p : base_dir_ / p;
}

fs::path PipelineConfig::resolve(const fs::path& p) const { return p.is_absolute() ? p : root() / p; }

std::optional<fs::path> PipelineConfig::get_path(const std::string& section, const std::string& key) const {
  const auto v = get(section, key);
  if (!v) return std::nullopt;
  return resolve(*v);
}

fs::path PipelineConfig::require_path(const std::string& section, const std::string& key) const {
  return resolve(require(section, key));
}

std::vector<fs::path> PipelineConfig::get_paths(const std::string& section, const std::string& key) const {
  std::vector<fs::path> out;
  for (const auto& item : get_list(section, key)) out.push_back(resolve(item));
  return out;
}

std::uint64_t PipelineConfig::seed() const { return get_u64("", "seed", 1337); }

std::string PipelineConfig::section_text(const std::string& section) const {
  std::string out = "seed=" + std::to_string(seed()) + "\n";
  const auto s = values_.find(section);
  if (s == values_.end()) return out;
  for (const auto& [k, v] : s->second) out += k + "=" + v + "\n";
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[i + 1];
      if (n == 'n' || n == 't' || n == '\\') {
        out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : '\\');
        ++i;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

}  // namespace tinyllm::cli
