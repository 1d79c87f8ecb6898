// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "tinyllm/error.hpp"

namespace tinyllm {
namespace {

struct CodeRange {
  char32_t lo;
  char32_t hi;
};

#include "unicode_ranges.inc"

template <std::size_t N>
bool in_ranges(const CodeRange (&ranges)[N], char32_t cp) {
  const auto it = std::upper_bound(std::begin(ranges), std::end(ranges), cp,
                                   [](char32_t v, const CodeRange& r) { return v < r.lo; });
  return it != std::begin(ranges) && cp <= std::prev(it)->hi;
}

enum class CharClass { Letter, Number, Space, Other };

struct CodePoint {
  char32_t value;
  std::size_t offset;  // byte offset in the chunk
  CharClass cls;
};

CharClass classify(char32_t cp) {
  if (cp < 0x80) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return CharClass::Letter;
    if (cp >= '0' && cp <= '9') return CharClass::Number;
    if (cp == ' ' || (cp >= 0x09 && cp <= 0x0D) || (cp >= 0x1C && cp <= 0x1F)) return CharClass::Space;
    return CharClass::Other;
  }
  if (in_ranges(kLetterRanges, cp)) return CharClass::Letter;
  if (in_ranges(kNumberRanges, cp)) return CharClass::Number;
  if (in_ranges(kSpaceRanges, cp)) return CharClass::Space;
  return CharClass::Other;
}

// Lenient UTF-8 decode: a malformed byte becomes its own "other" code point.
std::vector<CodePoint> decode_utf8(std::string_view s) {
  std::vector<CodePoint> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (int k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back({0xFFFD, i, CharClass::Other});
      ++i;
      continue;
    }
    out.push_back({cp, i, classify(cp)});
    i += len;
  }
  return out;
}

// GPT-2 pre-tokenization:
// 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
std::vector<std::string_view> pretokenize(std::string_view text) {
  const auto cps = decode_utf8(text);
  const std::size_t n = cps.size();
  auto offset = [&](std::size_t idx) { return idx < n ? cps[idx].offset : text.size(); };
  auto is = [&](std::size_t idx, CharClass c) { return idx < n && cps[idx].cls == c; };
  auto is_other = [&](std::size_t idx) { return idx < n && cps[idx].cls == CharClass::Other; };

  std::vector<std::string_view> pieces;
  std::size_t i = 0;
  while (i < n) {
    std::size_t end = i;
    const char32_t c = cps[i].value;
    if (c == U'\'' && i + 1 < n) {
      const char32_t c1 = cps[i + 1].value;
      const char32_t c2 = i + 2 < n ? cps[i + 2].value : 0;
      if (c1 == 's' || c1 == 't' || c1 == 'm' || c1 == 'd') {
        end = i + 2;
      } else if ((c1 == 'r' && c2 == 'e') || (c1 == 'v' && c2 == 'e') || (c1 == 'l' && c2 == 'l')) {
        end = i + 3;
      }
    }
    if (end == i) {
      const std::size_t body = (c == U' ') ? i + 1 : i;
      if (is(body, CharClass::Letter)) {
        end = body;
        while (is(end, CharClass::Letter)) ++end;
      } else if (is(body, CharClass::Number)) {
        end = body;
        while (is(end, CharClass::Number)) ++end;
      } else if (is_other(body)) {
        end = body;
        while (is_other(end)) ++end;
      }
    }
    if (end == i) {
      // whitespace run; leave the last space for the next token when a
      // non-space follows
      std::size_t run = i;
      while (is(run, CharClass::Space)) ++run;
      if (run == n || run - i == 1) {
        end = run;
      } else {
        end = run - 1;
      }
    }
    pieces.emplace_back(text.substr(offset(i), offset(end) - offset(i)));
    i = end;
  }
  return pieces;
}

std::array<char32_t, 256> byte_to_unicode() {
  std::array<char32_t, 256> table{};
  std::array<bool, 256> direct{};
  for (int b = '!'; b <= '~'; ++b) direct[b] = true;
  for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
  for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
  int extra = 0;
  for (int b = 0; b < 256; ++b) table[b] = direct[b] ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + extra++);
  return table;
}

// Maps a vocab key (bytes rendered through the GPT-2 byte encoder) back to raw bytes.
std::string unicode_to_bytes(std::string_view key, const std::unordered_map<char32_t, unsigned char>& inverse) {
  std::string out;
  for (const auto& cp : decode_utf8(key)) {
    const auto it = inverse.find(cp.value);
    if (it == inverse.end()) throw Error("malformed vocab: token \"" + std::string(key) + "\" outside byte alphabet");
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("asset not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
  if (!std::filesystem::exists(vocab_path)) throw Error("asset not found: " + vocab_path.string());
  if (!std::filesystem::exists(merges_path)) throw Error("asset not found: " + merges_path.string());

  const auto table = byte_to_unicode();
  std::unordered_map<char32_t, unsigned char> inverse;
  for (int b = 0; b < 256; ++b) inverse[table[b]] = static_cast<unsigned char>(b);

  nlohmann::json vocab;
  try {
    vocab = nlohmann::json::parse(read_file(vocab_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed vocab " + vocab_path.string() + ": " + e.what());
  }
  if (!vocab.is_object()) throw Error("malformed vocab " + vocab_path.string() + ": expected an object");
  if (vocab.size() != static_cast<std::size_t>(kGpt2VocabSize)) {
    throw Error("vocab size mismatch: expected " + std::to_string(kGpt2VocabSize) + ", got " +
                std::to_string(vocab.size()));
  }

  Tokenizer tok;
  tok.id_to_bytes_.assign(kGpt2VocabSize, std::string());
  std::vector<bool> seen(kGpt2VocabSize, false);
  for (const auto& [key, value] : vocab.items()) {
    if (!value.is_number_integer()) throw Error("malformed vocab: non-integer id for \"" + key + "\"");
    const auto id = value.get<std::int64_t>();
    if (id < 0 || id >= kGpt2VocabSize || seen[id]) {
      throw Error("malformed vocab: id " + std::to_string(id) + " out of range or duplicated");
    }
    seen[id] = true;
    std::string bytes = unicode_to_bytes(key, inverse);
    if (bytes.empty()) throw Error("malformed vocab: empty token for id " + std::to_string(id));
    tok.bytes_to_id_.emplace(bytes, static_cast<TokenId>(id));
    tok.id_to_bytes_[id] = std::move(bytes);
  }
  if (tok.id_to_bytes_[kEndOfText] != kEndOfTextMarker) throw Error("malformed vocab: id 50256 is not <|endoftext|>");
  for (int b = 0; b < 256; ++b) {
    const auto it = tok.bytes_to_id_.find(std::string(1, static_cast<char>(b)));
    if (it == tok.bytes_to_id_.end()) throw Error("malformed vocab: missing byte token " + std::to_string(b));
    tok.byte_ids_[b] = it->second;
  }

  std::istringstream merges(read_file(merges_path));
  std::string line;
  std::int32_t rank = 0;
  std::size_t line_no = 0;
  while (std::getline(merges, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line.rfind("#version", 0) == 0)) continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 >= line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      throw Error("malformed merges at line " + std::to_string(line_no));
    }
    const std::string left = unicode_to_bytes(std::string_view(line).substr(0, space), inverse);
    const std::string right = unicode_to_bytes(std::string_view(line).substr(space + 1), inverse);
    const auto l = tok.bytes_to_id_.find(left);
    const auto r = tok.bytes_to_id_.find(right);
    const auto m = tok.bytes_to_id_.find(left + right);
    if (l == tok.bytes_to_id_.end() || r == tok.bytes_to_id_.end() || m == tok.bytes_to_id_.end()) {
      throw Error("malformed merges at line " + std::to_string(line_no) + ": token not in vocab");
    }
    tok.merges_.emplace(pair_key(l->second, r->second), Merge{rank++, m->second});
  }
  if (tok.merges_.empty()) throw Error("malformed merges: no rules in " + merges_path.string());
  return tok;
}

Tokenizer Tokenizer::load_from_dir(const std::filesystem::path& root) {
  return load(root / "assets" / "vocab.json", root / "assets" / "merges.txt");
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size() / 3 + 1);
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto hit = text.find(kEndOfTextMarker, pos);
    const auto stop = hit == std::string_view::npos ? text.size() : hit;
    encode_chunk(text.substr(pos, stop - pos), out);
    if (hit == std::string_view::npos) break;
    out.push_back(kEndOfText);
    pos = hit + kEndOfTextMarker.size();
  }
  return out;
}

void Tokenizer::encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
  if (chunk.empty()) return;
  for (const auto piece : pretokenize(chunk)) encode_word(piece, out);
}

void Tokenizer::encode_word(std::string_view word, std::vector<TokenId>& out) const {
  std::vector<TokenId> parts;
  parts.reserve(word.size());
  for (const char ch : word) parts.push_back(byte_ids_[static_cast<unsigned char>(ch)]);
  while (parts.size() > 1) {
    std::int32_t best_rank = std::numeric_limits<std::int32_t>::max();
    std::size_t best_at = 0;
    TokenId best_id = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      const auto it = merges_.find(pair_key(parts[i], parts[i + 1]));
      if (it != merges_.end() && it->second.rank < best_rank) {
        best_rank = it->second.rank;
        best_at = i;
        best_id = it->second.merged;
      }
    }
    if (best_rank == std::numeric_limits<std::int32_t>::max()) break;
    // merge every non-overlapping occurrence of the best pair, left to right
    const TokenId left = parts[best_at];
    const TokenId right = parts[best_at + 1];
    std::size_t w = 0;
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
        parts[w++] = best_id;
        i += 2;
      } else {
        parts[w++] = parts[i++];
      }
    }
    parts.resize(w);
  }
  out.insert(out.end(), parts.begin(), parts.end());
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (const TokenId id : ids) out += token_bytes(id);
  return out;
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id < 0 || id >= vocab_size()) {
    throw Error("token id " + std::to_string(id) + " out of range [0, " + std::to_string(vocab_size()) + ")");
  }
  return id_to_bytes_[id];
}

}  // namespace tinyllm
