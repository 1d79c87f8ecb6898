// SPDX-License-Identifier: Apache-2.0
//
// Heavier checks shared by the unit tests and the acceptance runner.

#pragma once

#include <chrono>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "test_helpers.hpp"
#include "tinyllm/model.hpp"
#include "tinyllm/shard.hpp"
#include "tinyllm/trainer.hpp"

namespace tinyllm::testing {

// Random valid UTF-8: mixes ASCII, whitespace runs, accented Latin, CJK,
// emoji and the apostrophe contractions the pre-tokenizer special-cases.
inline std::string random_utf8(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {" ", "  ", "\n", "\n\n", "\t", "'s", "'ll", "'", "a", "Z",
                                                  "7", "42", ".", ",", "#", "é", "ß", "中文", "🙂", "—",
                                                  "\xC2\xA0", "\xE3\x80\x80", "١٢", "<|", "|>"};
  std::uniform_int_distribution<int> len(0, 40);
  std::uniform_int_distribution<int> kind(0, 3);
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::uniform_int_distribution<int> ascii(0x20, 0x7E);
  std::uniform_int_distribution<int> bmp(0xA0, 0xD7FF);
  std::string s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    switch (kind(rng)) {
      case 0:
        s += pieces[pick(rng)];
        break;
      case 1:
        s += static_cast<char>(ascii(rng));
        break;
      default: {
        const int cp = kind(rng) == 0 ? bmp(rng) : ascii(rng);
        if (cp < 0x80) {
          s += static_cast<char>(cp);
        } else if (cp < 0x800) {
          s += static_cast<char>(0xC0 | (cp >> 6));
          s += static_cast<char>(0x80 | (cp & 0x3F));
        } else {
          s += static_cast<char>(0xE0 | (cp >> 12));
          s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
          s += static_cast<char>(0x80 | (cp & 0x3F));
        }
      }
    }
  }
  return s;
}

inline std::vector<TokenId> read_all(const std::vector<TokenShard>& shards) {
  std::vector<TokenId> all;
  for (const auto& s : shards) {
    const auto t = read_shard(s.path);
    all.insert(all.end(), t.begin(), t.end());
  }
  return all;
}

inline std::vector<std::vector<TokenId>> split_documents(const std::vector<TokenId>& stream) {
  std::vector<std::vector<TokenId>> docs(1);
  for (const auto id : stream) {
    docs.back().push_back(id);
    if (id == kEndOfText) docs.emplace_back();
  }
  if (docs.back().empty()) docs.pop_back();
  return docs;
}

// Writes `docs` documents with ids drawn from [id_lo, id_hi), lengths in
// [min_len, max_len], each terminated by the end-of-text id.
inline std::vector<TokenShard> synthetic_source(const std::filesystem::path& dir, std::size_t docs, TokenId id_lo,
                                         TokenId id_hi, int min_len, int max_len, std::uint64_t seed) {
  ShardWriter w(dir, kMinShardBytes);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<TokenId> id(id_lo, id_hi - 1);
  std::vector<TokenId> doc;
  for (std::size_t d = 0; d < docs; ++d) {
    doc.resize(len(rng));
    for (auto& t : doc) t = id(rng);
    doc.push_back(kEndOfText);
    w.append(doc);
  }
  return w.finish();
}

// Sentences drawn with replacement from a small fixed pool until `tokens`
// ids are written; each sentence ends with end-of-text.
inline std::vector<TokenShard> memorizable_corpus(const std::filesystem::path& dir, std::size_t tokens, int pool,
                                                  std::uint64_t seed) {
  const auto& tok = gpt2_tokenizer();
  const std::vector<std::string> rooms = {"kitchen", "garage", "office", "bedroom", "hallway"};
  const std::vector<std::string> states = {"walking", "sitting", "running", "standing"};
  std::vector<std::vector<TokenId>> sentences;
  for (int i = 0; i < pool; ++i) {
    const std::string s = "Sensor " + std::to_string(i) + " in the " + rooms[i % rooms.size()] +
                          " reports that the user is " + states[(i / 5) % states.size()] + ".";
    auto ids = tok.encode(s);
    ids.push_back(kEndOfText);
    sentences.push_back(std::move(ids));
  }
  std::mt19937_64 rng(seed);
  ShardWriter writer(dir, kMinShardBytes);
  std::size_t written = 0;
  while (written < tokens) {
    const auto& s = sentences[rng() % sentences.size()];
    writer.append(s);
    written += s.size();
  }
  return writer.finish();
}

struct GradCheckReport {
  int checked = 0;
  double worst = 0;
  std::string worst_tensor;
  std::set<std::string> kinds;  // tensor names with the block prefix dropped
};

// Central differences in double precision on a tiny model with perturbed
// weights, at least 12 coordinates per tensor. Relative error uses a 1e-6
// floor on the denominator.
inline GradCheckReport gradient_check(double eps = 1e-3) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.channels = 64;
  cfg.heads = 1;
  cfg.vocab = 256;
  cfg.context = 16;
  auto w = init_model(cfg, 21).cast<double>();
  std::mt19937_64 rng(22);
  std::normal_distribution<double> n(0.0, 0.2);
  for (const auto& t : w.layout()) {
    if (t.matrix()) {
      for (auto& v : w.tensor(t)) v *= 5.0;
    } else {
      for (auto& v : w.tensor(t)) v += n(rng);
    }
  }
  TokenBatch batch{2, 8, {}, {}};
  for (int i = 0; i < 16; ++i) batch.tokens.push_back(static_cast<TokenId>(rng() % cfg.vocab));
  for (int i = 0; i < 16; ++i) batch.targets.push_back(static_cast<TokenId>(rng() % cfg.vocab));
  batch.targets[3] = kIgnoreTarget;

  ActivationCache<double> cache;
  forward(w, batch, cache);
  ParameterSet<double> grads(cfg);
  backward(w, batch, cache, &grads);

  auto loss_at = [&](std::size_t index, double delta) {
    const double saved = w.values()[index];
    w.values()[index] = saved + delta;
    ActivationCache<double> c;
    const double loss = forward(w, batch, c);
    w.values()[index] = saved;
    return loss;
  };

  GradCheckReport report;
  // token embedding rows that appear in the batch carry both embedding and head gradient
  const std::set<TokenId> used(batch.tokens.begin(), batch.tokens.end());
  for (const auto& t : w.layout()) {
    std::vector<std::size_t> picks;
    if (t.name == "token_embedding") {
      for (const auto id : used) picks.push_back(static_cast<std::size_t>(id) * cfg.channels + rng() % cfg.channels);
    } else if (t.name == "position_embedding") {
      for (int s = 0; s < 8; ++s) picks.push_back(static_cast<std::size_t>(s) * cfg.channels + rng() % cfg.channels);
    }
    while (picks.size() < 12) picks.push_back(rng() % t.numel);
    for (const auto local : picks) {
      const std::size_t idx = t.offset + local;
      const double numeric = (loss_at(idx, eps) - loss_at(idx, -eps)) / (2 * eps);
      const double analytic = grads.values()[idx];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      if (rel > report.worst) {
        report.worst = rel;
        report.worst_tensor = t.name;
      }
      ++report.checked;
    }
    const auto dot = t.name.find('.');
    report.kinds.insert(t.name.rfind("block", 0) == 0 ? t.name.substr(dot + 1) : t.name);
  }
  return report;
}

struct TrainingSanityReport {
  int steps = 0;
  double initial_loss = 0;
  double final_loss = 0;  // mean of the last 10 steps
  double seconds = 0;
};

// 200 steps with the proportionally scaled default schedule on a 50k-token
// corpus of 40 repeating sentences.
inline TrainingSanityReport training_sanity(const std::filesystem::path& dir) {
  const auto shards = memorizable_corpus(dir / "data", 50000, 40, 2);
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.channels = 128;
  cfg.heads = 2;
  cfg.context = 256;
  auto h = TrainHyper::scaled(200);
  h.micro_batch = 4;
  h.seq_len = 60;
  const auto start = std::chrono::steady_clock::now();
  const auto result = train(cfg, shards, {}, h, dir / "out");
  TrainingSanityReport r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.steps = result.steps_completed;
  if (result.log.empty()) return r;
  r.initial_loss = result.log.front().train_loss;
  const std::size_t tail = std::min<std::size_t>(10, result.log.size());
  for (std::size_t i = result.log.size() - tail; i < result.log.size(); ++i) r.final_loss += result.log[i].train_loss;
  r.final_loss /= static_cast<double>(tail);
  return r;
}

}  // namespace tinyllm::testing
