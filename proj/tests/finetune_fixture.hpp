// SPDX-License-Identifier: Apache-2.0
//
// Synthetic gesture-classification records and a briefly pretrained tiny
// base model that has seen the prompt layout (but not these records).

#pragma once

#include <random>
#include <string>
#include <vector>

#include "test_helpers.hpp"
#include "tinyllm/finetune.hpp"
#include "tinyllm/trainer.hpp"

namespace tinyllm::testing {

inline const std::vector<std::string>& gesture_labels() {
  static const std::vector<std::string> labels = {"Tap", "Double Tap", "Hold"};
  return labels;
}

inline const std::string& gesture_instruction() {
  static const std::string text = "Determine the hand gesture. Answer Tap, Double Tap, or Hold.";
  return text;
}

inline std::string random_proximity(std::mt19937_64& rng) {
  std::string in = "Proximity: [";
  for (int k = 0; k < 6; ++k) {
    in += std::to_string(rng() % 100);
    if (k < 5) in += ", ";
  }
  return in + "]";
}

// Labels cycle through the classes, so n = 3k records are balanced.
inline std::vector<FinetuneRecord> gesture_records(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FinetuneRecord> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({gesture_instruction(), random_proximity(rng), gesture_labels()[i % 3]});
  }
  return out;
}

inline ModelConfig tiny_base_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.channels = 128;
  cfg.heads = 2;
  cfg.context = 256;
  return cfg;
}

// 80 steps over rendered records with random labels.
inline ModelWeights pretrain_tiny_base(const std::filesystem::path& dir) {
  const auto& tok = gpt2_tokenizer();
  std::mt19937_64 rng(77);
  ShardWriter writer(dir / "shards", kMinShardBytes);
  auto h = TrainHyper::scaled(80);
  h.micro_batch = 4;
  h.seq_len = 64;
  h.lr_max = 3e-3;
  h.lr_min = 3e-4;
  const std::size_t needed = static_cast<std::size_t>(h.total_steps) * h.micro_batch * h.seq_len + 1;
  std::size_t written = 0;
  while (written < needed) {
    const FinetuneRecord rec{gesture_instruction(), random_proximity(rng), gesture_labels()[rng() % 3]};
    const auto ids = tok.encode(render_prompt(rec, true));
    writer.append(ids);
    written += ids.size();
  }
  return train(tiny_base_config(), writer.finish(), {}, h, dir / "base").weights;
}

}  // namespace tinyllm::testing
