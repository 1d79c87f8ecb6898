// SPDX-License-Identifier: Apache-2.0
//
// Instruction fine-tuning with low-rank adapters. Records are rendered with
// the Alpaca layout, the loss covers only the response tokens, and each
// targeted projection W (in x out) acts as W + (alpha / r) (B A)^T with
// A: r x in and B: out x r.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tinyllm/model.hpp"
#include "tinyllm/tokenizer.hpp"

namespace tinyllm {

struct FinetuneRecord {
  std::string instruction;
  std::string input;
  std::string response;

  void validate() const;
  bool operator==(const FinetuneRecord&) const = default;
};

// JSON lines with keys instruction / input / output.
std::vector<FinetuneRecord> read_records_jsonl(const std::filesystem::path& path);
void write_records_jsonl(const std::filesystem::path& path, const std::vector<FinetuneRecord>& records);

// "### Instruction:\n{instruction}\n\n### Input:\n{input}\n\n### Response:\n",
// followed by the response and the end-of-text marker when requested. The
// Input section is left out when the input is empty.
std::string render_prompt(const FinetuneRecord& rec, bool include_response);

struct FinetuneSplit {
  std::vector<FinetuneRecord> train;
  std::vector<FinetuneRecord> val;
  std::vector<FinetuneRecord> test;
};

// Seeded shuffle, then contiguous train / val / test slices at rounded
// boundaries.
FinetuneSplit build_ft_dataset(const std::vector<FinetuneRecord>& records, std::array<double, 3> ratios,
                               std::uint64_t seed);

struct LoraConfig {
  int rank = 16;
  double alpha = 32.0;
  double dropout = 0.0;
  std::vector<Projection> targets = {Projection::Qkv, Projection::AttnProj};
  double lr = 5e-4;
  int steps = 300;
  int grad_accum = 1;
  int batch = 4;
  std::uint64_t seed = 1337;
  int eval_interval = 10;
  double grad_clip_norm = 1.0;
  double weight_decay = 0.0;

  void validate() const;
};

class LoraAdapter final : public ProjectionAdapter<float> {
 public:
  struct Factor {
    int layer = 0;
    Projection projection = Projection::Qkv;
    int in = 0;
    int out = 0;
    std::size_t a_offset = 0;  // r x in
    std::size_t b_offset = 0;  // out x r
  };

  LoraAdapter() = default;
  // A ~ normal(0, 0.02), B = 0; every layer gets each target projection.
  LoraAdapter(const ModelConfig& cfg, int rank, double alpha, std::vector<Projection> targets, std::uint64_t seed);

  int rank() const { return rank_; }
  double alpha() const { return alpha_; }
  float scale() const { return static_cast<float>(alpha_ / rank_); }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<Projection>& targets() const { return targets_; }
  const std::vector<Factor>& factors() const { return factors_; }

  std::span<float> parameters() { return params_; }
  std::span<const float> parameters() const { return params_; }
  std::span<float> gradients() { return grads_; }
  void zero_grad();

  std::span<float> a(const Factor& f) { return std::span<float>(params_).subspan(f.a_offset, std::size_t(rank_) * f.in); }
  std::span<const float> a(const Factor& f) const {
    return std::span<const float>(params_).subspan(f.a_offset, std::size_t(rank_) * f.in);
  }
  std::span<float> b(const Factor& f) { return std::span<float>(params_).subspan(f.b_offset, std::size_t(f.out) * rank_); }
  std::span<const float> b(const Factor& f) const {
    return std::span<const float>(params_).subspan(f.b_offset, std::size_t(f.out) * rank_);
  }
  const Factor* find(int layer, Projection p) const;

  // Dropout on the adapter input is active only in training mode.
  void set_training(bool training, double dropout, std::uint64_t seed);
  // Switches mode keeping the dropout rate and generator state.
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  // Content hash, used to refuse merging the same adapter twice.
  std::uint64_t fingerprint() const;

  bool adapts(int layer, Projection p) const override;
  void forward(int layer, Projection p, std::span<const float> x, std::span<float> y, int rows) override;
  void backward(int layer, Projection p, std::span<const float> x, std::span<const float> dy, std::span<float> dx,
                int rows) override;

  // "TLLMLORA", u32 version, u32 r, f32 alpha, u32 count, then per target a
  // length-prefixed name ("block<l>.<projection>"), A and B as f32.
  void save(const std::filesystem::path& path) const;
  static LoraAdapter load(const std::filesystem::path& path, const ModelConfig& cfg);

 private:
  struct Cache {
    std::vector<float> xin;  // adapter input after dropout (rows x in)
    std::vector<float> u;    // scaled x A^T (rows x r)
    std::vector<std::uint8_t> keep;
  };

  ModelConfig cfg_;
  int rank_ = 0;
  double alpha_ = 0;
  std::vector<Projection> targets_;
  std::vector<Factor> factors_;
  std::vector<int> lookup_;  // layer * 4 + projection -> factor index or -1
  std::vector<float> params_;
  std::vector<float> grads_;
  std::vector<Cache> cache_;
  bool training_ = false;
  double dropout_ = 0.0;
  std::mt19937_64 rng_;
};

inline constexpr char kLoraMagic[8] = {'T', 'L', 'L', 'M', 'L', 'O', 'R', 'A'};
inline constexpr std::uint32_t kLoraVersion = 1;

// W + (alpha / r) (B A)^T for every adapted projection; other tensors copied.
// Throws if this adapter was already merged into `base`.
ModelWeights merge(const ModelWeights& base, const LoraAdapter& adapter);

// One tokenized record: inputs and next-token targets with the prompt
// region set to kIgnoreTarget.
struct FinetuneExample {
  std::vector<TokenId> tokens;
  std::vector<TokenId> targets;
};

// Returns nullopt when the rendered record does not fit in `context`.
std::optional<FinetuneExample> tokenize_record(const Tokenizer& tok, const FinetuneRecord& rec, int context);

// Pads with end-of-text tokens and ignored targets to the longest example.
TokenBatch collate(const std::vector<const FinetuneExample*>& examples);

struct FinetuneMetric {
  int step = 0;
  double train_loss = 0;
  std::optional<double> eval_loss;
};

struct FinetuneResult {
  LoraAdapter adapter;  // best adapter by evaluation loss
  int best_step = 0;    // steps completed when the best adapter was taken
  double best_eval_loss = 0;
  std::vector<FinetuneMetric> log;
  int skipped_records = 0;
};

using FinetuneCallback = std::function<void(const FinetuneMetric&)>;

// Step of the lowest eval loss; ties keep the earliest step.
int best_eval_step(const std::vector<FinetuneMetric>& log);

// Mean response-token loss of base + adapter over `examples`.
double finetune_eval_loss(const ModelWeights& base, LoraAdapter& adapter, const std::vector<FinetuneExample>& examples,
                          int batch);

// When `eval_records` is empty the training records are used for selection.
FinetuneResult finetune(const ModelWeights& base, const Tokenizer& tok, const LoraConfig& cfg,
                        const std::vector<FinetuneRecord>& train_records,
                        const std::vector<FinetuneRecord>& eval_records, const FinetuneCallback& on_step = {});

void write_finetune_log(const std::filesystem::path& path, const std::vector<FinetuneMetric>& log);

}  // namespace tinyllm
