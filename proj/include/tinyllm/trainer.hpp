// SPDX-License-Identifier: Apache-2.0
//
// Pre-training loop: sequential batches over token shards, AdamW with a
// linear warmup and cosine decay, global-norm gradient clipping, periodic
// validation, checkpoints and a CSV loss log.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "tinyllm/model.hpp"
#include "tinyllm/shard.hpp"

namespace tinyllm {

struct TrainHyper {
  int micro_batch = 64;
  int seq_len = 1024;
  int grad_accum = 1;
  int total_steps = 20000;
  int warmup_steps = 700;
  double lr_max = 6e-4;
  double lr_min = 6e-5;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::uint64_t seed = 1337;
  int eval_interval = 0;    // 0: validate only at the end
  int eval_batches = 8;
  int checkpoint_interval = 0;  // 0: final checkpoint only

  void validate() const;
  // Same schedule shape over `steps`: warmup keeps its 700/20000 share.
  static TrainHyper scaled(int steps);
};

// lr_max (step + 1) / warmup during warmup, then
// lr_min + (lr_max - lr_min)(1 + cos(pi t)) / 2 with
// t = (step - warmup) / (total - 1 - warmup).
double lr_at(int step, const TrainHyper& h);

// Global L2 norm over `grads`. Scales in place by max_norm / norm when the
// norm exceeds max_norm. A non-finite norm is returned with grads untouched.
double clip_gradients(std::span<float> grads, double max_norm);

struct OptimizerState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : m(n, 0.0f), v(n, 0.0f) {}
};

struct AdamWParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// One bias-corrected AdamW update on a flat buffer. `t` is the 1-based step.
void adamw_update(std::span<float> w, std::span<const float> g, std::span<float> m, std::span<float> v,
                  std::int64_t t, const AdamWParams& p, bool decay);

// Advances state.step and updates every tensor; weight decay applies to
// matrices and embeddings only.
void adamw_step(ModelWeights& w, const ModelWeights& grads, OptimizerState& state, double lr, const TrainHyper& h);

// Consecutive (batch x seq) windows; targets are the next token. Windows
// advance by batch*seq tokens and cross shard boundaries.
class BatchLoader {
 public:
  BatchLoader(std::vector<TokenShard> shards, int batch, int seq);

  // False when fewer than batch*seq+1 tokens remain.
  bool next(TokenBatch& out);
  void rewind();
  std::uint64_t total_tokens() const { return reader_.total_tokens(); }

 private:
  ShardStreamReader reader_;
  int batch_;
  int seq_;
  std::vector<TokenId> buffer_;
  bool has_carry_ = false;
  TokenId carry_ = 0;
};

struct TrainRecord {
  int step = 0;
  double lr = 0;
  double train_loss = 0;
  double grad_norm = 0;
  std::optional<double> val_loss;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<TrainRecord> log;
  int steps_completed = 0;
  int steps_skipped = 0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path log_path;
};

using TrainCallback = std::function<void(const TrainRecord&)>;

// Initializes with init_model(cfg, h.seed) unless `initial` is given. Writes
// out_dir/model.bin, out_dir/train_log.csv and step checkpoints
// out_dir/checkpoint_<step>.bin.
TrainResult train(const ModelConfig& cfg, const std::vector<TokenShard>& train_shards,
                  const std::vector<TokenShard>& val_shards, const TrainHyper& h, const std::filesystem::path& out_dir,
                  const ModelWeights* initial = nullptr, const TrainCallback& on_step = {});

// Mean loss over up to `batches` windows from the start of `shards`.
double evaluate_loss(const ModelWeights& w, const std::vector<TokenShard>& shards, int batch, int seq, int batches);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainRecord>& log);

}  // namespace tinyllm
