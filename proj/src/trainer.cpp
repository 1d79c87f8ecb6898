// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "tinyllm/error.hpp"
#include "tinyllm/log.hpp"

namespace tinyllm {

void TrainHyper::validate() const {
  if (micro_batch < 1 || seq_len < 1 || grad_accum < 1) throw Error("micro_batch, seq_len and grad_accum must be >= 1");
  if (total_steps < 0 || warmup_steps < 0) throw Error("step counts must be non-negative");
  if (total_steps > 0 && warmup_steps >= total_steps) {
    throw Error("warmup_steps (" + std::to_string(warmup_steps) + ") must be < total_steps (" +
                std::to_string(total_steps) + ")");
  }
  if (!(lr_max > 0) || lr_min < 0 || lr_min > lr_max) throw Error("learning rates must satisfy 0 <= lr_min <= lr_max");
  if (!(grad_clip_norm > 0)) throw Error("grad_clip_norm must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || !(eps > 0) || weight_decay < 0) {
    throw Error("invalid AdamW hyperparameters");
  }
  if (eval_batches < 1 || eval_interval < 0 || checkpoint_interval < 0) throw Error("invalid eval/checkpoint interval");
}

TrainHyper TrainHyper::scaled(int steps) {
  TrainHyper h;
  h.total_steps = steps;
  h.warmup_steps = static_cast<int>(std::lround(700.0 * steps / 20000.0));
  return h;
}

double lr_at(int step, const TrainHyper& h) {
  if (step < 0 || step >= h.total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(h.total_steps) + ")");
  }
  if (step < h.warmup_steps) return h.lr_max * (step + 1) / h.warmup_steps;
  const int span = h.total_steps - 1 - h.warmup_steps;
  if (span <= 0) return h.lr_min;
  const double t = static_cast<double>(step - h.warmup_steps) / span;
  return h.lr_min + 0.5 * (h.lr_max - h.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

double clip_gradients(std::span<float> grads, double max_norm) {
  if (!(max_norm > 0)) throw Error("clip_gradients: max_norm must be > 0");
  double ss = 0.0;
  for (const float g : grads) ss += static_cast<double>(g) * g;
  const double norm = std::sqrt(ss);
  if (!std::isfinite(norm)) return norm;
  if (norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (float& g : grads) g *= scale;
  }
  return norm;
}

void adamw_update(std::span<float> w, std::span<const float> g, std::span<float> m, std::span<float> v,
                  std::int64_t t, const AdamWParams& p, bool decay) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) throw Error("adamw: shape mismatch");
  if (t < 1) throw Error("adamw: step must be >= 1");
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(t));
  const float b1 = static_cast<float>(p.beta1), b2 = static_cast<float>(p.beta2);
  const double wd = decay ? p.weight_decay : 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    w[i] -= static_cast<float>(p.lr * (mhat / (std::sqrt(vhat) + p.eps) + wd * w[i]));
  }
}

void adamw_step(ModelWeights& w, const ModelWeights& grads, OptimizerState& state, double lr, const TrainHyper& h) {
  const std::size_t n = w.values().size();
  if (grads.values().size() != n) throw Error("adamw: gradient shape mismatch");
  if (state.m.size() != n || state.v.size() != n) state = OptimizerState(n);
  ++state.step;
  const AdamWParams p{lr, h.beta1, h.beta2, h.eps, h.weight_decay};
  for (const auto& t : w.layout()) {
    adamw_update(w.tensor(t), grads.tensor(t), std::span<float>(state.m).subspan(t.offset, t.numel),
                 std::span<float>(state.v).subspan(t.offset, t.numel), state.step, p, t.matrix());
  }
}

BatchLoader::BatchLoader(std::vector<TokenShard> shards, int batch, int seq)
    : reader_(std::move(shards)), batch_(batch), seq_(seq) {
  if (batch < 1 || seq < 1) throw Error("batch loader needs positive batch and sequence sizes");
}

bool BatchLoader::next(TokenBatch& out) {
  const std::size_t n = static_cast<std::size_t>(batch_) * seq_;
  buffer_.resize(n + 1);
  std::size_t have = 0;
  if (has_carry_) buffer_[have++] = carry_;
  while (have < n + 1) {
    const std::size_t got = reader_.read(std::span<TokenId>(buffer_).subspan(have));
    if (got == 0) break;
    have += got;
  }
  if (have < n + 1) {
    // keep what was read so a rewind starts cleanly
    has_carry_ = false;
    return false;
  }
  out.batch = batch_;
  out.seq = seq_;
  out.tokens.assign(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
  out.targets.assign(buffer_.begin() + 1, buffer_.end());
  carry_ = buffer_[n];
  has_carry_ = true;
  return true;
}

void BatchLoader::rewind() {
  reader_.rewind();
  has_carry_ = false;
}

double evaluate_loss(const ModelWeights& w, const std::vector<TokenShard>& shards, int batch, int seq, int batches) {
  BatchLoader loader(shards, batch, seq);
  TokenBatch b;
  ActivationCache<float> cache;
  double total = 0;
  int count = 0;
  while (count < batches && loader.next(b)) {
    total += forward(w, b, cache);
    ++count;
  }
  if (count == 0) throw Error("validation shards hold fewer than one batch of tokens");
  return total / count;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write training log " + path.string());
  out << "step,lr,train_loss,grad_norm,val_loss\n";
  out << std::setprecision(9);
  for (const auto& r : log) {
    out << r.step << ',' << r.lr << ',' << r.train_loss << ',' << r.grad_norm << ',';
    if (r.val_loss) out << *r.val_loss;
    out << '\n';
  }
}

TrainResult train(const ModelConfig& cfg, const std::vector<TokenShard>& train_shards,
                  const std::vector<TokenShard>& val_shards, const TrainHyper& h, const std::filesystem::path& out_dir,
                  const ModelWeights* initial, const TrainCallback& on_step) {
  cfg.validate();
  h.validate();
  if (h.seq_len > cfg.context) {
    throw Error("seq_len " + std::to_string(h.seq_len) + " exceeds model context " + std::to_string(cfg.context));
  }
  if (train_shards.empty()) throw Error("no training shards");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  result.weights = initial ? *initial : init_model(cfg, h.seed);
  if (!(result.weights.config() == cfg)) throw Error("initial weights do not match the model config");
  ModelWeights grads(cfg);
  OptimizerState opt(result.weights.values().size());
  BatchLoader loader(train_shards, h.micro_batch, h.seq_len);
  ActivationCache<float> cache;
  TokenBatch batch;
  const float micro_scale = 1.0f / static_cast<float>(h.grad_accum);

  for (int step = 0; step < h.total_steps; ++step) {
    grads.zero();
    double loss = 0;
    bool underrun = false;
    for (int micro = 0; micro < h.grad_accum; ++micro) {
      if (!loader.next(batch)) {
        underrun = true;
        break;
      }
      const float l = forward(result.weights, batch, cache);
      if (!std::isfinite(l)) {
        throw Error("non-finite training loss at step " + std::to_string(step) + " (lr " +
                    std::to_string(lr_at(step, h)) + ")");
      }
      loss += l * micro_scale;
      backward(result.weights, batch, cache, &grads, {micro_scale, nullptr});
    }
    if (underrun) {
      log::warn("training data exhausted after " + std::to_string(step) + " of " + std::to_string(h.total_steps) +
                " steps; stopping early");
      break;
    }
    TrainRecord rec;
    rec.step = step;
    rec.lr = lr_at(step, h);
    rec.train_loss = loss;
    rec.grad_norm = clip_gradients(grads.values(), h.grad_clip_norm);
    if (std::isfinite(rec.grad_norm)) {
      adamw_step(result.weights, grads, opt, rec.lr, h);
    } else {
      log::warn("non-finite gradient norm at step " + std::to_string(step) + "; update skipped");
      ++result.steps_skipped;
    }
    result.steps_completed = step + 1;
    const bool last = step + 1 == h.total_steps;
    if (!val_shards.empty() && ((h.eval_interval > 0 && (step + 1) % h.eval_interval == 0) || last)) {
      rec.val_loss = evaluate_loss(result.weights, val_shards, h.micro_batch, h.seq_len, h.eval_batches);
    }
    if (h.checkpoint_interval > 0 && (step + 1) % h.checkpoint_interval == 0 && !last) {
      std::ostringstream name;
      name << "checkpoint_" << std::setw(6) << std::setfill('0') << step + 1 << ".bin";
      save_checkpoint(out_dir / name.str(), result.weights);
    }
    result.log.push_back(rec);
    if (on_step) on_step(rec);
  }

  result.final_checkpoint = out_dir / "model.bin";
  save_checkpoint(result.final_checkpoint, result.weights);
  result.log_path = out_dir / "train_log.csv";
  write_train_log(result.log_path, result.log);
  return result;
}

}  // namespace tinyllm
