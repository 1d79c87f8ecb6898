// SPDX-License-Identifier: Apache-2.0
//
// GPT-2 family decoder: configuration, parameter layout, forward pass with
// cached activations, cross-entropy loss and the exact backward pass.
//
// Block order is pre-norm: x += Attn(LN1(x)); x += FFN(LN2(x)). The FFN uses
// the tanh GELU approximation and the output head is tied to the token
// embedding. Weight matrices are stored row-major as (in x out).

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tinyllm/tokenizer.hpp"

namespace tinyllm {

struct ModelConfig {
  int layers = 12;
  int channels = 768;
  int vocab = kGpt2VocabSize;
  int context = 1024;
  int heads = 12;

  // The default family: C = 64 l with 64-wide attention heads.
  static ModelConfig family(int layers);

  int head_dim() const { return channels / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Sum over every tensor, tied head counted once.
std::int64_t param_count_exact(const ModelConfig& cfg);

// Empirical fit in millions of parameters: 0.05 l^3 + 3.2 l.
double param_count_empirical(int layers);

enum class Projection { Qkv, AttnProj, FfnUp, FfnDown };

inline constexpr Projection kAllProjections[] = {Projection::Qkv, Projection::AttnProj, Projection::FfnUp,
                                                 Projection::FfnDown};

std::string_view projection_name(Projection p);
std::optional<Projection> parse_projection(std::string_view name);
// (in, out) extent of a projection matrix.
std::pair<int, int> projection_shape(const ModelConfig& cfg, Projection p);

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t numel = 0;
  bool matrix() const { return shape.size() >= 2; }
};

// Tensors in checkpoint order: token_embedding, position_embedding, then per
// block ln1.g ln1.b qkv.w qkv.b proj.w proj.b ln2.g ln2.b up.w up.b down.w
// down.b, then the final layernorm gain and bias.
std::vector<TensorInfo> tensor_layout(const ModelConfig& cfg);

template <typename T>
struct BlockTensors {
  std::span<T> ln1_gain, ln1_bias;
  std::span<T> qkv_weight, qkv_bias;
  std::span<T> proj_weight, proj_bias;
  std::span<T> ln2_gain, ln2_bias;
  std::span<T> up_weight, up_bias;
  std::span<T> down_weight, down_bias;

  std::span<T> weight(Projection p) const;
  std::span<T> bias(Projection p) const;
};

// Every model tensor in one contiguous buffer (checkpoint order). Gradients
// use the same type, so they share the named-tensor structure.
template <typename Real>
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorInfo>& layout() const { return *layout_; }

  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::span<Real> tensor(const TensorInfo& t) { return std::span<Real>(data_).subspan(t.offset, t.numel); }
  std::span<const Real> tensor(const TensorInfo& t) const {
    return std::span<const Real>(data_).subspan(t.offset, t.numel);
  }

  std::span<Real> token_embedding() { return slice(0); }
  std::span<const Real> token_embedding() const { return slice(0); }
  std::span<Real> position_embedding() { return slice(1); }
  std::span<const Real> position_embedding() const { return slice(1); }
  BlockTensors<Real> block(int layer);
  BlockTensors<const Real> block(int layer) const;
  std::span<Real> final_gain() { return slice(layout_->size() - 2); }
  std::span<const Real> final_gain() const { return slice(layout_->size() - 2); }
  std::span<Real> final_bias() { return slice(layout_->size() - 1); }
  std::span<const Real> final_bias() const { return slice(layout_->size() - 1); }

  void zero();

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out(cfg_);
    auto dst = out.values();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<Other>(data_[i]);
    return out;
  }

  bool operator==(const ParameterSet& o) const { return cfg_ == o.cfg_ && data_ == o.data_; }

  // Fingerprints of adapters folded into these values (kept in memory only).
  const std::vector<std::uint64_t>& merged_adapters() const { return merged_; }
  void note_merged(std::uint64_t fingerprint) { merged_.push_back(fingerprint); }

 private:
  std::span<Real> slice(std::size_t index) { return tensor((*layout_)[index]); }
  std::span<const Real> slice(std::size_t index) const { return tensor((*layout_)[index]); }

  ModelConfig cfg_;
  std::shared_ptr<const std::vector<TensorInfo>> layout_;
  std::vector<Real> data_;
  std::vector<std::uint64_t> merged_;
};

using ModelWeights = ParameterSet<float>;

// normal(0, 0.02) matrices, residual projections scaled by 1/sqrt(2 l),
// layernorm gains 1 and all biases 0. Deterministic per seed.
ModelWeights init_model(const ModelConfig& cfg, std::uint64_t seed);

inline constexpr TokenId kIgnoreTarget = -1;

struct TokenBatch {
  int batch = 0;
  int seq = 0;
  std::vector<TokenId> tokens;   // batch x seq
  std::vector<TokenId> targets;  // empty, or batch x seq with kIgnoreTarget for unscored positions

  void validate(const ModelConfig& cfg) const;
  int positions() const { return batch * seq; }
};

// A learned additive correction to selected projection matrices (LoRA).
// forward() runs once per model forward for every adapted projection and may
// cache whatever backward() needs.
template <typename Real>
class ProjectionAdapter {
 public:
  virtual ~ProjectionAdapter() = default;
  virtual bool adapts(int layer, Projection p) const = 0;
  // y (rows x out) += delta(x), x is rows x in
  virtual void forward(int layer, Projection p, std::span<const Real> x, std::span<Real> y, int rows) = 0;
  // dx += J^T dy; accumulates the adapter's own gradients
  virtual void backward(int layer, Projection p, std::span<const Real> x, std::span<const Real> dy,
                        std::span<Real> dx, int rows) = 0;
};

enum class LogitScope {
  All,      // logits for every position
  Targets,  // only positions whose target is not kIgnoreTarget
};

template <typename Real>
struct ForwardOptions {
  LogitScope scope = LogitScope::All;
  ProjectionAdapter<Real>* adapter = nullptr;
};

template <typename Real>
struct BackwardOptions {
  Real loss_scale = Real(1);
  ProjectionAdapter<Real>* adapter = nullptr;
};

template <typename Real>
struct LayerActivations {
  std::vector<Real> ln1, ln1_mean, ln1_rstd;
  std::vector<Real> qkv, att, atty;
  std::vector<Real> resid2;
  std::vector<Real> ln2, ln2_mean, ln2_rstd;
  std::vector<Real> fch, fch_gelu;
  std::vector<Real> resid3;
};

template <typename Real>
class ActivationCache {
 public:
  // rows x vocab
  std::span<const Real> logits() const { return logits_; }
  // flat (b * seq + s) position of every logits row
  std::span<const int> logit_positions() const { return positions_; }
  int rows() const { return static_cast<int>(positions_.size()); }
  bool valid() const { return valid_; }
  void invalidate() { valid_ = false; }

 private:
  template <typename R>
  friend R forward(const ParameterSet<R>&, const TokenBatch&, ActivationCache<R>&, const ForwardOptions<R>&);
  template <typename R>
  friend void backward(const ParameterSet<R>&, const TokenBatch&, ActivationCache<R>&, ParameterSet<R>*,
                       const BackwardOptions<R>&);

  bool valid_ = false;
  ModelConfig cfg_;
  std::vector<TokenId> tokens_;
  std::vector<TokenId> targets_;
  int batch_ = 0;
  int seq_ = 0;
  LogitScope scope_ = LogitScope::All;
  ProjectionAdapter<Real>* adapter_ = nullptr;
  std::vector<Real> encoded_;
  std::vector<LayerActivations<Real>> layers_;
  std::vector<Real> lnf_, lnf_mean_, lnf_rstd_;
  std::vector<int> positions_;
  std::vector<Real> logits_;
  std::vector<double> lse_;
};

// Runs the model and fills `cache`. Returns the mean cross-entropy over the
// targeted positions, or NaN when the batch has no targets.
template <typename Real>
Real forward(const ParameterSet<Real>& w, const TokenBatch& batch, ActivationCache<Real>& cache,
             const ForwardOptions<Real>& opts = {});

// Accumulates d(loss_scale * loss)/dw into *grads (pass nullptr to only drive
// the adapter). Requires a forward() on the same batch and weights.
template <typename Real>
void backward(const ParameterSet<Real>& w, const TokenBatch& batch, ActivationCache<Real>& cache,
              ParameterSet<Real>* grads, const BackwardOptions<Real>& opts = {});

// Mean of -log softmax(row)[target] over rows whose target is not ignored.
template <typename Real>
Real cross_entropy(std::span<const Real> logits, int vocab, std::span<const TokenId> targets);

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w);
ModelWeights load_checkpoint(const std::filesystem::path& path);

inline constexpr char kCheckpointMagic[8] = {'T', 'L', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 8 + 6 * 4;

}  // namespace tinyllm
