// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "binary_io.hpp"
#include "nn_ops.hpp"
#include "tinyllm/error.hpp"

namespace tinyllm {

ModelConfig ModelConfig::family(int layers) {
  ModelConfig cfg;
  cfg.layers = layers;
  cfg.channels = 64 * layers;
  cfg.heads = layers;
  return cfg;
}

void ModelConfig::validate() const {
  if (layers < 1 || layers > 64) throw Error("model layers must be in [1, 64], got " + std::to_string(layers));
  if (channels < 1 || heads < 1 || channels % heads != 0) {
    throw Error("model channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                std::to_string(heads) + ")");
  }
  if (vocab < 1 || vocab > 65536) throw Error("vocab size must be in [1, 65536]");
  if (context < 1) throw Error("context length must be >= 1");
}

std::int64_t param_count_exact(const ModelConfig& cfg) {
  const std::int64_t C = cfg.channels;
  const std::int64_t per_block = 2 * C + (C * 3 * C + 3 * C) + (C * C + C) + 2 * C + (C * 4 * C + 4 * C) +
                                 (4 * C * C + C);
  return static_cast<std::int64_t>(cfg.vocab) * C + static_cast<std::int64_t>(cfg.context) * C +
         cfg.layers * per_block + 2 * C;
}

double param_count_empirical(int layers) {
  const double l = layers;
  return 0.05 * l * l * l + 3.2 * l;
}

std::string_view projection_name(Projection p) {
  switch (p) {
    case Projection::Qkv:
      return "qkv";
    case Projection::AttnProj:
      return "attn_proj";
    case Projection::FfnUp:
      return "ffn_up";
    case Projection::FfnDown:
      return "ffn_down";
  }
  return "?";
}

std::optional<Projection> parse_projection(std::string_view name) {
  for (const auto p : kAllProjections) {
    if (projection_name(p) == name) return p;
  }
  return std::nullopt;
}

std::pair<int, int> projection_shape(const ModelConfig& cfg, Projection p) {
  const int C = cfg.channels;
  switch (p) {
    case Projection::Qkv:
      return {C, 3 * C};
    case Projection::AttnProj:
      return {C, C};
    case Projection::FfnUp:
      return {C, 4 * C};
    case Projection::FfnDown:
      return {4 * C, C};
  }
  return {0, 0};
}

std::vector<TensorInfo> tensor_layout(const ModelConfig& cfg) {
  const std::size_t C = cfg.channels;
  std::vector<TensorInfo> layout;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (const auto d : shape) n *= d;
    layout.push_back(TensorInfo{std::move(name), std::move(shape), offset, n});
    offset += n;
  };
  add("token_embedding", {static_cast<std::size_t>(cfg.vocab), C});
  add("position_embedding", {static_cast<std::size_t>(cfg.context), C});
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    add(p + "ln1.g", {C});
    add(p + "ln1.b", {C});
    add(p + "qkv.w", {C, 3 * C});
    add(p + "qkv.b", {3 * C});
    add(p + "proj.w", {C, C});
    add(p + "proj.b", {C});
    add(p + "ln2.g", {C});
    add(p + "ln2.b", {C});
    add(p + "up.w", {C, 4 * C});
    add(p + "up.b", {4 * C});
    add(p + "down.w", {4 * C, C});
    add(p + "down.b", {C});
  }
  add("ln_f.g", {C});
  add("ln_f.b", {C});
  return layout;
}

template <typename T>
std::span<T> BlockTensors<T>::weight(Projection p) const {
  switch (p) {
    case Projection::Qkv:
      return qkv_weight;
    case Projection::AttnProj:
      return proj_weight;
    case Projection::FfnUp:
      return up_weight;
    case Projection::FfnDown:
      return down_weight;
  }
  return {};
}

template <typename T>
std::span<T> BlockTensors<T>::bias(Projection p) const {
  switch (p) {
    case Projection::Qkv:
      return qkv_bias;
    case Projection::AttnProj:
      return proj_bias;
    case Projection::FfnUp:
      return up_bias;
    case Projection::FfnDown:
      return down_bias;
  }
  return {};
}

template struct BlockTensors<float>;
template struct BlockTensors<const float>;
template struct BlockTensors<double>;
template struct BlockTensors<const double>;

template <typename Real>
ParameterSet<Real>::ParameterSet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  auto layout = std::make_shared<std::vector<TensorInfo>>(tensor_layout(cfg_));
  data_.assign(layout->back().offset + layout->back().numel, Real(0));
  layout_ = std::move(layout);
}

namespace {

template <typename T, typename Set>
BlockTensors<T> block_view(Set& set, int layer) {
  if (layer < 0 || layer >= set.config().layers) throw Error("block index out of range");
  const std::size_t base = 2 + static_cast<std::size_t>(layer) * 12;
  const auto& layout = set.layout();
  auto t = [&](std::size_t k) { return set.tensor(layout[base + k]); };
  return BlockTensors<T>{t(0), t(1), t(2), t(3), t(4), t(5), t(6), t(7), t(8), t(9), t(10), t(11)};
}

}  // namespace

template <typename Real>
BlockTensors<Real> ParameterSet<Real>::block(int layer) {
  return block_view<Real>(*this, layer);
}

template <typename Real>
BlockTensors<const Real> ParameterSet<Real>::block(int layer) const {
  return block_view<const Real>(*this, layer);
}

template <typename Real>
void ParameterSet<Real>::zero() {
  std::fill(data_.begin(), data_.end(), Real(0));
}

template class ParameterSet<float>;
template class ParameterSet<double>;

ModelWeights init_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelWeights w(cfg);
  std::mt19937_64 rng(seed);
  const float residual_std = 0.02f / std::sqrt(2.0f * static_cast<float>(cfg.layers));
  for (const auto& t : w.layout()) {
    auto values = w.tensor(t);
    const bool gain = t.name.ends_with(".g");
    if (t.matrix()) {
      const bool residual = t.name.ends_with("proj.w") || t.name.ends_with("down.w");
      std::normal_distribution<float> dist(0.0f, residual ? residual_std : 0.02f);
      for (auto& v : values) v = dist(rng);
    } else {
      std::fill(values.begin(), values.end(), gain ? 1.0f : 0.0f);
    }
  }
  return w;
}

void TokenBatch::validate(const ModelConfig& cfg) const {
  if (batch < 1 || seq < 1) throw Error("token batch must have positive batch and sequence sizes");
  if (seq > cfg.context) {
    throw Error("sequence length " + std::to_string(seq) + " exceeds context " + std::to_string(cfg.context));
  }
  if (tokens.size() != static_cast<std::size_t>(batch) * seq) throw Error("token batch shape mismatch");
  for (const auto t : tokens) {
    if (t < 0 || t >= cfg.vocab) throw Error("token id " + std::to_string(t) + " outside the vocabulary");
  }
  if (!targets.empty()) {
    if (targets.size() != tokens.size()) throw Error("target shape mismatch");
    for (const auto t : targets) {
      if (t != kIgnoreTarget && (t < 0 || t >= cfg.vocab)) {
        throw Error("target id " + std::to_string(t) + " outside the vocabulary");
      }
    }
  }
}

template <typename Real>
Real cross_entropy(std::span<const Real> logits, int vocab, std::span<const TokenId> targets) {
  if (logits.size() != targets.size() * static_cast<std::size_t>(vocab)) throw Error("logits/targets shape mismatch");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const TokenId t = targets[r];
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= vocab) throw Error("target id " + std::to_string(t) + " outside the vocabulary");
    const Real* row = logits.data() + r * vocab;
    double maxv = row[0];
    for (int i = 1; i < vocab; ++i) maxv = std::max(maxv, static_cast<double>(row[i]));
    double sum = 0.0;
    for (int i = 0; i < vocab; ++i) sum += std::exp(static_cast<double>(row[i]) - maxv);
    total += maxv + std::log(sum) - static_cast<double>(row[t]);
    ++counted;
  }
  if (counted == 0) return std::numeric_limits<Real>::quiet_NaN();
  return static_cast<Real>(total / static_cast<double>(counted));
}

template float cross_entropy<float>(std::span<const float>, int, std::span<const TokenId>);
template double cross_entropy<double>(std::span<const double>, int, std::span<const TokenId>);

template <typename Real>
Real forward(const ParameterSet<Real>& w, const TokenBatch& batch, ActivationCache<Real>& cache,
             const ForwardOptions<Real>& opts) {
  const ModelConfig& cfg = w.config();
  batch.validate(cfg);
  cache.valid_ = false;
  const int B = batch.batch, S = batch.seq, N = B * S;
  const int C = cfg.channels, H = cfg.heads, V = cfg.vocab, L = cfg.layers;
  const std::size_t NC = static_cast<std::size_t>(N) * C;

  cache.cfg_ = cfg;
  cache.tokens_ = batch.tokens;
  cache.targets_ = batch.targets;
  cache.batch_ = B;
  cache.seq_ = S;
  cache.scope_ = opts.scope;
  cache.adapter_ = opts.adapter;

  cache.encoded_.resize(NC);
  const auto wte = w.token_embedding();
  const auto wpe = w.position_embedding();
  for (int b = 0; b < B; ++b) {
    for (int s = 0; s < S; ++s) {
      const int n = b * S + s;
      const Real* te = wte.data() + static_cast<std::size_t>(batch.tokens[n]) * C;
      const Real* pe = wpe.data() + static_cast<std::size_t>(s) * C;
      Real* x = cache.encoded_.data() + static_cast<std::size_t>(n) * C;
      for (int c = 0; c < C; ++c) x[c] = te[c] + pe[c];
    }
  }

  cache.layers_.resize(L);
  const Real* residual = cache.encoded_.data();
  for (int l = 0; l < L; ++l) {
    auto& a = cache.layers_[l];
    const auto blk = w.block(l);
    a.ln1.resize(NC);
    a.ln1_mean.resize(N);
    a.ln1_rstd.resize(N);
    a.qkv.resize(NC * 3);
    a.att.resize(static_cast<std::size_t>(B) * H * S * S);
    a.atty.resize(NC);
    a.resid2.resize(NC);
    a.ln2.resize(NC);
    a.ln2_mean.resize(N);
    a.ln2_rstd.resize(N);
    a.fch.resize(NC * 4);
    a.fch_gelu.resize(NC * 4);
    a.resid3.resize(NC);

    auto project = [&](Projection p, const Real* in, Real* out, int ic, int oc) {
      ops::linear_forward(out, in, blk.weight(p).data(), blk.bias(p).data(), N, ic, oc);
      if (opts.adapter && opts.adapter->adapts(l, p)) {
        opts.adapter->forward(l, p, std::span<const Real>(in, static_cast<std::size_t>(N) * ic),
                              std::span<Real>(out, static_cast<std::size_t>(N) * oc), N);
      }
    };

    ops::layernorm_forward(a.ln1.data(), a.ln1_mean.data(), a.ln1_rstd.data(), residual, blk.ln1_gain.data(),
                           blk.ln1_bias.data(), N, C);
    project(Projection::Qkv, a.ln1.data(), a.qkv.data(), C, 3 * C);
    for (int b = 0; b < B; ++b) {
      ops::attention_forward(a.atty.data() + static_cast<std::size_t>(b) * S * C,
                             a.att.data() + static_cast<std::size_t>(b) * H * S * S,
                             a.qkv.data() + static_cast<std::size_t>(b) * S * 3 * C, S, C, H);
    }
    project(Projection::AttnProj, a.atty.data(), a.resid2.data(), C, C);
    for (std::size_t i = 0; i < NC; ++i) a.resid2[i] += residual[i];
    ops::layernorm_forward(a.ln2.data(), a.ln2_mean.data(), a.ln2_rstd.data(), a.resid2.data(),
                           blk.ln2_gain.data(), blk.ln2_bias.data(), N, C);
    project(Projection::FfnUp, a.ln2.data(), a.fch.data(), C, 4 * C);
    ops::gelu_forward(a.fch_gelu.data(), a.fch.data(), NC * 4);
    project(Projection::FfnDown, a.fch_gelu.data(), a.resid3.data(), 4 * C, C);
    for (std::size_t i = 0; i < NC; ++i) a.resid3[i] += a.resid2[i];
    residual = a.resid3.data();
  }

  cache.lnf_.resize(NC);
  cache.lnf_mean_.resize(N);
  cache.lnf_rstd_.resize(N);
  ops::layernorm_forward(cache.lnf_.data(), cache.lnf_mean_.data(), cache.lnf_rstd_.data(), residual,
                         w.final_gain().data(), w.final_bias().data(), N, C);

  cache.positions_.clear();
  for (int n = 0; n < N; ++n) {
    const bool scored = !batch.targets.empty() && batch.targets[n] != kIgnoreTarget;
    if (opts.scope == LogitScope::All || scored) cache.positions_.push_back(n);
  }
  const int R = static_cast<int>(cache.positions_.size());
  // gather the final hidden rows that need logits, then project on the tied head
  std::vector<Real> hidden(static_cast<std::size_t>(R) * C);
  for (int r = 0; r < R; ++r) {
    std::memcpy(hidden.data() + static_cast<std::size_t>(r) * C,
                cache.lnf_.data() + static_cast<std::size_t>(cache.positions_[r]) * C, sizeof(Real) * C);
  }
  cache.logits_.assign(static_cast<std::size_t>(R) * V, Real(0));
  if (R > 0) kernels::gemm_nt(R, V, C, hidden.data(), wte.data(), cache.logits_.data());
  cache.valid_ = true;

  cache.lse_.resize(R);
  for (int r = 0; r < R; ++r) {
    const Real* row = cache.logits_.data() + static_cast<std::size_t>(r) * V;
    Real maxv = row[0];
    for (int i = 1; i < V; ++i) maxv = std::max(maxv, row[i]);
    double sum = 0.0;
    for (int i = 0; i < V; ++i) sum += std::exp(row[i] - maxv);
    cache.lse_[r] = static_cast<double>(maxv) + std::log(sum);
  }
  if (batch.targets.empty()) return std::numeric_limits<Real>::quiet_NaN();
  double total = 0.0;
  std::size_t counted = 0;
  for (int r = 0; r < R; ++r) {
    const TokenId t = batch.targets[cache.positions_[r]];
    if (t == kIgnoreTarget) continue;
    total += cache.lse_[r] - static_cast<double>(cache.logits_[static_cast<std::size_t>(r) * V + t]);
    ++counted;
  }
  if (counted == 0) return std::numeric_limits<Real>::quiet_NaN();
  return static_cast<Real>(total / static_cast<double>(counted));
}

template <typename Real>
void backward(const ParameterSet<Real>& w, const TokenBatch& batch, ActivationCache<Real>& cache,
              ParameterSet<Real>* grads, const BackwardOptions<Real>& opts) {
  const ModelConfig& cfg = w.config();
  if (!cache.valid_) throw Error("backward requires a fresh forward pass (activation cache missing)");
  if (!(cache.cfg_ == cfg) || cache.tokens_ != batch.tokens || cache.targets_ != batch.targets) {
    throw Error("stale activation cache: forward ran on a different batch or model");
  }
  if (batch.targets.empty()) throw Error("backward needs targets");
  if (opts.adapter != cache.adapter_) throw Error("backward adapter differs from the forward adapter");
  if (grads && !(grads->config() == cfg)) throw Error("gradient buffer does not match the model");

  const int B = batch.batch, S = batch.seq, N = B * S;
  const int C = cfg.channels, H = cfg.heads, V = cfg.vocab, L = cfg.layers;
  const std::size_t NC = static_cast<std::size_t>(N) * C;
  const int R = cache.rows();

  std::size_t counted = 0;
  for (const auto t : batch.targets) counted += t != kIgnoreTarget;
  if (counted == 0) return;
  const Real row_scale = opts.loss_scale / static_cast<Real>(counted);

  // dlogits = (softmax - onehot) * scale / count on scored rows
  std::vector<Real> dlogits(cache.logits_);
  std::vector<Real> hidden(static_cast<std::size_t>(R) * C);
  for (int r = 0; r < R; ++r) {
    Real* row = dlogits.data() + static_cast<std::size_t>(r) * V;
    const int pos = cache.positions_[r];
    const TokenId t = batch.targets[pos];
    if (t == kIgnoreTarget) {
      std::fill(row, row + V, Real(0));
    } else {
      const Real lse = static_cast<Real>(cache.lse_[r]);
      for (int i = 0; i < V; ++i) row[i] = std::exp(row[i] - lse) * row_scale;
      row[t] -= row_scale;
    }
    std::memcpy(hidden.data() + static_cast<std::size_t>(r) * C,
                cache.lnf_.data() + static_cast<std::size_t>(pos) * C, sizeof(Real) * C);
  }

  const auto wte = w.token_embedding();
  std::vector<Real> dhidden(static_cast<std::size_t>(R) * C, Real(0));
  kernels::gemm_nn(R, C, V, dlogits.data(), wte.data(), dhidden.data());
  if (grads) kernels::gemm_tn(V, C, R, dlogits.data(), hidden.data(), grads->token_embedding().data());

  std::vector<Real> dlnf(NC, Real(0));
  for (int r = 0; r < R; ++r) {
    Real* dst = dlnf.data() + static_cast<std::size_t>(cache.positions_[r]) * C;
    const Real* src = dhidden.data() + static_cast<std::size_t>(r) * C;
    for (int c = 0; c < C; ++c) dst[c] += src[c];
  }

  std::vector<Real> dresidual(NC, Real(0));
  const Real* last = L > 0 ? cache.layers_[L - 1].resid3.data() : cache.encoded_.data();
  ops::layernorm_backward(dresidual.data(), grads ? grads->final_gain().data() : nullptr,
                          grads ? grads->final_bias().data() : nullptr, dlnf.data(), last, w.final_gain().data(),
                          cache.lnf_mean_.data(), cache.lnf_rstd_.data(), N, C);

  std::vector<Real> dresid2(NC), dln(NC), datty(NC), dqkv(NC * 3), dfch(NC * 4), dfch_gelu(NC * 4);
  std::vector<Real> scratch(S);
  for (int l = L - 1; l >= 0; --l) {
    const auto& a = cache.layers_[l];
    const auto blk = w.block(l);
    BlockTensors<Real> g{};
    if (grads) g = grads->block(l);
    const Real* residual_in = l == 0 ? cache.encoded_.data() : cache.layers_[l - 1].resid3.data();

    auto project_back = [&](Projection p, const Real* in, const Real* dout, Real* din, int ic, int oc) {
      ops::linear_backward(din, grads ? g.weight(p).data() : nullptr, grads ? g.bias(p).data() : nullptr, dout,
                           in, blk.weight(p).data(), N, ic, oc);
      if (opts.adapter && opts.adapter->adapts(l, p)) {
        opts.adapter->backward(l, p, std::span<const Real>(in, static_cast<std::size_t>(N) * ic),
                               std::span<const Real>(dout, static_cast<std::size_t>(N) * oc),
                               std::span<Real>(din, static_cast<std::size_t>(N) * ic), N);
      }
    };

    // FFN branch: dresidual is the gradient at resid3
    std::fill(dfch_gelu.begin(), dfch_gelu.end(), Real(0));
    project_back(Projection::FfnDown, a.fch_gelu.data(), dresidual.data(), dfch_gelu.data(), 4 * C, C);
    std::fill(dfch.begin(), dfch.end(), Real(0));
    ops::gelu_backward(dfch.data(), a.fch.data(), dfch_gelu.data(), NC * 4);
    std::fill(dln.begin(), dln.end(), Real(0));
    project_back(Projection::FfnUp, a.ln2.data(), dfch.data(), dln.data(), C, 4 * C);
    dresid2 = dresidual;
    ops::layernorm_backward(dresid2.data(), grads ? g.ln2_gain.data() : nullptr,
                            grads ? g.ln2_bias.data() : nullptr, dln.data(), a.resid2.data(), blk.ln2_gain.data(),
                            a.ln2_mean.data(), a.ln2_rstd.data(), N, C);

    // attention branch
    std::fill(datty.begin(), datty.end(), Real(0));
    project_back(Projection::AttnProj, a.atty.data(), dresid2.data(), datty.data(), C, C);
    std::fill(dqkv.begin(), dqkv.end(), Real(0));
    for (int b = 0; b < B; ++b) {
      ops::attention_backward(dqkv.data() + static_cast<std::size_t>(b) * S * 3 * C,
                              datty.data() + static_cast<std::size_t>(b) * S * C,
                              a.qkv.data() + static_cast<std::size_t>(b) * S * 3 * C,
                              a.att.data() + static_cast<std::size_t>(b) * H * S * S, S, C, H, scratch.data());
    }
    std::fill(dln.begin(), dln.end(), Real(0));
    project_back(Projection::Qkv, a.ln1.data(), dqkv.data(), dln.data(), C, 3 * C);
    dresidual = dresid2;
    ops::layernorm_backward(dresidual.data(), grads ? g.ln1_gain.data() : nullptr,
                            grads ? g.ln1_bias.data() : nullptr, dln.data(), residual_in, blk.ln1_gain.data(),
                            a.ln1_mean.data(), a.ln1_rstd.data(), N, C);
  }

  if (grads) {
    auto dwte = grads->token_embedding();
    auto dwpe = grads->position_embedding();
    for (int b = 0; b < B; ++b) {
      for (int s = 0; s < S; ++s) {
        const int n = b * S + s;
        const Real* d = dresidual.data() + static_cast<std::size_t>(n) * C;
        Real* te = dwte.data() + static_cast<std::size_t>(batch.tokens[n]) * C;
        Real* pe = dwpe.data() + static_cast<std::size_t>(s) * C;
        for (int c = 0; c < C; ++c) {
          te[c] += d[c];
          pe[c] += d[c];
        }
      }
    }
  }
}

template float forward<float>(const ParameterSet<float>&, const TokenBatch&, ActivationCache<float>&,
                              const ForwardOptions<float>&);
template double forward<double>(const ParameterSet<double>&, const TokenBatch&, ActivationCache<double>&,
                                const ForwardOptions<double>&);
template void backward<float>(const ParameterSet<float>&, const TokenBatch&, ActivationCache<float>&,
                              ParameterSet<float>*, const BackwardOptions<float>&);
template void backward<double>(const ParameterSet<double>&, const TokenBatch&, ActivationCache<double>&,
                               ParameterSet<double>*, const BackwardOptions<double>&);

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto& cfg = w.config();
  out.write(kCheckpointMagic, 8);
  io::write_u32(out, kCheckpointVersion);
  io::write_u32(out, static_cast<std::uint32_t>(cfg.layers));
  io::write_u32(out, static_cast<std::uint32_t>(cfg.channels));
  io::write_u32(out, static_cast<std::uint32_t>(cfg.vocab));
  io::write_u32(out, static_cast<std::uint32_t>(cfg.context));
  io::write_u32(out, static_cast<std::uint32_t>(cfg.heads));
  io::write_f32_array(out, w.values());
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error("bad checkpoint magic in " + path.string());
  const auto version = io::read_u32(in);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint version mismatch: expected 1, got " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.layers = static_cast<int>(io::read_u32(in));
  cfg.channels = static_cast<int>(io::read_u32(in));
  cfg.vocab = static_cast<int>(io::read_u32(in));
  cfg.context = static_cast<int>(io::read_u32(in));
  cfg.heads = static_cast<int>(io::read_u32(in));
  if (!in) throw Error("truncated checkpoint header in " + path.string());
  cfg.validate();
  const auto expected = kCheckpointHeaderBytes + 4 * static_cast<std::uint64_t>(param_count_exact(cfg));
  const auto actual = std::filesystem::file_size(path);
  if (actual != expected) {
    throw Error("checkpoint " + path.string() + " size mismatch: expected " + std::to_string(expected) +
                " bytes, got " + std::to_string(actual));
  }
  ModelWeights w(cfg);
  io::read_f32_array(in, w.values());
  if (!in) throw Error("truncated checkpoint " + path.string());
  return w;
}

}  // namespace tinyllm
