// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "binary_io.hpp"
#include "nn_ops.hpp"
#include "tinyllm/error.hpp"
#include "tinyllm/kernels.hpp"

namespace tinyllm {

void QuantScheme::validate() const {
  if (bits != 2 && bits != 4) throw Error("quantization bits must be 2 or 4, got " + std::to_string(bits));
  if (block_size < 1 || block_size > 4096) throw Error("quantization block size must be in [1, 4096]");
}

QuantizedTensor quantize_tensor(std::span<const float> values, const QuantScheme& s) {
  s.validate();
  QuantizedTensor q;
  q.numel = values.size();
  const std::size_t bs = s.block_size;
  const std::size_t nblocks = (values.size() + bs - 1) / bs;
  const std::size_t bytes = s.packed_block_bytes();
  q.scale.resize(nblocks);
  q.min.resize(nblocks);
  q.packed.assign(nblocks * bytes, 0);
  const int levels = s.levels();
  for (std::size_t b = 0; b < nblocks; ++b) {
    const std::size_t lo = b * bs;
    const std::size_t hi = std::min(values.size(), lo + bs);
    const auto [mn, mx] = std::minmax_element(values.begin() + lo, values.begin() + hi);
    const float vmin = *mn;
    const float scale = *mx == *mn ? 1.0f : (*mx - *mn) / static_cast<float>(levels);
    q.scale[b] = scale;
    q.min[b] = vmin;
    std::uint8_t* out = q.packed.data() + b * bytes;
    for (std::size_t i = lo; i < hi; ++i) {
      const long code = std::lround((values[i] - vmin) / scale);
      const auto c = static_cast<unsigned>(std::clamp<long>(code, 0, levels));
      const std::size_t bit = (i - lo) * s.bits;
      out[bit / 8] |= static_cast<std::uint8_t>(c << (bit % 8));
    }
  }
  return q;
}

unsigned quant_code(const QuantizedTensor& q, const QuantScheme& s, std::size_t index) {
  const std::size_t b = index / s.block_size;
  const std::size_t bit = (index % s.block_size) * s.bits;
  const std::uint8_t byte = q.packed[b * s.packed_block_bytes() + bit / 8];
  return (byte >> (bit % 8)) & static_cast<unsigned>(s.levels());
}

void dequantize_tensor(const QuantizedTensor& q, const QuantScheme& s, std::span<float> out) {
  if (out.size() != q.numel) throw Error("dequantize: output size mismatch");
  for (std::size_t i = 0; i < q.numel; ++i) {
    const std::size_t b = i / s.block_size;
    out[i] = q.min[b] + static_cast<float>(quant_code(q, s, i)) * q.scale[b];
  }
}

bool is_quantized_tensor(const TensorInfo& t) {
  return t.name == "token_embedding" || (t.matrix() && t.name.ends_with(".w"));
}

std::uint64_t quantized_file_size(const ModelConfig& cfg, const QuantScheme& s) {
  std::uint64_t size = kQuantHeaderBytes;
  for (const auto& t : tensor_layout(cfg)) {
    size += 1;
    if (is_quantized_tensor(t)) {
      const std::uint64_t blocks = (t.numel + s.block_size - 1) / s.block_size;
      size += blocks * (8 + s.packed_block_bytes());
    } else {
      size += 4ull * t.numel;
    }
  }
  return size;
}

void quantize_model(const ModelWeights& w, const QuantScheme& s, const std::filesystem::path& out_path) {
  s.validate();
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write quantized model " + out_path.string());
  const auto& cfg = w.config();
  out.write(kQuantMagic, 8);
  io::write_u32(out, static_cast<std::uint32_t>(s.bits));
  io::write_u32(out, static_cast<std::uint32_t>(s.block_size));
  for (const int v : {cfg.layers, cfg.channels, cfg.vocab, cfg.context, cfg.heads}) {
    io::write_u32(out, static_cast<std::uint32_t>(v));
  }
  for (const auto& t : w.layout()) {
    if (!is_quantized_tensor(t)) {
      io::write_u8(out, 0);
      io::write_f32_array(out, w.tensor(t));
      continue;
    }
    io::write_u8(out, 1);
    const auto q = quantize_tensor(w.tensor(t), s);
    const std::size_t bytes = s.packed_block_bytes();
    for (std::size_t b = 0; b < q.blocks(); ++b) {
      io::write_f32(out, q.scale[b]);
      io::write_f32(out, q.min[b]);
      out.write(reinterpret_cast<const char*>(q.packed.data() + b * bytes), static_cast<std::streamsize>(bytes));
    }
  }
  if (!out) throw Error("failed writing quantized model " + out_path.string());
}

ModelWeights dequantized_weights(const ModelWeights& w, const QuantScheme& s) {
  ModelWeights out = w;
  for (const auto& t : w.layout()) {
    if (is_quantized_tensor(t)) dequantize_tensor(quantize_tensor(w.tensor(t), s), s, out.tensor(t));
  }
  return out;
}

namespace {

LoadedModel load_quantized(const std::filesystem::path& path, std::ifstream& in, std::uint64_t actual) {
  QuantScheme s;
  s.bits = static_cast<int>(io::read_u32(in));
  s.block_size = static_cast<int>(io::read_u32(in));
  ModelConfig cfg;
  cfg.layers = static_cast<int>(io::read_u32(in));
  cfg.channels = static_cast<int>(io::read_u32(in));
  cfg.vocab = static_cast<int>(io::read_u32(in));
  cfg.context = static_cast<int>(io::read_u32(in));
  cfg.heads = static_cast<int>(io::read_u32(in));
  if (!in) throw Error("truncated quantized model header in " + path.string());
  s.validate();
  cfg.validate();
  const auto expected = quantized_file_size(cfg, s);
  if (actual != expected) {
    throw Error("quantized model " + path.string() + " size mismatch: expected " + std::to_string(expected) +
                " bytes, got " + std::to_string(actual));
  }
  LoadedModel m{ModelWeights(cfg), s, actual};
  const std::size_t bytes = s.packed_block_bytes();
  for (const auto& t : m.weights.layout()) {
    const auto tag = io::read_u8(in);
    const bool quantized = is_quantized_tensor(t);
    if (tag != (quantized ? 1 : 0)) throw Error("unexpected storage tag for " + t.name + " in " + path.string());
    if (!quantized) {
      io::read_f32_array(in, m.weights.tensor(t));
      continue;
    }
    QuantizedTensor q;
    q.numel = t.numel;
    const std::size_t blocks = (t.numel + s.block_size - 1) / s.block_size;
    q.scale.resize(blocks);
    q.min.resize(blocks);
    q.packed.resize(blocks * bytes);
    for (std::size_t b = 0; b < blocks; ++b) {
      q.scale[b] = io::read_f32(in);
      q.min[b] = io::read_f32(in);
      in.read(reinterpret_cast<char*>(q.packed.data() + b * bytes), static_cast<std::streamsize>(bytes));
    }
    dequantize_tensor(q, s, m.weights.tensor(t));
  }
  if (!in) throw Error("truncated quantized model " + path.string());
  return m;
}

}  // namespace

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model " + path.string());
  const auto actual = std::filesystem::file_size(path);
  char magic[8] = {};
  in.read(magic, 8);
  if (!in) throw Error("model file " + path.string() + " is too short (" + std::to_string(actual) + " bytes)");
  if (std::memcmp(magic, kQuantMagic, 8) == 0) return load_quantized(path, in, actual);
  if (std::memcmp(magic, kCheckpointMagic, 8) == 0) {
    in.close();
    return LoadedModel{load_checkpoint(path), std::nullopt, actual};
  }
  throw Error("unrecognized model magic in " + path.string());
}

DecoderSession::DecoderSession(const ModelWeights& w) : w_(&w) {
  const auto& cfg = w.config();
  const std::size_t tc = static_cast<std::size_t>(cfg.context) * cfg.channels;
  keys_.assign(cfg.layers, std::vector<float>(tc));
  values_.assign(cfg.layers, std::vector<float>(tc));
  logits_.resize(cfg.vocab);
  scores_.resize(cfg.context);
}

std::span<const float> DecoderSession::append(std::span<const TokenId> tokens) {
  const auto& cfg = w_->config();
  const int n = static_cast<int>(tokens.size());
  if (n == 0) throw Error("decoder: nothing to append");
  if (position_ + n > cfg.context) {
    throw Error("decoder: context of " + std::to_string(cfg.context) + " tokens exceeded");
  }
  const int C = cfg.channels, H = cfg.heads, hs = C / H;
  const std::size_t nc = static_cast<std::size_t>(n) * C;
  x_.resize(nc);
  ln_.resize(nc);
  mean_.resize(n);
  rstd_.resize(n);
  qkv_.resize(nc * 3);
  atty_.resize(nc);
  tmp_.resize(nc);
  fch_.resize(nc * 4);
  fch_gelu_.resize(nc * 4);

  const auto wte = w_->token_embedding();
  const auto wpe = w_->position_embedding();
  for (int i = 0; i < n; ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg.vocab) throw Error("decoder: token id outside the vocabulary");
    const float* te = wte.data() + static_cast<std::size_t>(tokens[i]) * C;
    const float* pe = wpe.data() + static_cast<std::size_t>(position_ + i) * C;
    float* x = x_.data() + static_cast<std::size_t>(i) * C;
    for (int c = 0; c < C; ++c) x[c] = te[c] + pe[c];
  }

  const float scale = 1.0f / std::sqrt(static_cast<float>(hs));
  for (int l = 0; l < cfg.layers; ++l) {
    const auto blk = w_->block(l);
    ops::layernorm_forward(ln_.data(), mean_.data(), rstd_.data(), x_.data(), blk.ln1_gain.data(),
                           blk.ln1_bias.data(), n, C);
    ops::linear_forward(qkv_.data(), ln_.data(), blk.qkv_weight.data(), blk.qkv_bias.data(), n, C, 3 * C);
    float* K = keys_[l].data();
    float* V = values_[l].data();
    for (int i = 0; i < n; ++i) {
      const float* row = qkv_.data() + static_cast<std::size_t>(i) * 3 * C;
      std::copy(row + C, row + 2 * C, K + static_cast<std::size_t>(position_ + i) * C);
      std::copy(row + 2 * C, row + 3 * C, V + static_cast<std::size_t>(position_ + i) * C);
    }
    for (int i = 0; i < n; ++i) {
      const int pos = position_ + i;
      for (int h = 0; h < H; ++h) {
        const float* q = qkv_.data() + static_cast<std::size_t>(i) * 3 * C + h * hs;
        float maxv = -INFINITY;
        for (int j = 0; j <= pos; ++j) {
          const float* k = K + static_cast<std::size_t>(j) * C + h * hs;
          float dot = 0;
          for (int d = 0; d < hs; ++d) dot += q[d] * k[d];
          scores_[j] = dot * scale;
          maxv = std::max(maxv, scores_[j]);
        }
        float sum = 0;
        for (int j = 0; j <= pos; ++j) {
          scores_[j] = std::exp(scores_[j] - maxv);
          sum += scores_[j];
        }
        const float inv = 1.0f / sum;
        float* o = atty_.data() + static_cast<std::size_t>(i) * C + h * hs;
        std::fill(o, o + hs, 0.0f);
        for (int j = 0; j <= pos; ++j) {
          const float a = scores_[j] * inv;
          const float* v = V + static_cast<std::size_t>(j) * C + h * hs;
          for (int d = 0; d < hs; ++d) o[d] += a * v[d];
        }
      }
    }
    ops::linear_forward(tmp_.data(), atty_.data(), blk.proj_weight.data(), blk.proj_bias.data(), n, C, C);
    for (std::size_t i = 0; i < nc; ++i) x_[i] += tmp_[i];
    ops::layernorm_forward(ln_.data(), mean_.data(), rstd_.data(), x_.data(), blk.ln2_gain.data(),
                           blk.ln2_bias.data(), n, C);
    ops::linear_forward(fch_.data(), ln_.data(), blk.up_weight.data(), blk.up_bias.data(), n, C, 4 * C);
    ops::gelu_forward(fch_gelu_.data(), fch_.data(), nc * 4);
    ops::linear_forward(tmp_.data(), fch_gelu_.data(), blk.down_weight.data(), blk.down_bias.data(), n, 4 * C, C);
    for (std::size_t i = 0; i < nc; ++i) x_[i] += tmp_[i];
  }
  position_ += n;

  const float* last = x_.data() + static_cast<std::size_t>(n - 1) * C;
  ops::layernorm_forward(ln_.data(), mean_.data(), rstd_.data(), last, w_->final_gain().data(),
                         w_->final_bias().data(), 1, C);
  std::fill(logits_.begin(), logits_.end(), 0.0f);
  kernels::gemm_nt(1, cfg.vocab, C, ln_.data(), wte.data(), logits_.data());
  return logits_;
}

void apply_repeat_penalty(std::span<float> logits, std::span<const TokenId> history, float penalty, int window) {
  if (penalty == 1.0f || history.empty() || window <= 0) return;
  const std::size_t start = history.size() > static_cast<std::size_t>(window) ? history.size() - window : 0;
  std::unordered_set<TokenId> seen;
  for (std::size_t i = start; i < history.size(); ++i) {
    const TokenId id = history[i];
    if (id < 0 || static_cast<std::size_t>(id) >= logits.size() || !seen.insert(id).second) continue;
    float& v = logits[id];
    v = v > 0 ? v / penalty : v * penalty;
  }
}

TokenId sample_token(std::span<const float> logits, double temperature, std::mt19937_64& rng) {
  if (logits.empty()) throw Error("cannot sample from empty logits");
  const auto argmax = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  if (temperature <= 0) return argmax;
  const double maxv = logits[argmax];
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - maxv) / temperature);
    sum += p[i];
  }
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * sum;
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return argmax;
}

void GenerationParams::validate() const {
  if (!(temperature >= 0) || !std::isfinite(temperature)) throw Error("temperature must be >= 0");
  if (!(repeat_penalty >= 1.0f)) throw Error("repeat penalty must be >= 1");
  if (repeat_window < 0) throw Error("repeat window must be >= 0");
  if (max_new_tokens < 1) throw Error("max_new_tokens must be >= 1");
  if (threads < 0) throw Error("thread count must be >= 0");
}

GenerationReport generate(const ModelWeights& w, const Tokenizer& tok, const std::string& prompt,
                          const GenerationParams& p) {
  p.validate();
  if (p.threads > 0) kernels::set_thread_limit(p.threads);
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const int T = w.config().context;
  std::vector<TokenId> history = tok.encode(prompt);
  if (history.empty()) history.push_back(tok.eot_id());
  if (static_cast<int>(history.size()) >= T) {
    throw Error("prompt of " + std::to_string(history.size()) + " tokens does not fit the " + std::to_string(T) +
                "-token context");
  }
  GenerationReport r;
  r.prompt_tokens = static_cast<int>(history.size());
  DecoderSession session(w);
  std::span<const float> logits = session.append(history);
  const auto t1 = clock::now();
  std::mt19937_64 rng(p.seed);
  std::vector<float> adjusted;
  for (int i = 0; i < p.max_new_tokens; ++i) {
    adjusted.assign(logits.begin(), logits.end());
    apply_repeat_penalty(adjusted, history, p.repeat_penalty, p.repeat_window);
    const TokenId next = sample_token(adjusted, p.temperature, rng);
    r.tokens.push_back(next);
    ++r.generated_tokens;
    if (next == tok.eot_id()) {
      r.stopped_at_eot = true;
      break;
    }
    history.push_back(next);
    if (i + 1 == p.max_new_tokens) break;
    if (session.position() == T) {
      session.reset();
      const auto window = std::span<const TokenId>(history).last(T);
      session.append(window.first(T - 1));
    }
    logits = session.append(std::span<const TokenId>(&history.back(), 1));
  }
  const auto t2 = clock::now();
  std::vector<TokenId> text_ids = r.tokens;
  if (r.stopped_at_eot) text_ids.pop_back();
  r.generated_text = tok.decode(text_ids);
  r.prompt_eval_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.eval_seconds = std::chrono::duration<double>(t2 - t1).count();
  r.wall_time = std::chrono::duration<double>(t2 - t0).count();
  r.prompt_eval_rate = r.prompt_eval_seconds > 0 ? r.prompt_tokens / r.prompt_eval_seconds : 0;
  r.eval_rate = r.eval_seconds > 0 ? r.generated_tokens / r.eval_seconds : 0;
  return r;
}

}  // namespace tinyllm
