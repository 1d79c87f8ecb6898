// SPDX-License-Identifier: Apache-2.0
//
// Deployment runtime: affine block quantization of the weight matrices,
// model loading from either file format, an incremental (KV-cached) decoder
// and text generation with temperature sampling and a repeat penalty.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tinyllm/model.hpp"
#include "tinyllm/tokenizer.hpp"

namespace tinyllm {

struct QuantScheme {
  int bits = 4;
  int block_size = 32;

  void validate() const;
  int levels() const { return (1 << bits) - 1; }
  std::size_t packed_block_bytes() const { return (static_cast<std::size_t>(block_size) * bits + 7) / 8; }
};

// Blocks run over the flattened tensor; the last block is zero-padded.
// Codes are packed little-endian: value i occupies bits [i*bits, (i+1)*bits).
struct QuantizedTensor {
  std::size_t numel = 0;
  std::vector<float> scale;
  std::vector<float> min;
  std::vector<std::uint8_t> packed;  // blocks x packed_block_bytes

  std::size_t blocks() const { return scale.size(); }
};

QuantizedTensor quantize_tensor(std::span<const float> values, const QuantScheme& s);
void dequantize_tensor(const QuantizedTensor& q, const QuantScheme& s, std::span<float> out);
unsigned quant_code(const QuantizedTensor& q, const QuantScheme& s, std::size_t index);

// Token embedding and the four projection matrices of every block.
bool is_quantized_tensor(const TensorInfo& t);

inline constexpr char kQuantMagic[8] = {'T', 'L', 'L', 'M', 'Q', 'N', 'T', '1'};
// magic, u32 bits, u32 block_size, u32 l, C, V, T, n_heads
inline constexpr std::size_t kQuantHeaderBytes = 36;

std::uint64_t quantized_file_size(const ModelConfig& cfg, const QuantScheme& s);
void quantize_model(const ModelWeights& w, const QuantScheme& s, const std::filesystem::path& out);
// The weights a quantized file decodes to, computed in memory.
ModelWeights dequantized_weights(const ModelWeights& w, const QuantScheme& s);

struct LoadedModel {
  ModelWeights weights;
  std::optional<QuantScheme> quant;
  std::uint64_t file_bytes = 0;
};

// Accepts f32 checkpoints and quantized files (dequantized at load).
LoadedModel load_model(const std::filesystem::path& path);

// Incremental decoder with private key/value buffers. The weights must
// outlive the session.
class DecoderSession {
 public:
  explicit DecoderSession(const ModelWeights& w);

  // Appends tokens at the next positions and returns the logits (V) of the
  // last one. Throws when the context would overflow.
  std::span<const float> append(std::span<const TokenId> tokens);
  void reset() { position_ = 0; }
  int position() const { return position_; }
  int capacity() const { return w_->config().context; }

 private:
  const ModelWeights* w_;
  int position_ = 0;
  std::vector<std::vector<float>> keys_;    // per layer T x C
  std::vector<std::vector<float>> values_;  // per layer T x C
  std::vector<float> x_, ln_, mean_, rstd_, qkv_, atty_, tmp_, fch_, fch_gelu_, scores_, logits_;
};

// For each distinct id among the last `window` history tokens: positive
// logits are divided by `penalty`, the rest multiplied by it.
void apply_repeat_penalty(std::span<float> logits, std::span<const TokenId> history, float penalty,
                          int window = 64);

// temperature 0: argmax with ties to the lowest id; otherwise a draw from
// softmax(logits / temperature).
TokenId sample_token(std::span<const float> logits, double temperature, std::mt19937_64& rng);

struct GenerationParams {
  double temperature = 0.7;
  float repeat_penalty = 1.1f;
  int repeat_window = 64;
  int max_new_tokens = 300;
  std::uint64_t seed = 1337;
  int threads = 0;  // 0 leaves the kernel thread limit untouched

  void validate() const;
};

struct GenerationReport {
  int prompt_tokens = 0;
  int generated_tokens = 0;  // includes a terminating end-of-text
  std::vector<TokenId> tokens;
  std::string generated_text;  // end-of-text excluded
  bool stopped_at_eot = false;
  double prompt_eval_seconds = 0;
  double eval_seconds = 0;
  double prompt_eval_rate = 0;  // prompt tokens / s
  double eval_rate = 0;         // generated tokens / s
  double wall_time = 0;
};

// Once the window is full, each new token is decoded over the most recent
// `context` tokens (the previous context-1 are re-encoded first).
GenerationReport generate(const ModelWeights& w, const Tokenizer& tok, const std::string& prompt,
                          const GenerationParams& p);

}  // namespace tinyllm
