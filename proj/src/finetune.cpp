// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "json.hpp"
#include "tinyllm/error.hpp"
#include "tinyllm/kernels.hpp"
#include "tinyllm/log.hpp"
#include "tinyllm/random.hpp"
#include "tinyllm/trainer.hpp"

namespace tinyllm {

void FinetuneRecord::validate() const {
  if (instruction.empty()) throw Error("fine-tune record has an empty instruction");
  if (response.empty()) throw Error("fine-tune record has an empty response");
}

std::vector<FinetuneRecord> read_records_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open records file " + path.string());
  std::vector<FinetuneRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed JSON at " + where + ": " + e.what());
    }
    if (!j.is_object()) throw Error("expected a JSON object at " + where);
    auto field = [&](const char* key, bool required) -> std::string {
      const auto it = j.find(key);
      if (it == j.end()) {
        if (required) throw Error("missing key \"" + std::string(key) + "\" at " + where);
        return {};
      }
      if (!it->is_string()) throw Error("key \"" + std::string(key) + "\" must be a string at " + where);
      return it->get<std::string>();
    };
    FinetuneRecord rec{field("instruction", true), field("input", false), field("output", true)};
    try {
      rec.validate();
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " at " + where);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_records_jsonl(const std::filesystem::path& path, const std::vector<FinetuneRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write records file " + path.string());
  for (const auto& r : records) {
    out << nlohmann::json{{"instruction", r.instruction}, {"input", r.input}, {"output", r.response}}.dump() << '\n';
  }
}

std::string render_prompt(const FinetuneRecord& rec, bool include_response) {
  std::string text = "### Instruction:\n" + rec.instruction + "\n\n";
  if (!rec.input.empty()) text += "### Input:\n" + rec.input + "\n\n";
  text += "### Response:\n";
  if (include_response) text += rec.response + std::string(kEndOfTextMarker);
  return text;
}

FinetuneSplit build_ft_dataset(const std::vector<FinetuneRecord>& records, std::array<double, 3> ratios,
                               std::uint64_t seed) {
  if (records.size() < 3) throw Error("need at least 3 records to split, got " + std::to_string(records.size()));
  for (const double r : ratios) {
    if (!(r > 0)) throw Error("split ratios must be positive");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-6) throw Error("split ratios must sum to 1");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const double n = static_cast<double>(records.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * ratios[0]));
  const auto n_val = std::min(records.size() - n_train, static_cast<std::size_t>(std::llround(n * ratios[1])));
  FinetuneSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
    dst.push_back(records[order[i]]);
  }
  return split;
}

void LoraConfig::validate() const {
  if (rank < 1) throw Error("lora rank must be >= 1");
  if (!(alpha > 0)) throw Error("lora alpha must be > 0");
  if (dropout < 0 || dropout >= 1) throw Error("lora dropout must be in [0, 1)");
  if (targets.empty()) throw Error("lora needs at least one target projection");
  if (!(lr > 0) || steps < 0 || grad_accum < 1 || batch < 1 || eval_interval < 0) {
    throw Error("invalid fine-tune schedule (lr, steps, grad_accum, batch, eval_interval)");
  }
  if (!(grad_clip_norm > 0) || weight_decay < 0) throw Error("invalid fine-tune clip norm or weight decay");
}

LoraAdapter::LoraAdapter(const ModelConfig& cfg, int rank, double alpha, std::vector<Projection> targets,
                         std::uint64_t seed)
    : cfg_(cfg), rank_(rank), alpha_(alpha) {
  cfg.validate();
  if (rank < 1) throw Error("lora rank must be >= 1");
  if (!(alpha > 0)) throw Error("lora alpha must be > 0");
  for (const auto p : kAllProjections) {
    if (std::find(targets.begin(), targets.end(), p) != targets.end()) targets_.push_back(p);
  }
  if (targets_.empty()) throw Error("lora needs at least one target projection");
  lookup_.assign(static_cast<std::size_t>(cfg.layers) * 4, -1);
  std::size_t offset = 0;
  for (int l = 0; l < cfg.layers; ++l) {
    for (const auto p : targets_) {
      const auto [in, out] = projection_shape(cfg, p);
      Factor f{l, p, in, out, offset, offset + static_cast<std::size_t>(rank) * in};
      offset = f.b_offset + static_cast<std::size_t>(out) * rank;
      lookup_[l * 4 + static_cast<int>(p)] = static_cast<int>(factors_.size());
      factors_.push_back(f);
    }
  }
  params_.assign(offset, 0.0f);
  grads_.assign(offset, 0.0f);
  cache_.resize(factors_.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 0.02f);
  for (const auto& f : factors_) {
    for (auto& v : a(f)) v = dist(rng);
  }
}

void LoraAdapter::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0f); }

const LoraAdapter::Factor* LoraAdapter::find(int layer, Projection p) const {
  if (layer < 0 || layer >= cfg_.layers) return nullptr;
  const int idx = lookup_[layer * 4 + static_cast<int>(p)];
  return idx < 0 ? nullptr : &factors_[idx];
}

void LoraAdapter::set_training(bool training, double dropout, std::uint64_t seed) {
  if (dropout < 0 || dropout >= 1) throw Error("lora dropout must be in [0, 1)");
  training_ = training;
  dropout_ = dropout;
  rng_.seed(seed);
}

std::uint64_t LoraAdapter::fingerprint() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ull;
    }
  };
  mix(&rank_, sizeof(rank_));
  mix(&alpha_, sizeof(alpha_));
  for (const auto p : targets_) mix(&p, sizeof(p));
  mix(params_.data(), params_.size() * sizeof(float));
  return splitmix64(h);
}

bool LoraAdapter::adapts(int layer, Projection p) const { return find(layer, p) != nullptr; }

void LoraAdapter::forward(int layer, Projection p, std::span<const float> x, std::span<float> y, int rows) {
  const Factor* f = find(layer, p);
  if (!f) throw Error("lora adapter has no factor for block " + std::to_string(layer));
  if (x.size() != static_cast<std::size_t>(rows) * f->in || y.size() != static_cast<std::size_t>(rows) * f->out) {
    throw Error("lora forward shape mismatch");
  }
  Cache& c = cache_[static_cast<std::size_t>(f - factors_.data())];
  c.xin.assign(x.begin(), x.end());
  if (training_ && dropout_ > 0) {
    c.keep.resize(x.size());
    const float inv_keep = static_cast<float>(1.0 / (1.0 - dropout_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      c.keep[i] = unit_interval(rng_()) >= dropout_;
      c.xin[i] = c.keep[i] ? c.xin[i] * inv_keep : 0.0f;
    }
  } else {
    c.keep.clear();
  }
  c.u.assign(static_cast<std::size_t>(rows) * rank_, 0.0f);
  kernels::gemm_nt(rows, rank_, f->in, c.xin.data(), a(*f).data(), c.u.data());
  const float s = scale();
  for (auto& v : c.u) v *= s;
  kernels::gemm_nt(rows, f->out, rank_, c.u.data(), b(*f).data(), y.data());
}

void LoraAdapter::backward(int layer, Projection p, std::span<const float>, std::span<const float> dy,
                           std::span<float> dx, int rows) {
  const Factor* f = find(layer, p);
  if (!f) throw Error("lora adapter has no factor for block " + std::to_string(layer));
  const Cache& c = cache_[static_cast<std::size_t>(f - factors_.data())];
  if (c.u.size() != static_cast<std::size_t>(rows) * rank_) throw Error("lora backward without a matching forward");
  float* dA = grads_.data() + f->a_offset;
  float* dB = grads_.data() + f->b_offset;
  kernels::gemm_tn(f->out, rank_, rows, dy.data(), c.u.data(), dB);
  std::vector<float> du(static_cast<std::size_t>(rows) * rank_, 0.0f);
  kernels::gemm_nn(rows, rank_, f->out, dy.data(), b(*f).data(), du.data());
  const float s = scale();
  for (auto& v : du) v *= s;
  kernels::gemm_tn(rank_, f->in, rows, du.data(), c.xin.data(), dA);
  if (c.keep.empty()) {
    kernels::gemm_nn(rows, f->in, rank_, du.data(), a(*f).data(), dx.data());
  } else {
    std::vector<float> dxin(static_cast<std::size_t>(rows) * f->in, 0.0f);
    kernels::gemm_nn(rows, f->in, rank_, du.data(), a(*f).data(), dxin.data());
    const float inv_keep = static_cast<float>(1.0 / (1.0 - dropout_));
    for (std::size_t i = 0; i < dxin.size(); ++i) {
      if (c.keep[i]) dx[i] += dxin[i] * inv_keep;
    }
  }
}

namespace {

std::string factor_name(const LoraAdapter::Factor& f) {
  return "block" + std::to_string(f.layer) + "." + std::string(projection_name(f.projection));
}

}  // namespace

void LoraAdapter::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write adapter " + path.string());
  out.write(kLoraMagic, 8);
  io::write_u32(out, kLoraVersion);
  io::write_u32(out, static_cast<std::uint32_t>(rank_));
  io::write_f32(out, static_cast<float>(alpha_));
  io::write_u32(out, static_cast<std::uint32_t>(factors_.size()));
  for (const auto& f : factors_) {
    io::write_string(out, factor_name(f));
    io::write_f32_array(out, a(f));
    io::write_f32_array(out, b(f));
  }
  if (!out) throw Error("failed writing adapter " + path.string());
}

LoraAdapter LoraAdapter::load(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open adapter " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kLoraMagic, 8) != 0) throw Error("bad adapter magic in " + path.string());
  const auto version = io::read_u32(in);
  if (version != kLoraVersion) throw Error("adapter version mismatch: expected 1, got " + std::to_string(version));
  const auto rank = static_cast<int>(io::read_u32(in));
  const float alpha = io::read_f32(in);
  const auto count = io::read_u32(in);
  if (!in) throw Error("truncated adapter header in " + path.string());
  if (rank < 1 || rank > 1 << 16) throw Error("adapter rank out of range in " + path.string());

  struct Entry {
    int layer;
    Projection projection;
    std::vector<float> a, b;
  };
  std::vector<Entry> entries;
  std::vector<Projection> targets;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = io::read_string(in, 256);
    if (!in) throw Error("truncated adapter " + path.string());
    const auto dot = name.find('.');
    int layer = -1;
    std::optional<Projection> proj;
    if (name.starts_with("block") && dot != std::string::npos) {
      try {
        layer = std::stoi(name.substr(5, dot - 5));
      } catch (const std::exception&) {
        layer = -1;
      }
      proj = parse_projection(std::string_view(name).substr(dot + 1));
    }
    if (layer < 0 || layer >= cfg.layers || !proj) {
      throw Error("adapter target \"" + name + "\" does not exist in the model");
    }
    const auto [fin, fout] = projection_shape(cfg, *proj);
    Entry e{layer, *proj, std::vector<float>(static_cast<std::size_t>(rank) * fin),
            std::vector<float>(static_cast<std::size_t>(fout) * rank)};
    io::read_f32_array(in, e.a);
    io::read_f32_array(in, e.b);
    if (!in) throw Error("truncated adapter " + path.string() + " (shape mismatch for " + name + ")");
    if (std::find(targets.begin(), targets.end(), *proj) == targets.end()) targets.push_back(*proj);
    entries.push_back(std::move(e));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes in adapter " + path.string());

  LoraAdapter adapter(cfg, rank, alpha, targets, 0);
  if (adapter.factors_.size() != entries.size()) {
    throw Error("adapter " + path.string() + " must cover every layer of each target projection");
  }
  std::fill(adapter.params_.begin(), adapter.params_.end(), 0.0f);
  for (const auto& e : entries) {
    const Factor* f = adapter.find(e.layer, e.projection);
    std::copy(e.a.begin(), e.a.end(), adapter.a(*f).begin());
    std::copy(e.b.begin(), e.b.end(), adapter.b(*f).begin());
  }
  return adapter;
}

ModelWeights merge(const ModelWeights& base, const LoraAdapter& adapter) {
  if (!(base.config() == adapter.config())) throw Error("adapter shape does not match the base model");
  const auto fp = adapter.fingerprint();
  const auto& merged = base.merged_adapters();
  if (std::find(merged.begin(), merged.end(), fp) != merged.end()) {
    throw Error("this adapter is already merged into the weights");
  }
  ModelWeights out = base;
  const int r = adapter.rank();
  const float s = adapter.scale();
  for (const auto& f : adapter.factors()) {
    // W (in x out) += s * A^T B^T
    std::vector<float> bt(static_cast<std::size_t>(r) * f.out);
    const auto b = adapter.b(f);
    for (int o = 0; o < f.out; ++o) {
      for (int k = 0; k < r; ++k) bt[static_cast<std::size_t>(k) * f.out + o] = s * b[static_cast<std::size_t>(o) * r + k];
    }
    std::vector<float> delta(static_cast<std::size_t>(f.in) * f.out, 0.0f);
    kernels::gemm_tn(f.in, f.out, r, adapter.a(f).data(), bt.data(), delta.data());
    auto w = out.block(f.layer).weight(f.projection);
    for (std::size_t i = 0; i < delta.size(); ++i) w[i] += delta[i];
  }
  out.note_merged(fp);
  return out;
}

std::optional<FinetuneExample> tokenize_record(const Tokenizer& tok, const FinetuneRecord& rec, int context) {
  rec.validate();
  const auto prompt = tok.encode(render_prompt(rec, false));
  auto response = tok.encode(rec.response);
  response.push_back(tok.eot_id());
  const std::size_t total = prompt.size() + response.size();
  if (total - 1 > static_cast<std::size_t>(context)) return std::nullopt;
  FinetuneExample ex;
  ex.tokens.assign(prompt.begin(), prompt.end());
  ex.tokens.insert(ex.tokens.end(), response.begin(), response.end() - 1);
  ex.targets.assign(ex.tokens.size(), kIgnoreTarget);
  // position j predicts token j + 1; score only predictions of response tokens
  for (std::size_t j = prompt.size() - 1; j < ex.tokens.size(); ++j) ex.targets[j] = response[j + 1 - prompt.size()];
  return ex;
}

TokenBatch collate(const std::vector<const FinetuneExample*>& examples) {
  if (examples.empty()) throw Error("cannot collate an empty batch");
  std::size_t seq = 0;
  for (const auto* e : examples) seq = std::max(seq, e->tokens.size());
  TokenBatch b;
  b.batch = static_cast<int>(examples.size());
  b.seq = static_cast<int>(seq);
  b.tokens.assign(examples.size() * seq, kEndOfText);
  b.targets.assign(examples.size() * seq, kIgnoreTarget);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::copy(examples[i]->tokens.begin(), examples[i]->tokens.end(), b.tokens.begin() + i * seq);
    std::copy(examples[i]->targets.begin(), examples[i]->targets.end(), b.targets.begin() + i * seq);
  }
  return b;
}

double finetune_eval_loss(const ModelWeights& base, LoraAdapter& adapter, const std::vector<FinetuneExample>& examples,
                          int batch) {
  if (examples.empty()) throw Error("no evaluation examples");
  const bool was_training = adapter.training();
  adapter.set_training(false);
  ActivationCache<float> cache;
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < examples.size(); i += batch) {
    std::vector<const FinetuneExample*> group;
    for (std::size_t j = i; j < std::min(examples.size(), i + batch); ++j) group.push_back(&examples[j]);
    const auto b = collate(group);
    const float loss = forward(base, b, cache, {LogitScope::Targets, &adapter});
    const auto n = static_cast<std::size_t>(cache.rows());
    total += static_cast<double>(loss) * n;
    counted += n;
  }
  adapter.set_training(was_training);
  return total / static_cast<double>(counted);
}

namespace {

std::vector<FinetuneExample> tokenize_all(const Tokenizer& tok, const std::vector<FinetuneRecord>& records, int context,
                                          int& skipped) {
  std::vector<FinetuneExample> out;
  for (const auto& rec : records) {
    auto ex = tokenize_record(tok, rec, context);
    if (ex) {
      out.push_back(std::move(*ex));
    } else {
      ++skipped;
      log::warn("fine-tune record exceeds the context window; skipped: " + rec.instruction.substr(0, 60));
    }
  }
  return out;
}

}  // namespace

FinetuneResult finetune(const ModelWeights& base, const Tokenizer& tok, const LoraConfig& cfg,
                        const std::vector<FinetuneRecord>& train_records,
                        const std::vector<FinetuneRecord>& eval_records, const FinetuneCallback& on_step) {
  cfg.validate();
  const ModelConfig& mcfg = base.config();
  FinetuneResult result;
  const auto train_set = tokenize_all(tok, train_records, mcfg.context, result.skipped_records);
  if (train_set.empty()) throw Error("no fine-tune record fits the context window");
  int eval_skipped = 0;
  auto eval_set = eval_records.empty() ? train_set : tokenize_all(tok, eval_records, mcfg.context, eval_skipped);
  if (eval_set.empty()) {
    log::warn("no evaluation record fits the context window; selecting on training records");
    eval_set = train_set;
  }

  LoraAdapter adapter(mcfg, cfg.rank, cfg.alpha, cfg.targets, derive_seed(cfg.seed, "lora.init"));
  adapter.set_training(true, cfg.dropout, derive_seed(cfg.seed, "lora.dropout"));
  std::vector<float> m(adapter.parameters().size(), 0.0f), v(adapter.parameters().size(), 0.0f);
  const AdamWParams opt{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  std::mt19937_64 order_rng(derive_seed(cfg.seed, "lora.order"));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_group = [&]() {
    std::vector<const FinetuneExample*> group;
    while (static_cast<int>(group.size()) < cfg.batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      group.push_back(&train_set[order[cursor++]]);
      if (group.size() == train_set.size()) break;
    }
    return group;
  };

  result.best_eval_loss = finetune_eval_loss(base, adapter, eval_set, cfg.batch);
  result.best_step = 0;
  result.adapter = adapter;
  result.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), result.best_eval_loss});

  ActivationCache<float> cache;
  const float micro_scale = 1.0f / static_cast<float>(cfg.grad_accum);
  for (int step = 1; step <= cfg.steps; ++step) {
    adapter.zero_grad();
    double loss = 0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      const auto batch = collate(next_group());
      const float l = forward(base, batch, cache, {LogitScope::Targets, &adapter});
      if (!std::isfinite(l)) throw Error("non-finite fine-tune loss at step " + std::to_string(step));
      loss += l * micro_scale;
      backward<float>(base, batch, cache, nullptr, {micro_scale, &adapter});
    }
    const double norm = clip_gradients(adapter.gradients(), cfg.grad_clip_norm);
    if (std::isfinite(norm)) {
      adamw_update(adapter.parameters(), adapter.gradients(), m, v, step, opt, cfg.weight_decay > 0);
    } else {
      log::warn("non-finite adapter gradient at step " + std::to_string(step) + "; update skipped");
    }
    FinetuneMetric metric{step, loss, std::nullopt};
    if ((cfg.eval_interval > 0 && step % cfg.eval_interval == 0) || step == cfg.steps) {
      metric.eval_loss = finetune_eval_loss(base, adapter, eval_set, cfg.batch);
      if (*metric.eval_loss < result.best_eval_loss) {
        result.best_eval_loss = *metric.eval_loss;
        result.best_step = step;
        result.adapter = adapter;
      }
    }
    result.log.push_back(metric);
    if (on_step) on_step(metric);
  }
  result.adapter.set_training(false, 0.0, 0);
  return result;
}

int best_eval_step(const std::vector<FinetuneMetric>& log) {
  int best = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  for (const auto& m : log) {
    if (m.eval_loss && *m.eval_loss < best_loss) {
      best_loss = *m.eval_loss;
      best = m.step;
    }
  }
  if (best < 0) throw Error("no evaluation loss recorded");
  return best;
}

void write_finetune_log(const std::filesystem::path& path, const std::vector<FinetuneMetric>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write fine-tune log " + path.string());
  out << "step,train_loss,eval_loss\n" << std::setprecision(9);
  for (const auto& m : log) {
    out << m.step << ',';
    if (std::isfinite(m.train_loss)) out << m.train_loss;
    out << ',';
    if (m.eval_loss) out << *m.eval_loss;
    out << '\n';
  }
}

}  // namespace tinyllm
