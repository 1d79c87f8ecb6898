// SPDX-License-Identifier: Apache-2.0

#include "stages.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "tinyllm/data_pipeline.hpp"
#include "tinyllm/error.hpp"
#include "tinyllm/eval_bench.hpp"
#include "tinyllm/finetune.hpp"
#include "tinyllm/inference.hpp"
#include "tinyllm/log.hpp"
#include "tinyllm/random.hpp"
#include "tinyllm/trainer.hpp"

#ifndef TINYLLM_ASSET_DIR
#define TINYLLM_ASSET_DIR "assets"
#endif

namespace tinyllm::cli {
namespace fs = std::filesystem;
namespace {

std::string percent(double share) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * share << "%";
  return os.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error(what + " not found: " + p.string());
}

Tokenizer load_tokenizer(const PipelineConfig& cfg) {
  fs::path dir = TINYLLM_ASSET_DIR;
  if (const auto p = cfg.get_path("", "assets")) {
    dir = *p;
  } else if (const char* env = std::getenv("TINYLLM_ASSETS")) {
    dir = env;
  }
  return Tokenizer::load(dir / "vocab.json", dir / "merges.txt");
}

// Fingerprint of a stage's settings and the size and timestamp of every
// input file. A matching stamp plus present outputs means nothing to redo.
class StageStamp {
 public:
  StageStamp(const PipelineConfig& cfg, const std::string& stage, const std::vector<fs::path>& inputs,
             std::vector<fs::path> outputs)
      : path_(cfg.root() / ".tinyllm" / (stage + ".stamp")), outputs_(std::move(outputs)) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    auto mix = [&](std::string_view s) {
      for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
      }
      h = splitmix64(h);
    };
    mix(cfg.section_text(stage));
    auto file = [&](const fs::path& p) {
      mix(p.string());
      mix(std::to_string(fs::file_size(p)));
      mix(std::to_string(fs::last_write_time(p).time_since_epoch().count()));
    };
    for (const auto& in : inputs) {
      if (fs::is_directory(in)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(in)) {
          if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) file(f);
      } else if (fs::exists(in)) {
        file(in);
      }
    }
    value_ = hex64(h);
  }

  bool up_to_date() const {
    for (const auto& o : outputs_) {
      if (!fs::exists(o)) return false;
    }
    std::ifstream in(path_);
    std::string stored;
    return in && std::getline(in, stored) && stored == value_;
  }

  void commit() const {
    fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::trunc);
    out << value_ << '\n';
  }

 private:
  fs::path path_;
  std::vector<fs::path> outputs_;
  std::string value_;
};

// Wraps an artifact-producing stage with the stamp check.
void stamped(const PipelineConfig& cfg, const StageOptions& opt, const std::string& stage,
             const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
             const std::function<void()>& body) {
  for (const auto& in : inputs) require_exists(in, stage + " input");
  const StageStamp stamp(cfg, stage, inputs, outputs);
  if (!opt.force && stamp.up_to_date()) {
    log::info(stage + ": outputs are up to date for this config; nothing to do (--force reruns)");
    return;
  }
  body();
  stamp.commit();
}

std::uint64_t shard_bytes(const PipelineConfig& cfg, const std::string& section) {
  const auto v = cfg.get_u64(section, "shard_bytes", kDefaultShardBytes);
  if (v < kMinShardBytes) throw Error(section + ".shard_bytes must be at least " + std::to_string(kMinShardBytes));
  return v;
}

// "Name:a:b" items into a map of name -> remaining fields.
std::map<std::string, std::vector<std::string>> named_fields(const PipelineConfig& cfg, const std::string& section,
                                                             const std::string& key, std::size_t fields) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& item : cfg.get_list(section, key)) {
    std::vector<std::string> parts;
    std::stringstream ss(item);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != fields + 1 || parts[0].empty())
      throw Error(section + "." + key + ": malformed item '" + item + "'");
    out[parts[0]] = std::vector<std::string>(parts.begin() + 1, parts.end());
  }
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(where + ": expected a number, got '" + s + "'");
  }
}

void prepare(const PipelineConfig& cfg, const StageOptions& opt) {
  const auto csv_path = cfg.require_path("prepare", "csv");
  const auto texts = cfg.get_paths("prepare", "text");
  const auto output = cfg.require_path("prepare", "output");
  auto inputs = texts;
  inputs.push_back(csv_path);
  stamped(cfg, opt, "prepare", inputs, {output}, [&] {
    const auto columns = cfg.get_list("prepare", "columns");
    if (columns.empty()) throw Error("prepare.columns lists no columns");
    std::map<std::string, std::string> units;
    for (const auto& [name, f] : named_fields(cfg, "prepare", "units", 1)) units[name] = f[0];
    std::map<std::string, NormRange> ranges;
    for (const auto& [name, f] : named_fields(cfg, "prepare", "ranges", 2)) {
      ranges[name] = {to_double(f[0], "prepare.ranges"), to_double(f[1], "prepare.ranges")};
    }
    const auto table = sensor_table_from_csv(read_csv(csv_path), columns, units,
                                             cfg.get_string("prepare", "timestamp", ""));

    PromptTemplateConfig tmpl;
    tmpl.column_order = columns;
    tmpl.separator = unescape(cfg.get_string("prepare", "separator", "\\n"));
    tmpl.rows_per_document = static_cast<std::size_t>(cfg.get_u64("prepare", "rows_per_document", 0));
    if (const auto ctx = cfg.get("prepare", "context")) {
      tmpl.context_text = unescape(*ctx);
    } else {
      // describe units and raw ranges when no context text is configured
      tmpl.context_text = "Sensor readings normalized to integers from 0 to 100.";
      for (const auto& c : columns) {
        const auto& col = *table.find(c);
        const auto r = ranges.find(c);
        if (r == ranges.end()) continue;
        std::ostringstream os;
        os << " " << c;
        if (!col.unit.empty()) os << " (" << col.unit << ")";
        os << " raw range " << r->second.lo << " to " << r->second.hi << ".";
        tmpl.context_text += os.str();
      }
    }
    auto docs = transform_table(table, tmpl, ranges);
    const std::size_t sensor_docs = docs.size();
    for (const auto& t : texts) {
      for (const auto& d : read_text_documents(t)) {
        auto cleaned = clean_text(d);
        if (!cleaned.empty()) docs.push_back(std::move(cleaned));
      }
    }
    write_text_documents(output, docs);
    log::info("prepare: " + std::to_string(docs.size()) + " documents (" + std::to_string(sensor_docs) +
              " from sensor rows) -> " + output.string());
  });
}

void tokenize(const PipelineConfig& cfg, const StageOptions& opt) {
  const auto inputs = cfg.get_paths("tokenize", "inputs");
  const auto outputs = cfg.get_paths("tokenize", "outputs");
  if (inputs.empty()) throw Error("tokenize.inputs lists no files");
  if (inputs.size() != outputs.size()) throw Error("tokenize.inputs and tokenize.outputs differ in length");
  const auto limit = shard_bytes(cfg, "tokenize");
  stamped(cfg, opt, "tokenize", inputs, outputs, [&] {
    const auto tok = load_tokenizer(cfg);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      // instruction records are rendered with the fine-tune template so a base
      // model sees the exact prompt layout it will later be adapted on
      std::vector<std::string> docs;
      if (inputs[i].extension() == ".jsonl") {
        for (const auto& rec : read_records_jsonl(inputs[i])) {
          auto text = render_prompt(rec, false) + rec.response;
          docs.push_back(std::move(text));
        }
      } else {
        docs = read_text_documents(inputs[i]);
      }
      const auto shards = tokenize_corpus(docs, tok, limit, outputs[i]);
      std::uint64_t tokens = 0;
      for (const auto& s : shards) tokens += s.token_count;
      log::info("tokenize: " + inputs[i].string() + ": " + std::to_string(docs.size()) + " documents, " +
                std::to_string(tokens) + " tokens in " + std::to_string(shards.size()) + " shard(s)");
    }
  });
}

void mix(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out) {
  const auto sources = cfg.get_paths("mix", "sources");
  const auto ratios = cfg.get_doubles("mix", "ratios");
  const auto output = cfg.require_path("mix", "output");
  if (sources.size() != ratios.size()) throw Error("mix.sources and mix.ratios differ in length");
  stamped(cfg, opt, "mix", sources, {output}, [&] {
    MixSpec spec;
    for (std::size_t i = 0; i < sources.size(); ++i) spec.sources.push_back({sources[i], ratios[i]});
    spec.seed = derive_seed(cfg.seed(), "mix");
    if (cfg.has("mix", "target_tokens")) spec.target_tokens = cfg.get_u64("mix", "target_tokens", 0);
    const auto r = mix_shards(spec, output, shard_bytes(cfg, "mix"));
    std::uint64_t docs = 0;
    for (const auto d : r.source_documents) docs += d;
    out << "mix: " << r.total_tokens() << " tokens, " << docs << " documents, " << r.shards.size()
        << " shard(s); realized shares:";
    for (std::size_t i = 0; i < sources.size(); ++i) {
      out << (i ? "," : "") << " " << sources[i].filename().string() << " " << percent(r.share(i)) << " (target "
          << percent(ratios[i]) << ")";
    }
    out << '\n';
  });
}

void split(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out) {
  const auto input = cfg.require_path("split", "input");
  const auto train_dir = cfg.require_path("split", "train_output");
  const auto val_dir = cfg.require_path("split", "val_output");
  stamped(cfg, opt, "split", {input}, {train_dir, val_dir}, [&] {
    const double ratio = cfg.get_double("split", "train_ratio", 0.98);
    const auto r = split_dataset(list_shards(input), ratio, derive_seed(cfg.seed(), "split"), train_dir, val_dir,
                                 shard_bytes(cfg, "split"));
    out << "split: train " << r.train_tokens << " tokens / " << r.train_documents << " documents ("
        << percent(r.train_share()) << "), val " << r.val_tokens << " tokens / " << r.val_documents
        << " documents\n";
  });
}

void pretrain(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out) {
  const auto train_dir = cfg.require_path("pretrain", "train");
  const auto val_dir = cfg.get_path("pretrain", "val");
  const auto output = cfg.require_path("pretrain", "output");
  const auto resume = cfg.get_path("pretrain", "resume");
  std::vector<fs::path> inputs = {train_dir};
  if (val_dir) inputs.push_back(*val_dir);
  if (resume) inputs.push_back(*resume);
  stamped(cfg, opt, "pretrain", inputs, {output / "model.bin"}, [&] {
    auto mc = ModelConfig::family(cfg.get_int("pretrain", "layers", 6));
    mc.channels = cfg.get_int("pretrain", "channels", mc.channels);
    mc.heads = cfg.get_int("pretrain", "heads", mc.channels / 64 > 0 ? mc.channels / 64 : 1);
    mc.context = cfg.get_int("pretrain", "context", mc.context);
    mc.validate();

    const int steps = cfg.get_int("pretrain", "steps", 20000);
    auto h = TrainHyper::scaled(steps);
    h.warmup_steps = cfg.get_int("pretrain", "warmup", h.warmup_steps);
    h.micro_batch = cfg.get_int("pretrain", "micro_batch", h.micro_batch);
    h.seq_len = cfg.get_int("pretrain", "seq_len", std::min(h.seq_len, mc.context));
    h.grad_accum = cfg.get_int("pretrain", "grad_accum", h.grad_accum);
    h.lr_max = cfg.get_double("pretrain", "lr_max", h.lr_max);
    h.lr_min = cfg.get_double("pretrain", "lr_min", h.lr_min);
    h.grad_clip_norm = cfg.get_double("pretrain", "clip", h.grad_clip_norm);
    h.beta1 = cfg.get_double("pretrain", "beta1", h.beta1);
    h.beta2 = cfg.get_double("pretrain", "beta2", h.beta2);
    h.weight_decay = cfg.get_double("pretrain", "weight_decay", h.weight_decay);
    h.eval_interval = cfg.get_int("pretrain", "eval_interval", h.eval_interval);
    h.eval_batches = cfg.get_int("pretrain", "eval_batches", h.eval_batches);
    h.checkpoint_interval = cfg.get_int("pretrain", "checkpoint_interval", h.checkpoint_interval);
    h.seed = derive_seed(cfg.seed(), "pretrain");
    h.validate();

    std::optional<ModelWeights> initial;
    if (resume) {
      initial = load_checkpoint(*resume);
      if (!(initial->config() == mc)) throw Error("resume checkpoint does not match the configured model shape");
    }
    const auto train_shards = list_shards(train_dir);
    const auto val_shards = val_dir ? list_shards(*val_dir) : std::vector<TokenShard>{};
    log::info("pretrain: " + std::to_string(param_count_exact(mc)) + " parameters, " + std::to_string(steps) +
              " steps of " + std::to_string(h.micro_batch * h.seq_len * h.grad_accum) + " tokens");
    const int every = std::max(1, steps / 20);
    const auto result = train(mc, train_shards, val_shards, h, output, initial ? &*initial : nullptr,
                              [&](const TrainRecord& r) {
                                if (r.step % every == 0 || r.step + 1 == steps || r.val_loss) {
                                  std::ostringstream os;
                                  os << "step " << r.step << " lr " << r.lr << " loss " << r.train_loss << " norm "
                                     << r.grad_norm;
                                  if (r.val_loss) os << " val " << *r.val_loss;
                                  log::info(os.str());
                                }
                              });
    out << "pretrain: " << result.steps_completed << " steps";
    if (!result.log.empty()) out << ", final train loss " << result.log.back().train_loss;
    out << "; model -> " << result.final_checkpoint.string() << '\n';
  });
}

void finetune_stage(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out) {
  const auto base_path = cfg.require_path("finetune", "base");
  const auto records_path = cfg.require_path("finetune", "records");
  const auto eval_path = cfg.get_path("finetune", "eval_records");
  const auto output = cfg.require_path("finetune", "output");
  std::vector<fs::path> inputs = {base_path, records_path};
  if (eval_path) inputs.push_back(*eval_path);
  stamped(cfg, opt, "finetune", inputs, {output / "adapter.lora"}, [&] {
    const auto base = load_model(base_path).weights;
    auto records = read_records_jsonl(records_path);
    std::vector<FinetuneRecord> eval_records;
    if (const auto ratios = cfg.get_doubles("finetune", "split"); !ratios.empty()) {
      if (ratios.size() != 3) throw Error("finetune.split needs three ratios (train, val, test)");
      const auto parts = build_ft_dataset(records, {ratios[0], ratios[1], ratios[2]},
                                          derive_seed(cfg.seed(), "finetune.split"));
      write_records_jsonl(output / "train.jsonl", parts.train);
      write_records_jsonl(output / "val.jsonl", parts.val);
      write_records_jsonl(output / "test.jsonl", parts.test);
      records = parts.train;
      eval_records = parts.val;
    }
    if (eval_path) eval_records = read_records_jsonl(*eval_path);

    LoraConfig lc;
    lc.rank = cfg.get_int("finetune", "rank", lc.rank);
    lc.alpha = cfg.get_double("finetune", "alpha", lc.alpha);
    lc.dropout = cfg.get_double("finetune", "dropout", lc.dropout);
    if (cfg.has("finetune", "targets")) {
      lc.targets.clear();
      for (const auto& t : cfg.get_list("finetune", "targets")) {
        const auto p = parse_projection(t);
        if (!p) throw Error("finetune.targets: unknown projection '" + t + "'");
        lc.targets.push_back(*p);
      }
    }
    lc.lr = cfg.get_double("finetune", "lr", lc.lr);
    lc.steps = cfg.get_int("finetune", "steps", lc.steps);
    lc.batch = cfg.get_int("finetune", "batch", lc.batch);
    lc.grad_accum = cfg.get_int("finetune", "grad_accum", lc.grad_accum);
    lc.eval_interval = cfg.get_int("finetune", "eval_interval", lc.eval_interval);
    lc.grad_clip_norm = cfg.get_double("finetune", "clip", lc.grad_clip_norm);
    lc.weight_decay = cfg.get_double("finetune", "weight_decay", lc.weight_decay);
    lc.seed = derive_seed(cfg.seed(), "finetune");
    lc.validate();

    const auto tok = load_tokenizer(cfg);
    log::info("finetune: " + std::to_string(records.size()) + " training records, " +
              std::to_string(eval_records.size()) + " eval records, rank " + std::to_string(lc.rank));
    const auto result = finetune(base, tok, lc, records, eval_records, [](const FinetuneMetric& m) {
      if (!m.eval_loss) return;
      std::ostringstream os;
      os << "step " << m.step << " train " << m.train_loss << " eval " << *m.eval_loss;
      log::info(os.str());
    });
    fs::create_directories(output);
    result.adapter.save(output / "adapter.lora");
    write_finetune_log(output / "finetune_log.csv", result.log);
    out << "finetune: best step " << result.best_step << ", eval loss " << result.best_eval_loss << "; adapter -> "
        << (output / "adapter.lora").string() << '\n';
  });
}

void merge_stage(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out) {
  const auto base_path = cfg.require_path("merge", "base");
  const auto adapter_path = cfg.require_path("merge", "adapter");
  const auto output = cfg.require_path("merge", "output");
  stamped(cfg, opt, "merge", {base_path, adapter_path}, {output}, [&] {
    const auto base = load_model(base_path).weights;
    const auto adapter = LoraAdapter::load(adapter_path, base.config());
    save_checkpoint(output, merge(base, adapter));
    out << "merge: rank " << adapter.rank() << " adapter folded into " << output.string() << '\n';
  });
}

void quantize_stage(const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out) {
  const auto input = cfg.require_path("quantize", "input");
  const auto output = cfg.require_path("quantize", "output");
  stamped(cfg, opt, "quantize", {input}, {output}, [&] {
    const QuantScheme s{cfg.get_int("quantize", "bits", 4), cfg.get_int("quantize", "block_size", 32)};
    s.validate();
    const auto w = load_checkpoint(input);
    quantize_model(w, s, output);
    const auto q = fs::file_size(output);
    const auto f = fs::file_size(input);
    out << "quantize: " << s.bits << "-bit, block " << s.block_size << ": " << q << " bytes ("
        << percent(static_cast<double>(q) / static_cast<double>(f)) << " of the f32 checkpoint) -> "
        << output.string() << '\n';
  });
}

GenerationParams generation_params(const PipelineConfig& cfg, const std::string& section, double temperature,
                                   int max_new) {
  GenerationParams p;
  p.temperature = cfg.get_double(section, "temperature", temperature);
  p.repeat_penalty = static_cast<float>(cfg.get_double(section, "repeat_penalty", p.repeat_penalty));
  if (section == "generate") p.repeat_window = cfg.get_int(section, "repeat_window", p.repeat_window);
  p.max_new_tokens = cfg.get_int(section, "max_new_tokens", max_new);
  p.seed = derive_seed(cfg.seed(), section);
  p.threads = cfg.get_int("", "threads", 0);
  p.validate();
  return p;
}

void generate_stage(const PipelineConfig& cfg, std::ostream& out) {
  const auto model_path = cfg.require_path("generate", "model");
  std::string prompt;
  if (const auto file = cfg.get_path("generate", "prompt_file")) {
    std::ifstream in(*file);
    if (!in) throw Error("cannot open prompt file " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    prompt = ss.str();
  } else {
    prompt = unescape(cfg.require("generate", "prompt"));
  }
  const auto p = generation_params(cfg, "generate", 0.7, 300);
  const auto model = load_model(model_path);
  const auto tok = load_tokenizer(cfg);
  const auto r = generate(model.weights, tok, prompt, p);
  out << r.generated_text << '\n';
  out << std::fixed << std::setprecision(3);
  out << "-- prompt tokens: " << r.prompt_tokens << " in " << r.prompt_eval_seconds << " s ("
      << std::setprecision(2) << r.prompt_eval_rate << " tokens/s)\n";
  out << std::setprecision(3) << "-- generated tokens: " << r.generated_tokens << " in " << r.eval_seconds << " s ("
      << std::setprecision(2) << r.eval_rate << " tokens/s)\n";
  out << "-- stopped at end-of-text: " << (r.stopped_at_eot ? "yes" : "no") << '\n';
  out << std::setprecision(3) << "-- wall time: " << r.wall_time << " s\n";
  out.unsetf(std::ios::floatfield);
}

void eval_stage(const PipelineConfig& cfg, std::ostream& out) {
  const auto model_path = cfg.require_path("eval", "model");
  const auto tok = load_tokenizer(cfg);
  std::vector<EvalCase> cases;
  if (const auto c = cfg.get_path("eval", "cases")) {
    cases = read_eval_cases_jsonl(*c);
  } else if (const auto r = cfg.get_path("eval", "records")) {
    const auto labels = cfg.get_list("eval", "labels");
    if (labels.empty()) throw Error("eval.labels is required with eval.records");
    cases = eval_cases_from_records(read_records_jsonl(*r), labels);
  } else {
    throw Error("missing required config key 'eval.cases' (or 'eval.records')");
  }
  const int k = cfg.get_int("eval", "k", kDefaultMatchTokens);
  auto p = generation_params(cfg, "eval", 0.0, k);
  const auto model = load_model(model_path);
  const auto result = evaluate(model.weights, tok, cases, p, k);
  out << format_eval_table(result.summary);
  if (const auto report = cfg.get_path("eval", "report")) {
    write_eval_report(result.summary, *report);
    log::info("eval: report -> " + report->string());
  }
}

void bench_stage(const PipelineConfig& cfg, std::ostream& out) {
  const auto model_path = cfg.require_path("bench", "model");
  const auto prompt = unescape(cfg.get_string("bench", "prompt", "Sensor readings normalized to integers"));
  auto instances = cfg.get_ints("bench", "instances");
  if (instances.empty()) instances = {1, 2, 4};
  const auto background = cfg.get_paths("bench", "background");
  const auto p = generation_params(cfg, "bench", 0.7, 32);
  const auto model = load_model(model_path);
  const auto tok = load_tokenizer(cfg);
  std::vector<BenchCell> cells;
  for (const int n : instances) {
    cells.push_back({n, {}});
    if (!background.empty()) cells.push_back({n, background});
  }
  const auto results = bench_matrix(model.weights, tok, prompt, p, cells);
  out << format_bench_table(results);
  if (const auto report = cfg.get_path("bench", "report")) {
    write_bench_report(results, *report);
    log::info("bench: report -> " + report->string());
  }
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"prepare",  "tokenize", "mix",      "split",
                                                  "pretrain", "finetune", "merge",    "quantize",
                                                  "generate", "eval",     "bench"};
  return names;
}

void run_stage(const std::string& stage, const PipelineConfig& cfg, const StageOptions& opt, std::ostream& out) {
  if (stage == "prepare") return prepare(cfg, opt);
  if (stage == "tokenize") return tokenize(cfg, opt);
  if (stage == "mix") return mix(cfg, opt, out);
  if (stage == "split") return split(cfg, opt, out);
  if (stage == "pretrain") return pretrain(cfg, opt, out);
  if (stage == "finetune") return finetune_stage(cfg, opt, out);
  if (stage == "merge") return merge_stage(cfg, opt, out);
  if (stage == "quantize") return quantize_stage(cfg, opt, out);
  if (stage == "generate") return generate_stage(cfg, out);
  if (stage == "eval") return eval_stage(cfg, out);
  if (stage == "bench") return bench_stage(cfg, out);
  throw Error("unknown stage '" + stage + "'");
}

}  // namespace tinyllm::cli
