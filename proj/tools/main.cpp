// SPDX-License-Identifier: Apache-2.0
//
// tinyllm: one binary, one subcommand per pipeline stage.

#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "pipeline_config.hpp"
#include "stages.hpp"
#include "tinyllm/error.hpp"
#include "tinyllm/kernels.hpp"
#include "tinyllm/log.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> overrides;
  bool force = false;
  bool verbose = false;
  bool quiet = false;
  // generation flags, mapped onto the subcommand's section
  std::optional<std::string> model;
  std::optional<std::string> prompt;
  std::optional<double> temp;
  std::optional<double> repeat_penalty;
  std::optional<int> n;
  bool greedy = false;
};

const std::map<std::string, std::string> kStageHelp = {
    {"prepare", "sensor CSV and plain text -> cleaned prompt documents"},
    {"tokenize", "text documents -> token shards"},
    {"mix", "ratio-sampled mix of tokenized sources"},
    {"split", "train/validation split at document granularity"},
    {"pretrain", "train a model from scratch on token shards"},
    {"finetune", "LoRA fine-tune on instruction records"},
    {"merge", "fold a LoRA adapter into its base model"},
    {"quantize", "block-quantize a checkpoint"},
    {"generate", "generate text from a prompt"},
    {"eval", "label-matching accuracy and per-class F1"},
    {"bench", "multi-instance token-rate benchmark"},
};

tinyllm::log::Level parse_level(const std::string& s) {
  using tinyllm::log::Level;
  if (s == "debug") return Level::Debug;
  if (s == "info") return Level::Info;
  if (s == "warn") return Level::Warn;
  if (s == "error") return Level::Error;
  if (s == "off") return Level::Off;
  throw tinyllm::Error("log_level must be one of debug, info, warn, error, off");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tinyllm: build, fine-tune, quantize and evaluate small GPT-2 style models"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  Flags f;
  app.add_option("-c,--config", f.config, "pipeline config file");
  app.add_option("--seed", f.seed, "global seed (every stage derives its own stream from it)");
  app.add_option("-t,--threads", f.threads, "kernel thread limit");
  app.add_option("--set", f.overrides, "config override section.key=value (repeatable)");
  app.add_flag("--force", f.force, "rerun a stage even if its outputs are up to date");
  app.add_flag("-v,--verbose", f.verbose, "debug logging");
  app.add_flag("-q,--quiet", f.quiet, "warnings and errors only");

  std::map<std::string, CLI::App*> subs;
  for (const auto& name : tinyllm::cli::stage_names()) {
    auto* sub = app.add_subcommand(name, kStageHelp.at(name));
    if (name == "generate" || name == "eval" || name == "bench") sub->add_option("--model", f.model, "model file");
    if (name == "generate" || name == "bench") {
      sub->add_option("--prompt", f.prompt, "prompt text");
      sub->add_option("--temp", f.temp, "sampling temperature (0 = greedy)");
      sub->add_option("--repeat-penalty", f.repeat_penalty, "repeat penalty (1 = off)");
      sub->add_option("--n", f.n, "tokens to generate");
      sub->add_flag("--greedy", f.greedy, "greedy decoding");
    }
    subs[name] = sub;
  }

  std::string known;
  for (const auto& name : tinyllm::cli::stage_names()) known += (known.empty() ? "" : ", ") + name;
  try {
    app.parse(argc, argv);
  } catch (const CLI::ExtrasError& e) {
    if (app.get_subcommands().empty()) {
      std::cerr << "tinyllm: error: unknown subcommand '" << app.remaining().front() << "' (expected one of "
                << known << ")\n";
      return 2;
    }
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::string stage;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) stage = name;
  }
  if (stage.empty()) {
    std::cerr << app.help() << "\ntinyllm: error: a subcommand is required (one of " << known << ")\n";
    return 2;
  }

  try {
    auto cfg = tinyllm::cli::PipelineConfig::load(f.config);
    for (const auto& o : f.overrides) cfg.set(o);
    if (f.seed) cfg.set("", "seed", std::to_string(*f.seed));
    if (f.threads) cfg.set("", "threads", std::to_string(*f.threads));
    if (f.model) cfg.set(stage, "model", *f.model);
    if (f.prompt) cfg.set(stage, "prompt", *f.prompt);
    if (f.temp) cfg.set(stage, "temperature", std::to_string(*f.temp));
    if (f.greedy) cfg.set(stage, "temperature", "0");
    if (f.repeat_penalty) cfg.set(stage, "repeat_penalty", std::to_string(*f.repeat_penalty));
    if (f.n) cfg.set(stage, "max_new_tokens", std::to_string(*f.n));

    tinyllm::log::set_level(parse_level(cfg.get_string("", "log_level", "info")));
    if (f.verbose) tinyllm::log::set_level(tinyllm::log::Level::Debug);
    if (f.quiet) tinyllm::log::set_level(tinyllm::log::Level::Warn);
    if (const int t = cfg.get_int("", "threads", 0); t > 0) tinyllm::kernels::set_thread_limit(t);

    tinyllm::cli::run_stage(stage, cfg, {f.force}, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "tinyllm " << stage << ": error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
