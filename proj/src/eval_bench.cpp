// SPDX-License-Identifier: Apache-2.0

#include "tinyllm/eval_bench.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tinyllm/error.hpp"
#include "tinyllm/log.hpp"
#include "tinyllm/random.hpp"

namespace tinyllm {
namespace {

std::string fold(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string prepare_window(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (const char c : text) out.push_back(c == '\n' || c == '\r' ? ' ' : c);
  const auto first = out.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = out.find_last_not_of(" \t");
  return fold(std::string_view(out).substr(first, last - first + 1));
}

int earliest_label(const std::string& window, const std::vector<std::string>& labels) {
  int best = kInvalidPrediction;
  std::size_t best_pos = std::string::npos;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto pos = window.find(fold(labels[i]));
    if (pos == std::string::npos) continue;
    // equal positions only happen for a prefix pair; take the longer label
    if (pos < best_pos || (pos == best_pos && labels[i].size() > labels[static_cast<std::size_t>(best)].size())) {
      best = static_cast<int>(i);
      best_pos = pos;
    }
  }
  return best;
}

std::ofstream open_report(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write report " + path.string());
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

void EvalCase::validate() const {
  if (labels.empty()) throw Error("eval case has an empty label set");
  if (std::find(labels.begin(), labels.end(), expected) == labels.end())
    throw Error("expected label \"" + expected + "\" is not in the label set");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw Error("eval case has an empty label");
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (i == j) continue;
      const auto a = fold(labels[i]);
      const auto b = fold(labels[j]);
      if (b.starts_with(a)) throw Error("label \"" + labels[i] + "\" is a prefix of \"" + labels[j] + "\"");
    }
  }
}

std::vector<EvalCase> read_eval_cases_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open eval cases " + path.string());
  std::vector<EvalCase> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    EvalCase c;
    try {
      const auto j = nlohmann::json::parse(line);
      c.prompt = j.at("prompt").get<std::string>();
      c.expected = j.at("expected").get<std::string>();
      c.labels = j.at("labels").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("bad eval case at " + where + ": " + e.what());
    }
    try {
      c.validate();
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " at " + where);
    }
    out.push_back(std::move(c));
  }
  return out;
}

void write_eval_cases_jsonl(const std::filesystem::path& path, const std::vector<EvalCase>& cases) {
  auto out = open_report(path);
  for (const auto& c : cases) {
    out << nlohmann::json{{"prompt", c.prompt}, {"expected", c.expected}, {"labels", c.labels}}.dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<EvalCase> eval_cases_from_records(const std::vector<FinetuneRecord>& records,
                                              const std::vector<std::string>& labels) {
  std::vector<EvalCase> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    EvalCase c{render_prompt(r, false), r.response, labels};
    c.validate();
    out.push_back(std::move(c));
  }
  return out;
}

int match_label(const Tokenizer& tok, std::span<const TokenId> generated, const std::vector<std::string>& labels,
                int k) {
  if (k < 1) throw Error("match window must be at least one token");
  auto window = generated.first(std::min<std::size_t>(generated.size(), static_cast<std::size_t>(k)));
  const auto eot = std::find(window.begin(), window.end(), kEndOfText);
  window = window.first(static_cast<std::size_t>(eot - window.begin()));
  return earliest_label(prepare_window(tok.decode(window)), labels);
}

int match_label(const Tokenizer& tok, std::string_view generated, const std::vector<std::string>& labels, int k) {
  return match_label(tok, std::span<const TokenId>(tok.encode(generated)), labels, k);
}

EvalSummary summarize(const std::vector<std::string>& labels, const std::vector<int>& expected,
                      const std::vector<int>& predicted) {
  if (expected.size() != predicted.size()) throw Error("expected and predicted counts differ");
  if (expected.empty()) throw Error("nothing to summarize");
  const int n = static_cast<int>(labels.size());
  EvalSummary s;
  s.labels = labels;
  s.confusion.assign(labels.size(), std::vector<long>(labels.size() + 1, 0));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i] < 0 || expected[i] >= n) throw Error("expected label index out of range");
    if (predicted[i] < kInvalidPrediction || predicted[i] >= n) throw Error("predicted label index out of range");
    const int col = predicted[i] == kInvalidPrediction ? n : predicted[i];
    ++s.confusion[static_cast<std::size_t>(expected[i])][static_cast<std::size_t>(col)];
  }
  s.total = static_cast<long>(expected.size());
  double f1_sum = 0;
  int present = 0;
  for (int c = 0; c < n; ++c) {
    const auto& row = s.confusion[static_cast<std::size_t>(c)];
    const long tp = row[static_cast<std::size_t>(c)];
    long support = 0;
    for (const long v : row) support += v;
    long predicted_as = 0;
    for (int r = 0; r < n; ++r) predicted_as += s.confusion[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    s.correct += tp;
    s.invalid += row.back();
    ClassMetrics m;
    m.label = labels[static_cast<std::size_t>(c)];
    m.support = support;
    m.precision = predicted_as > 0 ? static_cast<double>(tp) / static_cast<double>(predicted_as) : 0.0;
    m.recall = support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    if (support > 0 || predicted_as > 0) {
      f1_sum += m.f1;
      ++present;
    }
    s.per_class.push_back(std::move(m));
  }
  s.accuracy = 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.total);
  s.macro_f1 = present > 0 ? f1_sum / present : 0.0;
  return s;
}

EvalResult evaluate(const ModelWeights& w, const Tokenizer& tok, const std::vector<EvalCase>& cases,
                    GenerationParams params, int k) {
  if (cases.empty()) throw Error("no eval cases");
  if (k < 1) throw Error("match window must be at least one token");
  params.max_new_tokens = k;
  params.validate();

  // union of label sets in order of first appearance
  std::vector<std::string> labels;
  for (const auto& c : cases) {
    c.validate();
    for (const auto& l : c.labels) {
      if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
    }
  }
  auto index_of = [&](const std::string& l) {
    return static_cast<int>(std::find(labels.begin(), labels.end(), l) - labels.begin());
  };

  EvalResult result;
  std::vector<int> expected, predicted;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    CaseOutcome o;
    o.expected = index_of(c.expected);
    const int prompt_tokens = static_cast<int>(tok.encode(c.prompt).size());
    if (prompt_tokens >= w.config().context) {
      log::warn("eval case " + std::to_string(i) + " prompt has " + std::to_string(prompt_tokens) +
                " tokens, over the context; scored invalid");
    } else {
      const auto report = generate(w, tok, c.prompt, params);
      o.generated = report.generated_text;
      const int local = match_label(tok, std::span<const TokenId>(report.tokens), c.labels, k);
      o.predicted = local == kInvalidPrediction ? kInvalidPrediction : index_of(c.labels[static_cast<std::size_t>(local)]);
    }
    expected.push_back(o.expected);
    predicted.push_back(o.predicted);
    result.cases.push_back(std::move(o));
  }
  result.summary = summarize(labels, expected, predicted);
  return result;
}

double BenchResult::mean_rate() const {
  if (eval_rates.empty()) return 0.0;
  double s = 0;
  for (const double r : eval_rates) s += r;
  return s / static_cast<double>(eval_rates.size());
}

BenchResult bench_generate(const ModelWeights& w, const Tokenizer& tok, const std::string& prompt,
                           const GenerationParams& params, int instances,
                           const std::vector<std::filesystem::path>& background) {
  if (instances < 1) throw Error("bench needs at least one instance");
  params.validate();

  std::vector<LoadedModel> idle;
  idle.reserve(background.size());
  for (const auto& path : background) idle.push_back(load_model(path));

  std::vector<GenerationReport> reports(static_cast<std::size_t>(instances));
  std::vector<std::exception_ptr> failures(static_cast<std::size_t>(instances));
  {
    std::vector<std::jthread> workers;
    for (int i = 0; i < instances; ++i) {
      workers.emplace_back([&, i] {
        try {
          auto p = params;
          p.seed = derive_seed(params.seed, "bench.instance." + std::to_string(i));
          reports[static_cast<std::size_t>(i)] = generate(w, tok, prompt, p);
        } catch (...) {
          failures[static_cast<std::size_t>(i)] = std::current_exception();
        }
      });
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  BenchResult r;
  r.instances = instances;
  r.background = idle.empty() ? "none" : "loaded-idle";
  r.background_models = static_cast<int>(idle.size());
  for (const auto& rep : reports) {
    r.eval_rates.push_back(rep.eval_rate);
    r.eval_seconds.push_back(rep.eval_seconds);
    r.wall_times.push_back(rep.wall_time);
    r.generated_tokens.push_back(rep.generated_tokens);
    r.aggregate_rate += rep.eval_rate;
  }
  return r;
}

std::vector<BenchResult> bench_matrix(const ModelWeights& w, const Tokenizer& tok, const std::string& prompt,
                                      const GenerationParams& params, const std::vector<BenchCell>& cells) {
  std::vector<BenchResult> out;
  for (const auto& cell : cells) {
    log::info("bench: " + std::to_string(cell.instances) + " instance(s), " +
              std::to_string(cell.background.size()) + " background model(s)");
    out.push_back(bench_generate(w, tok, prompt, params, cell.instances, cell.background));
  }
  return out;
}

bool rate_non_increasing(const std::vector<BenchResult>& results) {
  std::map<std::string, std::vector<const BenchResult*>> groups;
  for (const auto& r : results) groups[r.background].push_back(&r);
  for (auto& [_, g] : groups) {
    std::stable_sort(g.begin(), g.end(), [](auto* a, auto* b) { return a->instances < b->instances; });
    for (std::size_t i = 1; i < g.size(); ++i) {
      if (g[i]->instances > g[i - 1]->instances && g[i]->mean_rate() > g[i - 1]->mean_rate()) return false;
    }
  }
  return true;
}

void write_eval_report(const EvalSummary& s, const std::filesystem::path& csv_path) {
  if (s.total == 0) throw Error("empty eval summary");
  {
    auto out = open_report(csv_path);
    out << std::setprecision(17) << "class,precision,recall,f1\n";
    double p = 0, r = 0;
    for (const auto& m : s.per_class) {
      out << m.label << ',' << m.precision << ',' << m.recall << ',' << m.f1 << '\n';
      p += m.precision;
      r += m.recall;
    }
    const auto n = static_cast<double>(s.per_class.size());
    out << "macro," << p / n << ',' << r / n << ',' << s.macro_f1 << '\n';
    if (!out) throw Error("failed writing " + csv_path.string());
  }
  auto txt = csv_path;
  txt.replace_extension(".txt");
  auto out = open_report(txt);
  out << format_eval_table(s);
  if (!out) throw Error("failed writing " + txt.string());
}

std::string format_eval_table(const EvalSummary& s) {
  std::ostringstream os;
  os << "accuracy " << fixed(s.accuracy, 2) << "% (" << s.correct << "/" << s.total << ", " << s.invalid
     << " invalid)\n";
  os << "F1 aggregate: macro (unweighted mean over classes)\n";
  os << "macro F1 " << fixed(s.macro_f1, 4) << "\n\n";
  std::size_t width = 7;
  for (const auto& l : s.labels) width = std::max(width, l.size());
  os << std::left << std::setw(static_cast<int>(width)) << "class" << "  precision  recall  f1      support\n";
  for (const auto& m : s.per_class) {
    os << std::left << std::setw(static_cast<int>(width)) << m.label << "  " << std::setw(9) << fixed(m.precision, 4)
       << "  " << std::setw(6) << fixed(m.recall, 4) << "  " << std::setw(6) << fixed(m.f1, 4) << "  " << m.support
       << '\n';
  }
  os << "\nconfusion (rows expected, columns predicted)\n" << std::setw(static_cast<int>(width)) << "";
  for (const auto& l : s.labels) os << "  " << l;
  os << "  invalid\n";
  for (std::size_t r = 0; r < s.labels.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(width)) << s.labels[r];
    for (std::size_t c = 0; c <= s.labels.size(); ++c) {
      const auto head = c < s.labels.size() ? s.labels[c].size() : std::string("invalid").size();
      os << "  " << std::right << std::setw(static_cast<int>(head)) << s.confusion[r][c] << std::left;
    }
    os << '\n';
  }
  return os.str();
}

void write_bench_report(const std::vector<BenchResult>& results, const std::filesystem::path& csv_path) {
  if (results.empty()) throw Error("no bench results to report");
  {
    auto out = open_report(csv_path);
    out << std::setprecision(10) << "instances,background,background_models,mean_rate,aggregate_rate,rates\n";
    for (const auto& r : results) {
      out << r.instances << ',' << r.background << ',' << r.background_models << ',' << r.mean_rate() << ','
          << r.aggregate_rate << ',';
      for (std::size_t i = 0; i < r.eval_rates.size(); ++i) out << (i ? ";" : "") << r.eval_rates[i];
      out << '\n';
    }
    if (!out) throw Error("failed writing " + csv_path.string());
  }
  auto txt = csv_path;
  txt.replace_extension(".txt");
  auto out = open_report(txt);
  out << format_bench_table(results);
  if (!out) throw Error("failed writing " + txt.string());
}

std::string format_bench_table(const std::vector<BenchResult>& results) {
  if (results.empty()) throw Error("no bench results to report");
  std::ostringstream os;
  os << "instances  background      mean tok/s  aggregate tok/s  per-instance tok/s\n";
  for (const auto& r : results) {
    std::string bg = r.background;
    if (r.background_models > 0) bg += " x" + std::to_string(r.background_models);
    os << std::left << std::setw(9) << r.instances << "  " << std::setw(14) << bg << "  " << std::right
       << std::setw(10) << fixed(r.mean_rate(), 2) << "  " << std::setw(15) << fixed(r.aggregate_rate, 2) << "  "
       << std::left;
    for (std::size_t i = 0; i < r.eval_rates.size(); ++i) os << (i ? " " : "") << fixed(r.eval_rates[i], 2);
    os << '\n';
  }
  os << "trend: mean per-instance rate "
     << (rate_non_increasing(results) ? "does not increase" : "increases somewhere") << " with instance count\n";
  return os.str();
}

}  // namespace tinyllm
