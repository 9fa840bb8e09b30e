#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dlgforge/corpus.hpp"
#include "dlgforge/metrics.hpp"
#include "dlgforge/model.hpp"
#include "dlgforge/sampling.hpp"
#include "dlgforge/training.hpp"

namespace dlg {

/// Flat `key = value` config text ('#' comments). Serialization is sorted so
/// spec files diff cleanly.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig parse(std::string_view text);
  static KvConfig parse_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  i64 get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  u64 get_u64(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  void set_int(const std::string& key, i64 v) { entries_[key] = std::to_string(v); }
  void set_double(const std::string& key, double v) { entries_[key] = fmt_double(v); }

  /// Keys from `required` that are absent.
  std::vector<std::string> missing(const std::vector<std::string>& required) const;

  std::string serialize() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// One ablation run. Every field is explicit in the spec file; missing keys
/// are an error, so two spec files always differ only where they mean to.
struct ExperimentSpec {
  std::string name;
  std::filesystem::path corpus;
  std::filesystem::path codec_dir;
  std::string tokenizer;  // bpe | basic
  TurnScope turns = TurnScope::multi;
  LossMode loss = LossMode::joint;
  PaddingMode padding = PaddingMode::random;
  std::string preset;  // tiny | small | 117M-shape | 345M-shape
  Precision precision = Precision::f64;
  int seq_len = 64;
  double dropout = 0.0;
  std::string init = "random";  // random | pretrained (pretraining is a stub)
  TrainConfig train;
  Strategy strategy = Strategy::greedy;
  int top_k = 0;
  double top_p = 1.0;
  double temperature = 1.0;
  int max_new_tokens = 32;
  std::string eval_split = "valid";
  u64 seed = 1;

  static const std::vector<std::string>& required_keys();
  static ExperimentSpec from_config(const KvConfig& kv);
  KvConfig to_config() const;
};

struct ExperimentResult {
  std::filesystem::path dir;
  MetricReport report;
  TrainResult train;
};

/// prepare -> train -> generate -> evaluate, into
/// <out_root>/<name>/{config.txt, checkpoints/, logs/metrics.csv,
/// eval/generations.jsonl, eval/report.csv}.
ExperimentResult run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_root);

/// Runs every spec listed in the suite file (one path per line, relative to
/// the suite file) and writes a summary CSV whose metric cells are copied
/// verbatim from each experiment's report.csv. A missing spec aborts before
/// any run.
void run_suite(const std::filesystem::path& suite_file, const std::filesystem::path& out_root,
               const std::filesystem::path& summary_csv);

// ---------------------------------------------------------------------------
// Synthetic corpus generator. The real corpora are license-encumbered, so
// desk-scale runs use templated dialogues with controllable redundancy.
// ---------------------------------------------------------------------------

struct SynthOptions {
  size_t dialogues = 1000;
  std::string style = "echo";  // echo: last turn repeats the previous one;
                               // greetings: templated opening/closing turns
                               // around random-word bodies
  int turns = 3;               // echo: exact turn count; greetings: maximum
  int word_stock = 50;
  int min_words = 3;
  int max_words = 8;
  u64 seed = 0;
};

/// One dialogue per line, utterances TAB-separated.
std::string synth_corpus(const SynthOptions& opts);

}  // namespace dlg
