#include "dlgforge/harness.hpp"

#include <algorithm>
#include <iostream>

namespace dlg {

KvConfig KvConfig::parse(std::string_view text) {
  KvConfig kv;
  for (const std::string& raw : split(text, '\n')) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) fail("malformed config line: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("malformed config line: " + line);
    kv.entries_[key] = value;
  }
  return kv;
}

KvConfig KvConfig::parse_file(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

const std::string& KvConfig::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) fail("missing config key: " + key);
  return it->second;
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

i64 KvConfig::get_int(const std::string& key) const { return std::stoll(get(key)); }
double KvConfig::get_double(const std::string& key) const { return std::stod(get(key)); }
u64 KvConfig::get_u64(const std::string& key) const { return std::stoull(get(key)); }

std::vector<std::string> KvConfig::missing(const std::vector<std::string>& required) const {
  std::vector<std::string> out;
  for (const std::string& k : required)
    if (!has(k)) out.push_back(k);
  return out;
}

std::string KvConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

const std::vector<std::string>& ExperimentSpec::required_keys() {
  static const std::vector<std::string> keys = {
      "name",        "corpus",         "codec",          "tokenizer",      "turns",
      "loss",        "padding",        "preset",         "precision",      "seq_len",
      "dropout",     "init",           "lr",             "adam_beta1",     "adam_beta2",
      "adam_eps",    "batch_size",     "accum_steps",    "max_steps",      "grad_clip",
      "checkpoint_every", "eval_every", "patience",      "min_improvement", "warmup_steps",
      "strategy",    "top_k",          "top_p",          "temperature",    "max_new_tokens",
      "eval_split",  "seed"};
  return keys;
}

ExperimentSpec ExperimentSpec::from_config(const KvConfig& kv) {
  std::vector<std::string> absent = kv.missing(required_keys());
  if (!absent.empty()) {
    std::string msg = "experiment spec missing keys:";
    for (const std::string& k : absent) msg += " " + k;
    fail(msg);
  }
  ExperimentSpec s;
  s.name = kv.get("name");
  s.corpus = kv.get("corpus");
  s.codec_dir = kv.get("codec");
  s.tokenizer = kv.get("tokenizer");
  if (s.tokenizer != "bpe" && s.tokenizer != "basic") fail("tokenizer must be bpe|basic");
  std::string turns = kv.get("turns");
  if (turns != "multi" && turns != "single") fail("turns must be multi|single");
  s.turns = turns == "multi" ? TurnScope::multi : TurnScope::single;
  std::string loss = kv.get("loss");
  if (loss != "joint" && loss != "conditional") fail("loss must be joint|conditional");
  s.loss = loss == "joint" ? LossMode::joint : LossMode::conditional;
  std::string padding = kv.get("padding");
  if (padding != "random" && padding != "static") fail("padding must be random|static");
  s.padding = padding == "random" ? PaddingMode::random : PaddingMode::static_fill;
  s.preset = kv.get("preset");
  s.precision = precision_from_string(kv.get("precision"));
  s.seq_len = static_cast<int>(kv.get_int("seq_len"));
  s.dropout = kv.get_double("dropout");
  s.init = kv.get("init");
  if (s.init != "random" && s.init != "pretrained") fail("init must be random|pretrained");
  s.train.learning_rate = kv.get_double("lr");
  s.train.adam_beta1 = kv.get_double("adam_beta1");
  s.train.adam_beta2 = kv.get_double("adam_beta2");
  s.train.adam_eps = kv.get_double("adam_eps");
  s.train.batch_size = static_cast<int>(kv.get_int("batch_size"));
  s.train.accumulation_steps = static_cast<int>(kv.get_int("accum_steps"));
  s.train.max_steps = kv.get_int("max_steps");
  s.train.grad_clip_norm = kv.get_double("grad_clip");
  s.train.checkpoint_every = kv.get_int("checkpoint_every");
  s.train.eval_every = kv.get_int("eval_every");
  s.train.patience = static_cast<int>(kv.get_int("patience"));
  s.train.min_improvement = kv.get_double("min_improvement");
  s.train.warmup_steps = static_cast<int>(kv.get_int("warmup_steps"));
  s.strategy = strategy_from_string(kv.get("strategy"));
  s.top_k = static_cast<int>(kv.get_int("top_k"));
  s.top_p = kv.get_double("top_p");
  s.temperature = kv.get_double("temperature");
  s.max_new_tokens = static_cast<int>(kv.get_int("max_new_tokens"));
  s.eval_split = kv.get("eval_split");
  if (s.eval_split != "valid" && s.eval_split != "test") fail("eval_split must be valid|test");
  s.seed = kv.get_u64("seed");
  s.train.seed = s.seed;
  return s;
}

KvConfig ExperimentSpec::to_config() const {
  KvConfig kv;
  kv.set("name", name);
  kv.set("corpus", corpus.string());
  kv.set("codec", codec_dir.string());
  kv.set("tokenizer", tokenizer);
  kv.set("turns", turns == TurnScope::multi ? "multi" : "single");
  kv.set("loss", loss == LossMode::joint ? "joint" : "conditional");
  kv.set("padding", padding == PaddingMode::random ? "random" : "static");
  kv.set("preset", preset);
  kv.set("precision", precision_to_string(precision));
  kv.set_int("seq_len", seq_len);
  kv.set_double("dropout", dropout);
  kv.set("init", init);
  kv.set_double("lr", train.learning_rate);
  kv.set_double("adam_beta1", train.adam_beta1);
  kv.set_double("adam_beta2", train.adam_beta2);
  kv.set_double("adam_eps", train.adam_eps);
  kv.set_int("batch_size", train.batch_size);
  kv.set_int("accum_steps", train.accumulation_steps);
  kv.set_int("max_steps", train.max_steps);
  kv.set_double("grad_clip", train.grad_clip_norm);
  kv.set_int("checkpoint_every", train.checkpoint_every);
  kv.set_int("eval_every", train.eval_every);
  kv.set_int("patience", train.patience);
  kv.set_double("min_improvement", train.min_improvement);
  kv.set_int("warmup_steps", train.warmup_steps);
  kv.set("strategy", strategy_to_string(strategy));
  kv.set_int("top_k", top_k);
  kv.set_double("top_p", top_p);
  kv.set_double("temperature", temperature);
  kv.set_int("max_new_tokens", max_new_tokens);
  kv.set("eval_split", eval_split);
  kv.set_int("seed", static_cast<i64>(seed));
  return kv;
}

namespace {

template <class T>
ExperimentResult run_experiment_typed(const ExperimentSpec& spec,
                                      const std::filesystem::path& dir) {
  DialogueCorpus corpus = ingest(spec.corpus);
  assign_splits(corpus, spec.seed);
  std::unique_ptr<TextCodec> codec = load_codec(spec.codec_dir, spec.tokenizer);

  ModelConfig mcfg = preset_config(spec.preset);
  mcfg.vocab_size = codec->vocab_size();
  mcfg.max_seq_len = spec.seq_len;
  mcfg.dropout = spec.dropout;
  mcfg.precision = spec.precision;
  mcfg.validate();

  if (spec.init == "pretrained")
    std::cerr << "note: pretrained initialization is a configuration stub; "
                 "initializing randomly\n";
  Parameters<T> params = init_parameters<T>(mcfg, hash_mix({spec.seed, 0x1417ull}));

  AssemblyConfig acfg;
  acfg.padding = spec.padding;
  acfg.loss = spec.loss;
  acfg.turns = spec.turns;
  acfg.max_seq_len = spec.seq_len;

  ExampleStream train_stream(corpus, *codec, acfg, Split::train, spec.train.batch_size, spec.seed);
  std::vector<Batch> valid_batches;
  if (!corpus.split_indices(Split::valid).empty()) {
    ExampleStream vs(corpus, *codec, acfg, Split::valid, spec.train.batch_size,
                     hash_mix({spec.seed, 0x7A11Dull}));
    for (size_t i = 0; i < vs.batches_per_epoch(); ++i) valid_batches.push_back(vs.batch(i));
  }

  MetricsLog log(dir / "logs" / "metrics.csv");
  AdamState<T> adam(params.flat.size());
  ExperimentResult result;
  result.dir = dir;
  std::filesystem::create_directories(dir / "checkpoints");
  result.train = train_model(params, adam, 0, train_stream, valid_batches, spec.train,
                             dir / "checkpoints", codec->vocab_hash(), &log);

  // Generation over the held-out split with the spec's sampling settings.
  Split eval_split = split_from_string(spec.eval_split);
  std::vector<size_t> pool = corpus.split_indices(eval_split);
  if (pool.empty()) fail("evaluation split is empty");
  std::vector<GenRecord> records(pool.size());
#pragma omp parallel for schedule(dynamic)
  for (i64 i = 0; i < static_cast<i64>(pool.size()); ++i) {
    const Dialogue& d = corpus.dialogues[pool[static_cast<size_t>(i)]];
    size_t first = spec.turns == TurnScope::single ? d.utterances.size() - 2 : 0;
    std::vector<std::string> context(d.utterances.begin() + static_cast<ptrdiff_t>(first),
                                     d.utterances.end() - 1);
    GenerationConfig gen;
    gen.strategy = spec.strategy;
    gen.top_k = spec.top_k;
    gen.top_p = spec.top_p;
    gen.temperature = spec.temperature;
    gen.max_new_tokens = spec.max_new_tokens;
    gen.seed = hash_mix({spec.seed, 0x6E211ull, static_cast<u64>(i)});
    GenerationResult r = generate(params, *codec, context, gen);
    GenRecord rec;
    std::string ctx_text;
    for (size_t u = 0; u < context.size(); ++u) {
      if (u > 0) ctx_text += '\t';
      ctx_text += context[u];
    }
    rec.context = ctx_text;
    rec.groundtruth = d.utterances.back();
    rec.generated = codec->decode(r.ids);
    records[static_cast<size_t>(i)] = std::move(rec);
  }
  write_generations_jsonl(dir / "eval" / "generations.jsonl", records);
  result.report = evaluate_run_file(dir / "eval" / "generations.jsonl");
  write_text_file(dir / "eval" / "report.csv", report_to_csv(result.report));
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_root) {
  if (spec.name.empty()) fail("experiment name must not be empty");
  std::filesystem::path dir = out_root / spec.name;
  std::filesystem::create_directories(dir);
  write_text_file(dir / "config.txt", spec.to_config().serialize());
  if (spec.precision == Precision::f64) return run_experiment_typed<double>(spec, dir);
  return run_experiment_typed<float>(spec, dir);
}

void run_suite(const std::filesystem::path& suite_file, const std::filesystem::path& out_root,
               const std::filesystem::path& summary_csv) {
  std::string text = read_text_file(suite_file);
  std::filesystem::path base = suite_file.parent_path();
  std::vector<std::filesystem::path> spec_paths;
  for (const std::string& raw : split(text, '\n')) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    std::filesystem::path p = line;
    if (p.is_relative()) p = base / p;
    spec_paths.push_back(p);
  }
  for (const auto& p : spec_paths)
    if (!std::filesystem::exists(p)) fail("missing spec file: " + p.string());

  std::string summary = "name,bleu2,rouge2,dist1,dist2,nasl\n";
  for (const auto& p : spec_paths) {
    ExperimentSpec spec = ExperimentSpec::from_config(KvConfig::parse_file(p));
    ExperimentResult r = run_experiment(spec, out_root);
    // Copy the report row verbatim so summary values match report.csv exactly.
    std::string report = read_text_file(r.dir / "eval" / "report.csv");
    std::vector<std::string> lines = split(report, '\n');
    if (lines.size() < 2) fail("malformed report.csv for " + spec.name);
    summary += spec.name + "," + lines[1] + "\n";
  }
  write_text_file(summary_csv, summary);
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

namespace {

const char* kSyllables[] = {"ba", "ko", "mi", "ta", "ru", "zen", "po", "li",
                            "da", "su", "ne", "go", "fa", "ve", "sho", "ki"};

std::string make_word(Rng& rng) {
  int syllables = 2 + static_cast<int>(rng.uniform_u64(2));
  std::string w;
  for (int s = 0; s < syllables; ++s)
    w += kSyllables[rng.uniform_u64(sizeof(kSyllables) / sizeof(kSyllables[0]))];
  return w;
}

const std::vector<std::string>& greeting_templates() {
  static const std::vector<std::string> v = {
      "hello there friend", "hello there buddy", "hi how are you today", "hi there good day"};
  return v;
}

const std::vector<std::string>& closing_templates() {
  static const std::vector<std::string> v = {
      "bye for now", "bye bye then", "see you later", "see you soon"};
  return v;
}

}  // namespace

std::string synth_corpus(const SynthOptions& opts) {
  if (opts.dialogues == 0) fail("dialogues must be > 0");
  if (opts.turns < 2) fail("turns must be >= 2");
  if (opts.style != "echo" && opts.style != "greetings") fail("style must be echo|greetings");
  if (opts.min_words < 1 || opts.max_words < opts.min_words) fail("bad word-count range");

  Rng word_rng(hash_mix({opts.seed, 0x30CA8ull}));
  std::vector<std::string> stock;
  while (static_cast<int>(stock.size()) < opts.word_stock) {
    std::string w = make_word(word_rng);
    if (std::find(stock.begin(), stock.end(), w) == stock.end()) stock.push_back(w);
  }

  Rng rng(hash_mix({opts.seed, 0xD1A106ull}));
  auto random_utterance = [&]() {
    int n = opts.min_words + static_cast<int>(rng.uniform_u64(
                                 static_cast<u64>(opts.max_words - opts.min_words + 1)));
    std::string u;
    for (int i = 0; i < n; ++i) {
      if (i > 0) u += ' ';
      u += stock[rng.uniform_u64(stock.size())];
    }
    return u;
  };

  std::string out;
  for (size_t d = 0; d < opts.dialogues; ++d) {
    std::vector<std::string> utts;
    if (opts.style == "echo") {
      for (int t = 0; t + 1 < opts.turns; ++t) utts.push_back(random_utterance());
      utts.push_back(utts.back());  // response repeats the previous turn
    } else {
      int turns = 2 + static_cast<int>(rng.uniform_u64(static_cast<u64>(opts.turns - 1)));
      utts.push_back(greeting_templates()[rng.uniform_u64(greeting_templates().size())]);
      for (int t = 0; t < turns - 2; ++t) utts.push_back(random_utterance());
      utts.push_back(closing_templates()[rng.uniform_u64(closing_templates().size())]);
    }
    for (size_t u = 0; u < utts.size(); ++u) {
      if (u > 0) out += '\t';
      out += utts[u];
    }
    out += '\n';
  }
  return out;
}

}  // namespace dlg
