// dlgforge: desk-scale multi-turn dialogue language modeling toolkit.

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dlgforge/corpus.hpp"
#include "dlgforge/entropy.hpp"
#include "dlgforge/harness.hpp"
#include "dlgforge/metrics.hpp"
#include "dlgforge/model.hpp"
#include "dlgforge/sampling.hpp"
#include "dlgforge/tokenizer.hpp"
#include "dlgforge/training.hpp"

namespace {

using namespace dlg;

struct TokCommon {
  std::string codec_dir;
  std::string kind = "bpe";
};

std::vector<i32> parse_ids(const std::string& text) {
  std::vector<i32> ids;
  for (const std::string& tok : split(text, ' ')) {
    std::string t = trim(tok);
    if (!t.empty()) ids.push_back(static_cast<i32>(std::stol(t)));
  }
  return ids;
}

template <class F>
void dispatch_precision(Precision p, F&& f) {
  if (p == Precision::f64)
    f(double{});
  else
    f(float{});
}

int cmd_synth(const std::string& out, const SynthOptions& opts) {
  std::string corpus = synth_corpus(opts);
  write_text_file(out, corpus);
  std::cout << "wrote " << opts.dialogues << " dialogues to " << out << "\n";
  return 0;
}

int cmd_tokenizer_train(const std::string& corpus_path, int vocab_size, const std::string& out_dir,
                        const std::string& kind, int min_freq) {
  std::string text = read_text_file(corpus_path);
  if (kind == "bpe") {
    BpeCodec codec = BpeCodec::train(text, vocab_size);
    codec.save(out_dir);
    std::cout << "bpe codec: vocab " << codec.vocab_size() << ", merges " << codec.merges().size()
              << ", hash " << to_hex64(codec.vocab_hash()) << "\n";
  } else if (kind == "basic") {
    BasicVocab vocab = BasicVocab::build(text, min_freq);
    vocab.save(out_dir);
    std::cout << "basic vocab: " << vocab.vocab_size() << " entries, coverage "
              << fmt_double(vocab.coverage()) << ", hash " << to_hex64(vocab.vocab_hash()) << "\n";
  } else {
    fail("unknown tokenizer kind: " + kind);
  }
  return 0;
}

int cmd_tokenizer_encode(const TokCommon& tok, const std::string& text_arg,
                         const std::string& in_file) {
  std::unique_ptr<TextCodec> codec = load_codec(tok.codec_dir, tok.kind);
  std::string text = !in_file.empty() ? read_text_file(in_file) : text_arg;
  std::vector<i32> ids = codec->encode(text);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) std::cout << ' ';
    std::cout << ids[i];
  }
  std::cout << "\n";
  return 0;
}

int cmd_tokenizer_decode(const TokCommon& tok, const std::string& ids_arg,
                         const std::string& in_file) {
  std::unique_ptr<TextCodec> codec = load_codec(tok.codec_dir, tok.kind);
  std::string text = !in_file.empty() ? read_text_file(in_file) : ids_arg;
  std::cout << codec->decode(parse_ids(text)) << "\n";
  return 0;
}

int cmd_data_prepare(const std::string& corpus_path, const TokCommon& tok, const std::string& mode,
                     const std::string& loss, const std::string& turns, int seq_len, u64 seed,
                     const std::string& split_name, const std::string& out, size_t limit) {
  DialogueCorpus corpus = ingest(corpus_path);
  assign_splits(corpus, seed);
  std::unique_ptr<TextCodec> codec = load_codec(tok.codec_dir, tok.kind);

  AssemblyConfig cfg;
  cfg.padding = mode == "random" ? PaddingMode::random : PaddingMode::static_fill;
  cfg.loss = loss == "joint" ? LossMode::joint : LossMode::conditional;
  cfg.turns = turns == "multi" ? TurnScope::multi : TurnScope::single;
  cfg.max_seq_len = seq_len;
  Split split = split_from_string(split_name);

  Assembler assembler(corpus, *codec, cfg);
  std::vector<TrainingExample> examples;
  size_t skipped = 0;
  for (size_t i : corpus.split_indices(split)) {
    if (limit > 0 && examples.size() >= limit) break;
    if (!assembler.fits(i)) {
      ++skipped;
      continue;
    }
    Rng rng(hash_mix({seed, 0x94E9ull, i}));
    examples.push_back(assembler.assemble(i, rng));
  }
  if (examples.empty()) fail("empty corpus");
  write_example_cache(out, examples, cfg, codec->vocab_hash(), seed, split);
  std::cout << "wrote " << examples.size() << " examples (" << skipped
            << " skipped as too long) to " << out << "\n";
  return 0;
}

int cmd_entropy(const std::string& corpus_path, const TokCommon& tok, const std::string& variants,
                const std::string& out_dir, const std::string& split_name, int seq_len, u64 seed,
                int min_freq) {
  DialogueCorpus corpus = ingest(corpus_path);
  assign_splits(corpus, seed);
  EntropyReportOptions opts;
  for (const std::string& v : split(variants, ',')) {
    std::string t = trim(v);
    if (!t.empty()) opts.variants.push_back(t);
  }
  opts.split = split_from_string(split_name);
  opts.max_seq_len = seq_len;
  opts.seed = seed;
  opts.basic_min_frequency = min_freq;

  std::unique_ptr<TextCodec> codec;
  bool needs_codec = false;
  for (const std::string& v : opts.variants)
    if (v == "bpe" || v == "padded") needs_codec = true;
  if (needs_codec) codec = load_codec(tok.codec_dir, tok.kind);

  std::vector<EntropyProfile> profiles = profile_report(corpus, codec.get(), opts, out_dir);
  for (size_t i = 0; i < profiles.size(); ++i)
    std::cout << opts.variants[i] << ": " << profiles[i].positions() << " positions, stddev "
              << fmt_double(profile_stddev(profiles[i])) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir) {
  KvConfig kv = KvConfig::parse_file(config_path);
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos) fail("override must be key=value: " + ov);
    kv.set(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  // The training CLI uses the experiment schema but fills defaults for
  // anything omitted, then runs prepare+train (no generation/eval stages).
  KvConfig defaults;
  defaults.set("name", "train");
  defaults.set("tokenizer", "bpe");
  defaults.set("turns", "multi");
  defaults.set("loss", "joint");
  defaults.set("padding", "random");
  defaults.set("preset", "tiny");
  defaults.set("precision", "f64");
  defaults.set_int("seq_len", 64);
  defaults.set_double("dropout", 0.1);
  defaults.set("init", "random");
  defaults.set_double("lr", 0.001);
  defaults.set_double("adam_beta1", 0.9);
  defaults.set_double("adam_beta2", 0.999);
  defaults.set("adam_eps", "1e-8");
  defaults.set_int("batch_size", 2);
  defaults.set_int("accum_steps", 5);
  defaults.set_int("max_steps", 100);
  defaults.set_double("grad_clip", 0);
  defaults.set_int("checkpoint_every", 0);
  defaults.set_int("eval_every", 50);
  defaults.set_int("patience", 5);
  defaults.set_double("min_improvement", 0.001);
  defaults.set_int("warmup_steps", 0);
  defaults.set("strategy", "greedy");
  defaults.set_int("top_k", 0);
  defaults.set_double("top_p", 1.0);
  defaults.set_double("temperature", 1.0);
  defaults.set_int("max_new_tokens", 32);
  defaults.set("eval_split", "valid");
  defaults.set_int("seed", 1);
  for (const auto& [k, v] : defaults.entries())
    if (!kv.has(k)) kv.set(k, v);

  ExperimentSpec spec = ExperimentSpec::from_config(kv);
  DialogueCorpus corpus = ingest(spec.corpus);
  assign_splits(corpus, spec.seed);
  std::unique_ptr<TextCodec> codec = load_codec(spec.codec_dir, spec.tokenizer);

  ModelConfig mcfg = preset_config(spec.preset);
  mcfg.vocab_size = codec->vocab_size();
  mcfg.max_seq_len = spec.seq_len;
  mcfg.dropout = spec.dropout;
  mcfg.precision = spec.precision;
  mcfg.validate();

  AssemblyConfig acfg;
  acfg.padding = spec.padding;
  acfg.loss = spec.loss;
  acfg.turns = spec.turns;
  acfg.max_seq_len = spec.seq_len;

  dispatch_precision(spec.precision, [&](auto tag) {
    using T = decltype(tag);
    Parameters<T> params = init_parameters<T>(mcfg, hash_mix({spec.seed, 0x1417ull}));
    ExampleStream stream(corpus, *codec, acfg, Split::train, spec.train.batch_size, spec.seed);
    std::vector<Batch> valid_batches;
    if (!corpus.split_indices(Split::valid).empty()) {
      ExampleStream vs(corpus, *codec, acfg, Split::valid, spec.train.batch_size,
                       hash_mix({spec.seed, 0x7A11Dull}));
      for (size_t i = 0; i < vs.batches_per_epoch(); ++i) valid_batches.push_back(vs.batch(i));
    }
    MetricsLog log(std::filesystem::path(out_dir) / "logs" / "metrics.csv");
    AdamState<T> adam(params.flat.size());
    TrainResult r = train_model(params, adam, 0, stream, valid_batches, spec.train,
                                std::filesystem::path(out_dir) / "checkpoints",
                                codec->vocab_hash(), &log);
    std::cout << "trained " << r.steps_done << " steps, final train loss "
              << fmt_double(r.final_train_loss) << (r.early_stopped ? " (early stop)" : "")
              << "\ncheckpoint: " << r.final_checkpoint.string() << "\n";
  });
  return 0;
}

struct GenCliOptions {
  std::string checkpoint, corpus_path, context, split_name = "test", out, turns = "multi";
  std::string strategy = "greedy";
  int top_k = 0;
  double top_p = 1.0;
  double temperature = 1.0;
  int max_new = 32;
  u64 seed = 0;
  size_t limit = 0;
};

int cmd_generate(const TokCommon& tok, const GenCliOptions& o) {
  std::unique_ptr<TextCodec> codec = load_codec(tok.codec_dir, tok.kind);
  CheckpointInfo info = read_checkpoint_header(o.checkpoint);

  GenerationConfig gen;
  gen.strategy = strategy_from_string(o.strategy);
  gen.top_k = o.top_k;
  gen.top_p = o.top_p;
  gen.temperature = o.temperature;
  gen.max_new_tokens = o.max_new;

  int rc = 0;
  dispatch_precision(info.config.precision, [&](auto tag) {
    using T = decltype(tag);
    Parameters<T> params(info.config);
    load_checkpoint(o.checkpoint, params, codec->vocab_hash());

    if (!o.context.empty()) {
      std::vector<std::string> context;
      for (const std::string& u : split(o.context, '\t'))
        if (!trim(u).empty()) context.push_back(trim(u));
      gen.seed = o.seed;
      GenerationResult r = generate(params, *codec, context, gen);
      std::cout << codec->decode(r.ids) << "\n";
      return;
    }
    if (o.corpus_path.empty()) fail("provide --context or --corpus");
    DialogueCorpus corpus = ingest(o.corpus_path);
    assign_splits(corpus, o.seed);
    std::vector<size_t> pool = corpus.split_indices(split_from_string(o.split_name));
    if (o.limit > 0 && pool.size() > o.limit) pool.resize(o.limit);
    if (pool.empty()) fail("empty split");
    std::vector<GenRecord> records(pool.size());
#pragma omp parallel for schedule(dynamic)
    for (i64 i = 0; i < static_cast<i64>(pool.size()); ++i) {
      const Dialogue& d = corpus.dialogues[pool[static_cast<size_t>(i)]];
      size_t first = o.turns == "single" ? d.utterances.size() - 2 : 0;
      std::vector<std::string> context(d.utterances.begin() + static_cast<ptrdiff_t>(first),
                                       d.utterances.end() - 1);
      GenerationConfig g = gen;
      g.seed = hash_mix({o.seed, 0x6E211ull, static_cast<u64>(i)});
      GenerationResult r = generate(params, *codec, context, g);
      GenRecord rec;
      for (size_t u = 0; u < context.size(); ++u) {
        if (u > 0) rec.context += '\t';
        rec.context += context[u];
      }
      rec.groundtruth = d.utterances.back();
      rec.generated = codec->decode(r.ids);
      records[static_cast<size_t>(i)] = std::move(rec);
    }
    if (o.out.empty()) fail("--out required for corpus generation");
    write_generations_jsonl(o.out, records);
    std::cout << "wrote " << records.size() << " generations to " << o.out << "\n";
  });
  return rc;
}

int cmd_sweep(const TokCommon& tok, const std::string& param, const std::string& checkpoint,
              const std::string& corpus_path, const std::string& split_name, const std::string& out,
              u64 seed, int max_new, size_t max_contexts, const std::string& turns) {
  std::unique_ptr<TextCodec> codec = load_codec(tok.codec_dir, tok.kind);
  CheckpointInfo info = read_checkpoint_header(checkpoint);
  DialogueCorpus corpus = ingest(corpus_path);
  assign_splits(corpus, seed);

  SweepOptions opts;
  opts.turns = turns == "single" ? TurnScope::single : TurnScope::multi;
  opts.max_new_tokens = max_new;
  opts.seed = seed;
  opts.max_contexts = max_contexts;

  dispatch_precision(info.config.precision, [&](auto tag) {
    using T = decltype(tag);
    Parameters<T> params(info.config);
    load_checkpoint(checkpoint, params, codec->vocab_hash());
    SweepResult r;
    if (param == "top_k")
      r = sweep_top_k(params, *codec, corpus, split_from_string(split_name), default_k_grid(), opts);
    else if (param == "top_p")
      r = sweep_top_p(params, *codec, corpus, split_from_string(split_name), default_p_grid(), opts);
    else
      fail("--param must be top_k or top_p");
    write_text_file(out, sweep_to_csv(r));
    std::cout << "best " << param << " = " << fmt_double(r.best_param) << " (by BLEU-2); wrote "
              << r.rows.size() << " rows to " << out << "\n";
  });
  return 0;
}

int cmd_evaluate(const std::string& run_file, const std::string& out, const std::string& bleu_mode,
                 const std::string& rouge_mode) {
  EvalOptions opts;
  opts.bleu.corpus_level = bleu_mode == "corpus";
  opts.rouge = rouge_mode == "recall" ? RougeVariant::recall : RougeVariant::f1;
  MetricReport report = evaluate_run_file(run_file, opts);
  std::string csv = report_to_csv(report);
  if (!out.empty()) write_text_file(out, csv);
  std::cout << csv;
  if (report.skipped_rows > 0) std::cerr << report.skipped_rows << " rows skipped\n";
  return 0;
}

int cmd_chat(const TokCommon& tok, const std::string& checkpoint, const GenCliOptions& o) {
  std::unique_ptr<TextCodec> codec = load_codec(tok.codec_dir, tok.kind);
  CheckpointInfo info = read_checkpoint_header(checkpoint);
  GenerationConfig gen;
  gen.strategy = strategy_from_string(o.strategy);
  gen.top_k = o.top_k;
  gen.top_p = o.top_p;
  gen.temperature = o.temperature;
  gen.max_new_tokens = o.max_new;

  dispatch_precision(info.config.precision, [&](auto tag) {
    using T = decltype(tag);
    Parameters<T> params(info.config);
    load_checkpoint(checkpoint, params, codec->vocab_hash());
    std::vector<std::string> context;
    std::string line;
    u64 turn = 0;
    std::cout << "dlgforge chat; /reset clears context, ctrl-d exits\n> " << std::flush;
    while (std::getline(std::cin, line)) {
      line = trim(line);
      if (line == "/reset") {
        context.clear();
        std::cout << "(context cleared)\n> " << std::flush;
        continue;
      }
      if (!line.empty()) {
        context.push_back(line);
        GenerationConfig g = gen;
        g.seed = hash_mix({o.seed, 0xC47ull, turn++});
        GenerationResult r = generate(params, *codec, context, g);
        std::string reply = codec->decode(r.ids);
        std::cout << reply << "\n";
        context.push_back(reply);
      }
      std::cout << "> " << std::flush;
    }
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dlgforge: desk-scale multi-turn dialogue language modeling"};
  app.require_subcommand(1);

  // --- synth ---
  auto* synth = app.add_subcommand("synth", "generate a synthetic dialogue corpus");
  std::string synth_out;
  SynthOptions sopts;
  synth->add_option("--out", synth_out, "output corpus path")->required();
  synth->add_option("--dialogues", sopts.dialogues, "number of dialogues");
  synth->add_option("--style", sopts.style, "echo|greetings");
  synth->add_option("--turns", sopts.turns, "turns per dialogue");
  synth->add_option("--word-stock", sopts.word_stock, "distinct body words");
  synth->add_option("--min-words", sopts.min_words, "min words per utterance");
  synth->add_option("--max-words", sopts.max_words, "max words per utterance");
  synth->add_option("--seed", sopts.seed, "rng seed");

  // --- tokenizer ---
  auto* tokenizer = app.add_subcommand("tokenizer", "train or apply a codec");
  tokenizer->require_subcommand(1);
  auto* tok_train = tokenizer->add_subcommand("train", "learn a codec from a corpus");
  std::string tt_corpus, tt_out, tt_kind = "bpe";
  int tt_vocab = 512, tt_minfreq = 2;
  tok_train->add_option("--corpus", tt_corpus, "training text")->required();
  tok_train->add_option("--vocab-size", tt_vocab, "target vocabulary size (bpe)");
  tok_train->add_option("--out", tt_out, "output codec directory")->required();
  tok_train->add_option("--kind", tt_kind, "bpe|basic");
  tok_train->add_option("--min-freq", tt_minfreq, "frequency cutoff (basic)");

  TokCommon enc_tok;
  std::string enc_text, enc_in;
  auto* tok_encode = tokenizer->add_subcommand("encode", "text -> token ids");
  tok_encode->add_option("--codec", enc_tok.codec_dir, "codec directory")->required();
  tok_encode->add_option("--kind", enc_tok.kind, "bpe|basic");
  tok_encode->add_option("--text", enc_text, "text to encode");
  tok_encode->add_option("--in", enc_in, "read text from file");

  TokCommon dec_tok;
  std::string dec_ids, dec_in;
  auto* tok_decode = tokenizer->add_subcommand("decode", "token ids -> text");
  tok_decode->add_option("--codec", dec_tok.codec_dir, "codec directory")->required();
  tok_decode->add_option("--kind", dec_tok.kind, "bpe|basic");
  tok_decode->add_option("--ids", dec_ids, "space-separated ids");
  tok_decode->add_option("--in", dec_in, "read ids from file");

  // --- data prepare ---
  auto* data = app.add_subcommand("data", "dataset assembly");
  data->require_subcommand(1);
  auto* prepare = data->add_subcommand("prepare", "assemble and cache training examples");
  std::string dp_corpus, dp_mode = "random", dp_loss = "joint", dp_turns = "multi";
  std::string dp_split = "train", dp_out;
  TokCommon dp_tok;
  int dp_seqlen = 64;
  u64 dp_seed = 0;
  size_t dp_limit = 0;
  prepare->add_option("--corpus", dp_corpus, "corpus path")->required();
  prepare->add_option("--codec", dp_tok.codec_dir, "codec directory")->required();
  prepare->add_option("--kind", dp_tok.kind, "bpe|basic");
  prepare->add_option("--mode", dp_mode, "random|static");
  prepare->add_option("--loss", dp_loss, "joint|conditional");
  prepare->add_option("--turns", dp_turns, "multi|single");
  prepare->add_option("--seq-len", dp_seqlen, "window length");
  prepare->add_option("--seed", dp_seed, "rng seed");
  prepare->add_option("--split", dp_split, "train|valid|test");
  prepare->add_option("--out", dp_out, "output cache file")->required();
  prepare->add_option("--limit", dp_limit, "max examples (0 = all)");

  // --- entropy ---
  auto* entropy = app.add_subcommand("entropy", "positional entropy profiles");
  std::string en_corpus, en_variants = "basic,bpe,padded", en_out, en_split = "train";
  TokCommon en_tok;
  int en_seqlen = 128, en_minfreq = 1;
  u64 en_seed = 0;
  entropy->add_option("--corpus", en_corpus, "corpus path")->required();
  entropy->add_option("--codec", en_tok.codec_dir, "codec directory (for bpe/padded)");
  entropy->add_option("--kind", en_tok.kind, "bpe|basic");
  entropy->add_option("--variants", en_variants, "comma list of basic,bpe,padded");
  entropy->add_option("--out", en_out, "output directory")->required();
  entropy->add_option("--split", en_split, "train|valid|test");
  entropy->add_option("--seq-len", en_seqlen, "window for the padded variant");
  entropy->add_option("--seed", en_seed, "padding seed");
  entropy->add_option("--min-freq", en_minfreq, "basic tokenizer cutoff");

  // --- train ---
  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string tr_config, tr_out = "runs/train";
  std::vector<std::string> tr_sets;
  train->add_option("--config", tr_config, "flat key = value config")->required();
  train->add_option("--out", tr_out, "output directory");
  train->add_option("--set", tr_sets, "override config keys (key=value)");

  // --- generate ---
  auto* generate_cmd = app.add_subcommand("generate", "generate responses");
  TokCommon gen_tok;
  GenCliOptions gen_opts;
  generate_cmd->add_option("--checkpoint", gen_opts.checkpoint, "model checkpoint")->required();
  generate_cmd->add_option("--codec", gen_tok.codec_dir, "codec directory")->required();
  generate_cmd->add_option("--kind", gen_tok.kind, "bpe|basic");
  generate_cmd->add_option("--corpus", gen_opts.corpus_path, "corpus for batch generation");
  generate_cmd->add_option("--split", gen_opts.split_name, "train|valid|test");
  generate_cmd->add_option("--context", gen_opts.context, "TAB-separated utterances");
  generate_cmd->add_option("--strategy", gen_opts.strategy, "greedy|top_k|top_p");
  generate_cmd->add_option("--k", gen_opts.top_k, "top-k cutoff (0 = none)");
  generate_cmd->add_option("--p", gen_opts.top_p, "top-p mass");
  generate_cmd->add_option("--temperature", gen_opts.temperature, "softmax temperature");
  generate_cmd->add_option("--max-new", gen_opts.max_new, "max new tokens");
  generate_cmd->add_option("--seed", gen_opts.seed, "rng seed");
  generate_cmd->add_option("--out", gen_opts.out, "output JSONL");
  generate_cmd->add_option("--turns", gen_opts.turns, "multi|single context scope");
  generate_cmd->add_option("--limit", gen_opts.limit, "max contexts (0 = all)");

  // --- sweep ---
  auto* sweep = app.add_subcommand("sweep", "top-k / top-p metric sweeps");
  TokCommon sw_tok;
  std::string sw_param = "top_k", sw_checkpoint, sw_corpus, sw_split = "valid", sw_out,
              sw_turns = "multi";
  u64 sw_seed = 0;
  int sw_maxnew = 32;
  size_t sw_maxctx = 0;
  sweep->add_option("--param", sw_param, "top_k|top_p")->required();
  sweep->add_option("--checkpoint", sw_checkpoint, "model checkpoint")->required();
  sweep->add_option("--codec", sw_tok.codec_dir, "codec directory")->required();
  sweep->add_option("--kind", sw_tok.kind, "bpe|basic");
  sweep->add_option("--corpus", sw_corpus, "corpus path")->required();
  sweep->add_option("--split", sw_split, "train|valid|test");
  sweep->add_option("--out", sw_out, "output CSV")->required();
  sweep->add_option("--seed", sw_seed, "rng seed");
  sweep->add_option("--max-new", sw_maxnew, "max new tokens");
  sweep->add_option("--max-contexts", sw_maxctx, "cap contexts (0 = all)");
  sweep->add_option("--turns", sw_turns, "multi|single");

  // --- evaluate ---
  auto* evaluate = app.add_subcommand("evaluate", "score a generation run file");
  std::string ev_run, ev_out, ev_bleu = "sentence", ev_rouge = "f1";
  evaluate->add_option("--run", ev_run, "JSONL/CSV run file")->required();
  evaluate->add_option("--out", ev_out, "report CSV path");
  evaluate->add_option("--bleu", ev_bleu, "sentence|corpus");
  evaluate->add_option("--rouge", ev_rouge, "f1|recall");

  // --- experiment ---
  auto* experiment = app.add_subcommand("experiment", "run one ablation experiment");
  experiment->require_subcommand(1);
  auto* exp_run = experiment->add_subcommand("run", "execute a spec file");
  std::string ex_spec, ex_out = "runs";
  exp_run->add_option("--spec", ex_spec, "experiment spec file")->required();
  exp_run->add_option("--out", ex_out, "output root directory");

  // --- suite ---
  auto* suite = app.add_subcommand("suite", "run a list of experiments");
  suite->require_subcommand(1);
  auto* suite_run = suite->add_subcommand("run", "execute every spec in a suite file");
  std::string su_file, su_out = "runs", su_summary;
  suite_run->add_option("--suite", su_file, "suite file (one spec path per line)")->required();
  suite_run->add_option("--out", su_out, "output root directory");
  suite_run->add_option("--summary", su_summary, "summary CSV path");

  // --- chat ---
  auto* chat = app.add_subcommand("chat", "minimal interactive loop");
  TokCommon chat_tok;
  GenCliOptions chat_opts;
  chat->add_option("--checkpoint", chat_opts.checkpoint, "model checkpoint")->required();
  chat->add_option("--codec", chat_tok.codec_dir, "codec directory")->required();
  chat->add_option("--kind", chat_tok.kind, "bpe|basic");
  chat->add_option("--strategy", chat_opts.strategy, "greedy|top_k|top_p");
  chat->add_option("--k", chat_opts.top_k, "top-k cutoff");
  chat->add_option("--p", chat_opts.top_p, "top-p mass");
  chat->add_option("--temperature", chat_opts.temperature, "softmax temperature");
  chat->add_option("--max-new", chat_opts.max_new, "max new tokens");
  chat->add_option("--seed", chat_opts.seed, "rng seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(synth_out, sopts);
    if (*tok_train) return cmd_tokenizer_train(tt_corpus, tt_vocab, tt_out, tt_kind, tt_minfreq);
    if (*tok_encode) return cmd_tokenizer_encode(enc_tok, enc_text, enc_in);
    if (*tok_decode) return cmd_tokenizer_decode(dec_tok, dec_ids, dec_in);
    if (*prepare)
      return cmd_data_prepare(dp_corpus, dp_tok, dp_mode, dp_loss, dp_turns, dp_seqlen, dp_seed,
                              dp_split, dp_out, dp_limit);
    if (*entropy)
      return cmd_entropy(en_corpus, en_tok, en_variants, en_out, en_split, en_seqlen, en_seed,
                         en_minfreq);
    if (*train) return cmd_train(tr_config, tr_sets, tr_out);
    if (*generate_cmd) return cmd_generate(gen_tok, gen_opts);
    if (*sweep)
      return cmd_sweep(sw_tok, sw_param, sw_checkpoint, sw_corpus, sw_split, sw_out, sw_seed,
                       sw_maxnew, sw_maxctx, sw_turns);
    if (*evaluate) return cmd_evaluate(ev_run, ev_out, ev_bleu, ev_rouge);
    if (*exp_run) {
      ExperimentSpec spec = ExperimentSpec::from_config(KvConfig::parse_file(ex_spec));
      ExperimentResult r = run_experiment(spec, ex_out);
      std::cout << "experiment " << spec.name << " done; report:\n" << report_to_csv(r.report);
      return 0;
    }
    if (*suite_run) {
      std::filesystem::path summary =
          su_summary.empty() ? std::filesystem::path(su_out) / "summary.csv"
                             : std::filesystem::path(su_summary);
      run_suite(su_file, su_out, summary);
      std::cout << "suite done; summary: " << summary.string() << "\n";
      return 0;
    }
    if (*chat) return cmd_chat(chat_tok, chat_opts.checkpoint, chat_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
