// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria run in order and share the artifacts built along the way
// (synthetic corpora, codecs, the trained echo models).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <vector>

#include "dlgforge/entropy.hpp"
#include "dlgforge/harness.hpp"
#include "dlgforge/kernels.hpp"
#include "dlgforge/metrics.hpp"
#include "dlgforge/sampling.hpp"
#include "dlgforge/training.hpp"
#include "metric_oracles.hpp"

using namespace dlg;
namespace fs = std::filesystem;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// Shared context across criteria.
struct Ctx {
  fs::path work;

  // Echo task (criteria 3-6, 8, 9).
  DialogueCorpus echo_corpus;
  BpeCodec echo_codec{BpeCodec::train("placeholder", 260)};
  static constexpr int kEchoSeqLen = 32;

  // Trained small models from criterion 5, reused by criterion 8.
  ModelConfig small_cfg;
  Parameters<float> joint_params{ModelConfig{.vocab_size = 2}};
  bool have_joint = false;

  Ctx() {
    work = fs::temp_directory_path() / "dlgforge_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    SynthOptions so;
    so.dialogues = 2500;
    so.style = "echo";
    so.turns = 3;
    so.word_stock = 30;
    so.min_words = 2;
    so.max_words = 4;
    so.seed = 1001;
    echo_corpus = ingest_text(synth_corpus(so));
    assign_splits(echo_corpus, 7);
    std::string train_text;
    for (size_t i : echo_corpus.split_indices(Split::train))
      for (const auto& u : echo_corpus.dialogues[i].utterances) train_text += u + "\n";
    // Large enough merge budget that body words become single tokens.
    echo_codec = BpeCodec::train(train_text, 600);
  }

  ModelConfig tiny_cfg() const {
    ModelConfig c = preset_config("tiny");
    c.vocab_size = echo_codec.vocab_size();
    c.max_seq_len = kEchoSeqLen;
    c.dropout = 0.0;
    c.precision = Precision::f64;
    return c;
  }
};

// ---------------------------------------------------------------------------
// 1. Tokenizer roundtrip on 1000 fuzzed Unicode strings.
// ---------------------------------------------------------------------------
void criterion_1(Ctx& ctx, Check& c) {
  static const std::vector<std::string> pieces = {
      "a",  "b",    "z",  "Q",  " ",  "  ", "\t", "\n", "\r", "0",  "9",  "~", "!",
      "\\", "\"",   "'",  "é",  "ß",  "ç",  "Ω",  "λ",  "ж",  "ب",  "気", "送", "한",
      "🙂", "🚀",   "🎉", "€",  "“",  "…",  "\x01", "\x07", "\x1B", "\x7F"};
  Rng rng(4242);
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    size_t len = rng.uniform_u64(32);
    for (size_t k = 0; k < len; ++k) s += pieces[rng.uniform_u64(pieces.size())];
    std::string back = ctx.echo_codec.decode(ctx.echo_codec.encode(s));
    if (back != s) {
      c.require(false, "roundtrip failed on string " + std::to_string(i));
      return;
    }
  }
  c.note("1000 strings round-tripped byte-exactly");
}

// ---------------------------------------------------------------------------
// 2. Positional-entropy direction: concave boundary on the unpadded profile,
//    >=50% flatness gain from random padding.
// ---------------------------------------------------------------------------
void criterion_2(Ctx& ctx, Check& c) {
  SynthOptions so;
  so.dialogues = 5000;
  so.style = "greetings";
  so.turns = 4;
  so.word_stock = 60;
  so.min_words = 3;
  so.max_words = 8;
  so.seed = 2002;
  DialogueCorpus corpus = ingest_text(synth_corpus(so));
  assign_splits(corpus, 9);
  std::string train_text;
  for (size_t i : corpus.split_indices(Split::train))
    for (const auto& u : corpus.dialogues[i].utterances) train_text += u + "\n";
  BpeCodec codec = BpeCodec::train(train_text, 512);

  EntropyProfile unpadded = positional_entropy(corpus_view_bpe(corpus, codec, Split::train), 1 << 20);
  EntropyProfile padded =
      positional_entropy(corpus_view_padded(corpus, codec, Split::train, 128, 77), 1 << 20);

  BoundaryStats b = boundary_interior_means(unpadded);
  c.require(b.boundary_mean <= 0.8 * b.interior_mean,
            "boundary mean " + fmt(b.boundary_mean) + " not 20% below interior " +
                fmt(b.interior_mean));
  double sd_un = profile_stddev(unpadded);
  double sd_pad = profile_stddev(padded);
  c.require(sd_pad <= 0.5 * sd_un,
            "padded stddev " + fmt(sd_pad) + " not half of unpadded " + fmt(sd_un));
  c.note("boundary/interior " + fmt(b.boundary_mean) + "/" + fmt(b.interior_mean) + " bits, stddev " +
         fmt(sd_un) + " -> " + fmt(sd_pad));
}

// ---------------------------------------------------------------------------
// 3. Gradient exactness against central finite differences.
// ---------------------------------------------------------------------------
void criterion_3(Ctx& ctx, Check& c) {
  ModelConfig mc = ctx.tiny_cfg();
  Parameters<double> p = init_parameters<double>(mc, 303);

  AssemblyConfig acfg;
  acfg.max_seq_len = 24;
  mc.max_seq_len = 24;
  ExampleStream stream(ctx.echo_corpus, ctx.echo_codec, acfg, Split::train, 2, 31);
  Batch batch = stream.batch(0);

  Activations<double> acts;
  std::vector<double> grad(p.flat.size(), 0.0);
  LossSums sums = model_loss_and_grad(p, acts, batch.ids.data(), batch.loss_mask.data(),
                                      batch.batch_size, batch.seq_len, false, 0, grad);
  const double count = static_cast<double>(sums.token_count);

  Rng rng(304);
  const double h = 1e-5;
  double worst = 0;
  for (int k = 0; k < 200; ++k) {
    size_t idx = rng.uniform_u64(p.flat.size());
    double saved = p.flat[idx];
    p.flat[idx] = saved + h;
    double up = batch_mean_loss(p, acts, batch.ids.data(), batch.loss_mask.data(),
                                batch.batch_size, batch.seq_len);
    p.flat[idx] = saved - h;
    double down = batch_mean_loss(p, acts, batch.ids.data(), batch.loss_mask.data(),
                                  batch.batch_size, batch.seq_len);
    p.flat[idx] = saved;
    double fd = (up - down) / (2 * h);
    double an = grad[idx] / count;
    double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-5});
    worst = std::max(worst, rel);
  }
  c.require(worst <= 1e-4, "max relative error " + fmt(worst));
  c.note("200 coordinates, max relative error " + fmt(worst));
}

// ---------------------------------------------------------------------------
// 4. Optimization sanity: overfit one batch; accumulation == combined batch.
// ---------------------------------------------------------------------------
void criterion_4(Ctx& ctx, Check& c) {
  ModelConfig mc = ctx.tiny_cfg();
  mc.max_seq_len = 32;
  AssemblyConfig acfg;
  acfg.max_seq_len = 32;
  ExampleStream stream(ctx.echo_corpus, ctx.echo_codec, acfg, Split::train, 2, 404);
  Batch batch = stream.batch(0);

  Parameters<double> p = init_parameters<double>(mc, 405);
  AdamState<double> adam(p.flat.size());
  Activations<double> acts;
  std::vector<double> grad(p.flat.size());
  double loss = 1e9;
  int steps = 0;
  for (; steps < 500 && loss >= 0.05; ++steps) {
    std::fill(grad.begin(), grad.end(), 0.0);
    LossSums s = model_loss_and_grad(p, acts, batch.ids.data(), batch.loss_mask.data(),
                                     batch.batch_size, batch.seq_len, false, 0, grad);
    kern::scale_inplace(grad.data(), grad.size(), 1.0 / static_cast<double>(s.token_count));
    kern::adam_update(p.flat.data(), grad.data(), adam.m.data(), adam.v.data(), grad.size(), 0.01,
                      0.9, 0.999, 1e-8, ++adam.step);
    loss = s.mean();
  }
  c.require(loss < 0.05, "loss " + fmt(loss) + " after 500 steps");
  c.note("overfit to " + fmt(loss) + " nats/token in " + std::to_string(steps) + " steps");

  // Accumulated vs combined batch, one Adam step from identical init.
  Batch a = stream.batch(1), b = stream.batch(2);
  Batch combined;
  combined.batch_size = a.batch_size + b.batch_size;
  combined.seq_len = a.seq_len;
  combined.ids = a.ids;
  combined.ids.insert(combined.ids.end(), b.ids.begin(), b.ids.end());
  combined.loss_mask = a.loss_mask;
  combined.loss_mask.insert(combined.loss_mask.end(), b.loss_mask.begin(), b.loss_mask.end());

  Parameters<double> p1 = init_parameters<double>(mc, 406);
  std::vector<double> g1(p1.flat.size(), 0.0);
  LossSums sa = model_loss_and_grad(p1, acts, a.ids.data(), a.loss_mask.data(), a.batch_size,
                                    a.seq_len, false, 0, g1);
  LossSums sb = model_loss_and_grad(p1, acts, b.ids.data(), b.loss_mask.data(), b.batch_size,
                                    b.seq_len, false, 0, g1);
  kern::scale_inplace(g1.data(), g1.size(),
                      1.0 / static_cast<double>(sa.token_count + sb.token_count));
  std::vector<double> m1(g1.size(), 0), v1(g1.size(), 0);
  kern::adam_update(p1.flat.data(), g1.data(), m1.data(), v1.data(), g1.size(), 0.001, 0.9, 0.999,
                    1e-8, 1);

  Parameters<double> p2 = init_parameters<double>(mc, 406);
  std::vector<double> g2(p2.flat.size(), 0.0);
  LossSums sc = model_loss_and_grad(p2, acts, combined.ids.data(), combined.loss_mask.data(),
                                    combined.batch_size, combined.seq_len, false, 0, g2);
  kern::scale_inplace(g2.data(), g2.size(), 1.0 / static_cast<double>(sc.token_count));
  std::vector<double> m2(g2.size(), 0), v2(g2.size(), 0);
  kern::adam_update(p2.flat.data(), g2.data(), m2.data(), v2.data(), g2.size(), 0.001, 0.9, 0.999,
                    1e-8, 1);

  double worst = 0;
  for (size_t i = 0; i < p1.flat.size(); ++i)
    worst = std::max(worst, std::abs(p1.flat[i] - p2.flat[i]));
  c.require(worst <= 1e-10, "accumulation mismatch " + fmt(worst));
  c.note("accumulation max param delta " + fmt(worst));
}

// ---------------------------------------------------------------------------
// 5. End-to-end learning on the echo task; joint beats conditional on BLEU-2.
// ---------------------------------------------------------------------------
struct EchoTrainResult {
  Parameters<float> params{ModelConfig{.vocab_size = 2}};
  double accuracy = 0;
  double bleu = 0;
  i64 steps = 0;
};

EchoTrainResult train_echo_model(Ctx& ctx, LossMode loss_mode, i64 max_steps, double target_acc) {
  ModelConfig mc = preset_config("small");
  mc.vocab_size = ctx.echo_codec.vocab_size();
  mc.max_seq_len = Ctx::kEchoSeqLen;
  mc.dropout = 0.0;
  mc.precision = Precision::f32;

  AssemblyConfig acfg;
  acfg.max_seq_len = Ctx::kEchoSeqLen;
  acfg.loss = loss_mode;

  EchoTrainResult out;
  out.params = init_parameters<float>(mc, 505);
  ExampleStream stream(ctx.echo_corpus, ctx.echo_codec, acfg, Split::train, 16, 506);
  ExampleStream vs(ctx.echo_corpus, ctx.echo_codec, acfg, Split::valid, 16, 507);
  std::vector<Batch> valid;
  for (size_t i = 0; i < vs.batches_per_epoch(); ++i) valid.push_back(vs.batch(i));

  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 16;
  tc.accumulation_steps = 1;
  tc.eval_every = 0;
  tc.seed = 508;
  tc.warmup_steps = 100;

  AdamState<float> adam(out.params.flat.size());
  const i64 chunk = 100;
  for (i64 done = 0; done < max_steps;) {
    tc.max_steps = std::min(done + chunk, max_steps);
    train_model(out.params, adam, done, stream, {}, tc, {}, 0, nullptr);
    done = tc.max_steps;
    out.steps = done;
    out.accuracy = response_token_accuracy(out.params, valid);
    if (out.accuracy >= target_acc) break;
  }

  // Greedy validation generations -> BLEU-2.
  std::vector<size_t> pool = ctx.echo_corpus.split_indices(Split::valid);
  std::vector<EvalPair> pairs(pool.size());
#pragma omp parallel for schedule(dynamic)
  for (i64 i = 0; i < static_cast<i64>(pool.size()); ++i) {
    const Dialogue& d = ctx.echo_corpus.dialogues[pool[static_cast<size_t>(i)]];
    std::vector<std::string> context(d.utterances.begin(), d.utterances.end() - 1);
    GenerationConfig gen;
    gen.strategy = Strategy::greedy;
    gen.max_new_tokens = 24;
    GenerationResult r = generate(out.params, ctx.echo_codec, context, gen);
    pairs[static_cast<size_t>(i)] = {metric_tokenize(ctx.echo_codec.decode(r.ids)),
                                     metric_tokenize(d.utterances.back())};
  }
  out.bleu = bleu2(pairs);
  return out;
}

void criterion_5(Ctx& ctx, Check& c) {
  EchoTrainResult joint = train_echo_model(ctx, LossMode::joint, 2000, 0.95);
  c.require(joint.accuracy >= 0.90,
            "joint greedy next-token accuracy " + fmt(joint.accuracy) + " < 0.90");

  EchoTrainResult cond = train_echo_model(ctx, LossMode::conditional, joint.steps, 2.0);
  c.require(joint.bleu > cond.bleu, "joint BLEU-2 " + fmt(joint.bleu) +
                                        " not above conditional " + fmt(cond.bleu));
  c.note("joint acc " + fmt(joint.accuracy) + " @" + std::to_string(joint.steps) +
         " steps, BLEU-2 joint " + fmt(joint.bleu) + " vs conditional " + fmt(cond.bleu) +
         " (acc " + fmt(cond.accuracy) + ")");

  ctx.small_cfg = joint.params.cfg;
  ctx.joint_params = joint.params;
  ctx.have_joint = true;
}

// ---------------------------------------------------------------------------
// 6. Sampling equivalences.
// ---------------------------------------------------------------------------
void criterion_6(Ctx& ctx, Check& c) {
  ModelConfig mc = ctx.tiny_cfg();
  mc.precision = Precision::f32;
  Parameters<float> p = init_parameters<float>(mc, 606);

  std::vector<size_t> pool = ctx.echo_corpus.split_indices(Split::valid);
  std::vector<size_t> extra = ctx.echo_corpus.split_indices(Split::test);
  pool.insert(pool.end(), extra.begin(), extra.end());
  pool.resize(100);
  int mismatches = 0;
  for (size_t i = 0; i < pool.size(); ++i) {
    const Dialogue& d = ctx.echo_corpus.dialogues[pool[i]];
    std::vector<std::string> context(d.utterances.begin(), d.utterances.end() - 1);
    GenerationConfig greedy;
    greedy.strategy = Strategy::greedy;
    greedy.max_new_tokens = 8;
    greedy.seed = 1000 + i;
    GenerationConfig k1 = greedy;
    k1.strategy = Strategy::top_k;
    k1.top_k = 1;
    k1.seed = 2000 + i;  // different seed on purpose: k=1 must not depend on it
    if (generate(p, ctx.echo_codec, context, greedy).ids !=
        generate(p, ctx.echo_codec, context, k1).ids)
      ++mismatches;
  }
  c.require(mismatches == 0, std::to_string(mismatches) + "/100 contexts diverged");

  // Hand-built 3-token model: exact distribution equality of top_p(1)/top_k(0).
  std::vector<double> logits = {std::log(0.5), std::log(0.3), std::log(0.2)};
  GenerationConfig kcfg;
  kcfg.strategy = Strategy::top_k;
  kcfg.top_k = 0;
  GenerationConfig pcfg;
  pcfg.strategy = Strategy::top_p;
  pcfg.top_p = 1.0;
  std::vector<double> dk = filtered_distribution(logits, kcfg);
  std::vector<double> dp = filtered_distribution(logits, pcfg);
  bool same = dk.size() == dp.size();
  for (size_t i = 0; same && i < dk.size(); ++i) same = dk[i] == dp[i];
  c.require(same, "top_p(1.0) and top_k(0) distributions differ");
  c.note("100 greedy/top_k(1) matches; unfiltered distributions identical");
}

// ---------------------------------------------------------------------------
// 7. Metric oracles.
// ---------------------------------------------------------------------------
void criterion_7(Ctx& ctx, Check& c) {
  Rng rng(707);
  static const char* words[] = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  auto random_tokens = [&](size_t min_len, size_t max_len) {
    size_t len = min_len + rng.uniform_u64(max_len - min_len + 1);
    std::vector<std::string> out;
    for (size_t i = 0; i < len; ++i) out.push_back(words[rng.uniform_u64(10)]);
    return out;
  };
  std::vector<EvalPair> pairs;
  std::vector<std::vector<std::string>> hyps;
  for (int i = 0; i < 50; ++i) {
    EvalPair p;
    p.hyp = random_tokens(0, 12);
    p.ref = random_tokens(1, 12);
    hyps.push_back(p.hyp);
    pairs.push_back(std::move(p));
  }
  c.require(std::abs(bleu2(pairs) - oracle::bleu2_sentence(pairs)) < 1e-9, "bleu2 oracle mismatch");
  c.require(std::abs(rouge2(pairs) - oracle::rouge2_f1(pairs)) < 1e-9, "rouge2 oracle mismatch");
  c.require(std::abs(distinct_n(hyps, 1) - oracle::distinct(hyps, 1)) < 1e-9,
            "dist-1 oracle mismatch");
  c.require(std::abs(distinct_n(hyps, 2) - oracle::distinct(hyps, 2)) < 1e-9,
            "dist-2 oracle mismatch");
  c.require(std::abs(nasl(pairs) - oracle::nasl_mean(pairs)) < 1e-9, "nasl oracle mismatch");

  auto pair_of = [](const char* h, const char* r) {
    return EvalPair{metric_tokenize(h), metric_tokenize(r)};
  };
  c.require(bleu2({pair_of("a b c", "a b c")}) == 1.0, "bleu2 identity");
  c.require(std::abs(bleu2({pair_of("a b c", "a b d")}) - std::sqrt(1.0 / 3.0)) < 1e-15,
            "bleu2 hand value");
  c.require(bleu2({pair_of("x y z", "a b c")}) < 1e-5, "bleu2 smoothing");
  c.require(std::abs(rouge2({pair_of("a b c", "a b c d")}) - 0.8) < 1e-15, "rouge2 hand value");
  c.require(std::abs(distinct_n({{"a", "a", "a"}}, 1) - 1.0 / 3.0) < 1e-15, "dist-1 hand value");
  c.require(nasl({pair_of("a", "a b"), pair_of("a b c", "x y")}) == 1.0, "nasl hand value");
  c.note("oracle agreement within 1e-9 on 50 pairs; hand values exact");
}

// ---------------------------------------------------------------------------
// 8. Sweep machinery on the trained joint model.
// ---------------------------------------------------------------------------
void criterion_8(Ctx& ctx, Check& c) {
  if (!ctx.have_joint) {
    c.require(false, "criterion 5 did not produce a trained model");
    return;
  }
  SweepOptions opts;
  opts.max_new_tokens = 24;
  opts.seed = 808;
  opts.max_contexts = 120;

  SweepResult ks =
      sweep_top_k(ctx.joint_params, ctx.echo_codec, ctx.echo_corpus, Split::valid, default_k_grid(), opts);
  SweepResult ks_again =
      sweep_top_k(ctx.joint_params, ctx.echo_codec, ctx.echo_corpus, Split::valid, default_k_grid(), opts);
  SweepResult ps =
      sweep_top_p(ctx.joint_params, ctx.echo_codec, ctx.echo_corpus, Split::valid, default_p_grid(), opts);

  c.require(ks.rows.size() == 21, "top_k rows " + std::to_string(ks.rows.size()));
  c.require(ps.rows.size() == 10, "top_p rows " + std::to_string(ps.rows.size()));

  bool deterministic = true;
  for (size_t i = 0; i < ks.rows.size(); ++i)
    deterministic = deterministic && ks.rows[i].bleu2 == ks_again.rows[i].bleu2 &&
                    ks.rows[i].nasl == ks_again.rows[i].nasl;
  c.require(deterministic, "repeated top_k sweep differs");

  const SweepRow& k0 = ks.rows[0];
  const SweepRow& p1 = ps.rows[9];
  c.require(k0.bleu2 == p1.bleu2 && k0.rouge2 == p1.rouge2 && k0.dist1 == p1.dist1 &&
                k0.dist2 == p1.dist2 && k0.nasl == p1.nasl,
            "p=1.0 row differs from k=0 row");

  // Mean response length must be non-decreasing in effective k; k=0 means no
  // truncation and sits at the unbounded end of the scale.
  auto mean_len = [&](const std::vector<std::string>& hyps) {
    double total = 0;
    for (const auto& h : hyps) total += static_cast<double>(metric_tokenize(h).size());
    return total / static_cast<double>(hyps.size());
  };
  std::vector<double> lens;
  for (int k = 1; k <= 20; ++k) lens.push_back(mean_len(ks.hypotheses[static_cast<size_t>(k)]));
  lens.push_back(mean_len(ks.hypotheses[0]));
  bool monotone = true;
  for (size_t i = 0; i + 1 < lens.size(); ++i)
    if (lens[i + 1] < lens[i]) monotone = false;
  c.require(monotone, "mean length not non-decreasing in k");
  c.note("len(k=1) " + fmt(lens.front()) + " -> len(k=0) " + fmt(lens.back()) + ", best k = " +
         fmt(ks.best_param));
}

// ---------------------------------------------------------------------------
// 9. Loss decomposition identity.
// ---------------------------------------------------------------------------
void criterion_9(Ctx& ctx, Check& c) {
  ModelConfig mc = ctx.tiny_cfg();
  Parameters<double> p = init_parameters<double>(mc, 909);
  AssemblyConfig acfg;
  acfg.max_seq_len = Ctx::kEchoSeqLen;
  ExampleStream stream(ctx.echo_corpus, ctx.echo_codec, acfg, Split::train, 2, 910);

  Activations<double> acts;
  double worst = 0;
  for (size_t i = 0; i < 20; ++i) {
    Batch b = stream.batch(i);
    std::vector<u8> resp_mask(b.loss_mask.size()), rest_mask(b.loss_mask.size());
    for (size_t t = 0; t < b.loss_mask.size(); ++t) {
      bool is_resp = b.segments[t] == static_cast<u8>(Segment::response);
      resp_mask[t] = b.loss_mask[t] && is_resp ? 1 : 0;
      rest_mask[t] = b.loss_mask[t] && !is_resp ? 1 : 0;
    }
    model_forward(p, b.ids.data(), b.batch_size, b.seq_len, false, 0, acts);
    LossSums joint = masked_loss(p, acts, b.ids.data(), b.loss_mask.data(), b.batch_size, b.seq_len);
    LossSums resp = masked_loss(p, acts, b.ids.data(), resp_mask.data(), b.batch_size, b.seq_len);
    LossSums rest = masked_loss(p, acts, b.ids.data(), rest_mask.data(), b.batch_size, b.seq_len);
    if (joint.token_count != resp.token_count + rest.token_count) {
      c.require(false, "token counts do not decompose");
      return;
    }
    double lhs = joint.mean() * static_cast<double>(joint.token_count);
    double rhs = resp.mean() * static_cast<double>(resp.token_count) +
                 rest.mean() * static_cast<double>(rest.token_count);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  c.require(worst <= 1e-9, "decomposition error " + fmt(worst));
  c.note("20 batches, worst relative error " + fmt(worst));
}

// ---------------------------------------------------------------------------
// 10. Byte-identical experiment reruns at 64-bit precision.
// ---------------------------------------------------------------------------
void criterion_10(Ctx& ctx, Check& c) {
  SynthOptions so;
  so.dialogues = 400;
  so.style = "echo";
  so.turns = 2;
  so.word_stock = 20;
  so.min_words = 2;
  so.max_words = 4;
  so.seed = 1010;
  fs::path corpus_path = ctx.work / "repro_corpus.tsv";
  write_text_file(corpus_path, synth_corpus(so));
  BpeCodec codec = BpeCodec::train(read_text_file(corpus_path), 300);
  fs::path codec_dir = ctx.work / "repro_codec";
  codec.save(codec_dir);

  ExperimentSpec spec;
  spec.name = "repro";
  spec.corpus = corpus_path;
  spec.codec_dir = codec_dir;
  spec.tokenizer = "bpe";
  spec.preset = "tiny";
  spec.precision = Precision::f64;
  spec.seq_len = 32;
  spec.dropout = 0.1;
  spec.train.batch_size = 4;
  spec.train.accumulation_steps = 2;
  spec.train.max_steps = 30;
  spec.train.eval_every = 10;
  spec.train.checkpoint_every = 10;
  spec.train.learning_rate = 0.003;
  spec.max_new_tokens = 8;
  spec.eval_split = "valid";
  spec.seed = 11;
  spec.train.seed = 11;

  run_experiment(spec, ctx.work / "runs_a");
  run_experiment(spec, ctx.work / "runs_b");

  auto same = [&](const char* rel) {
    return read_text_file(ctx.work / "runs_a" / "repro" / rel) ==
           read_text_file(ctx.work / "runs_b" / "repro" / rel);
  };
  c.require(same("eval/report.csv"), "report.csv differs between reruns");
  c.require(same("logs/metrics.csv"), "metrics.csv differs between reruns");
  c.require(same("eval/generations.jsonl"), "generations differ between reruns");
  c.require(same("checkpoints/last.ckpt"), "final checkpoint differs between reruns");
  c.note("report, metrics log, generations and checkpoint byte-identical across reruns");
}

}  // namespace

int main() {
  struct Entry {
    const char* title;
    std::function<void(Ctx&, Check&)> body;
  };
  std::vector<Entry> criteria = {
      {"tokenizer roundtrip (1000 fuzzed strings)", criterion_1},
      {"positional-entropy direction and padding flatness", criterion_2},
      {"gradient exactness vs central finite differences", criterion_3},
      {"optimization sanity: overfit-one-batch + accumulation equivalence", criterion_4},
      {"end-to-end echo learning, joint > conditional BLEU-2", criterion_5},
      {"sampling equivalences: top_k(1)=greedy, top_p(1)=top_k(0)", criterion_6},
      {"metric oracles and hand-computed values", criterion_7},
      {"sweep machinery: 21+10 rows, determinism, length monotone in k", criterion_8},
      {"loss decomposition identity", criterion_9},
      {"byte-identical experiment reruns (64-bit)", criterion_10},
  };

  Ctx ctx;
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    Check check;
    auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].body(ctx, check);
    } catch (const std::exception& e) {
      check.require(false, std::string("exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%2zu/10] %s %s (%.1fs)%s%s\n", i + 1, check.ok ? "PASS" : "FAIL",
                criteria[i].title, secs, check.detail.empty() ? "" : ": ",
                check.detail.c_str());
    std::fflush(stdout);
    if (!check.ok) ++failures;
  }
  std::printf("%d/10 criteria passed\n", 10 - failures);
  return failures;
}
