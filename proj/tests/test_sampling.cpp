#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dlgforge/harness.hpp"
#include "dlgforge/sampling.hpp"
#include "test_util.hpp"

using namespace dlg;

namespace {

/// Hand-built three-token model: known logits, exact probabilities 0.5/0.3/0.2.
std::vector<double> three_token_logits() {
  return {std::log(0.5), std::log(0.3), std::log(0.2)};
}

struct GenFixture {
  DialogueCorpus corpus;
  BpeCodec codec;
  ModelConfig mc;
  Parameters<float> params;

  GenFixture() : corpus(make_corpus()), codec(make_codec(corpus)), mc(make_mc(codec)),
                 params(init_parameters<float>(mc, 11)) {
    assign_splits(corpus, 2);
  }

  static DialogueCorpus make_corpus() {
    SynthOptions so;
    so.dialogues = 60;
    so.style = "echo";
    so.turns = 2;
    so.word_stock = 15;
    so.min_words = 2;
    so.max_words = 4;
    so.seed = 3;
    return ingest_text(synth_corpus(so));
  }
  static BpeCodec make_codec(const DialogueCorpus& corpus) {
    std::string text;
    for (const Dialogue& d : corpus.dialogues)
      for (const std::string& u : d.utterances) text += u + "\n";
    return BpeCodec::train(text, 290);
  }
  static ModelConfig make_mc(const BpeCodec& codec) {
    ModelConfig c = preset_config("tiny");
    c.vocab_size = codec.vocab_size();
    c.max_seq_len = 32;
    c.dropout = 0.0;
    c.precision = Precision::f32;
    return c;
  }
};

}  // namespace

TEST_CASE("top_p(0.6) keeps exactly the minimal probability-sorted prefix") {
  GenerationConfig cfg;
  cfg.strategy = Strategy::top_p;
  cfg.top_p = 0.6;
  std::vector<double> dist = filtered_distribution(three_token_logits(), cfg);
  // Sorted mass: 0.5, then 0.5+0.3 = 0.8 >= 0.6 -> keep tokens {0, 1}.
  CHECK(dist[0] == doctest::Approx(0.625).epsilon(1e-9));
  CHECK(dist[1] == doctest::Approx(0.375).epsilon(1e-9));
  CHECK(dist[2] == 0.0);

  cfg.top_p = 0.5;  // boundary token is included
  dist = filtered_distribution(three_token_logits(), cfg);
  CHECK(dist[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(dist[1] == 0.0);
  CHECK(dist[2] == 0.0);
}

TEST_CASE("filtered distributions renormalize to 1 with excluded tokens at exactly 0") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits = testutil::random_vector(rng, 17, 3.0);
    GenerationConfig cfg;
    cfg.strategy = trial % 2 == 0 ? Strategy::top_k : Strategy::top_p;
    cfg.top_k = static_cast<int>(rng.uniform_u64(18));
    cfg.top_p = 0.05 + 0.95 * rng.uniform01();
    std::vector<double> dist = filtered_distribution(logits, cfg);
    double sum = 0;
    size_t nonzero = 0;
    for (double p : dist) {
      sum += p;
      if (p != 0.0) ++nonzero;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    CHECK(nonzero >= 1);
    if (cfg.strategy == Strategy::top_k && cfg.top_k > 0)
      CHECK(nonzero <= static_cast<size_t>(cfg.top_k));
  }
}

TEST_CASE("top_p(1.0) and top_k(0) induce the identical distribution (exact)") {
  GenerationConfig kcfg;
  kcfg.strategy = Strategy::top_k;
  kcfg.top_k = 0;
  GenerationConfig pcfg;
  pcfg.strategy = Strategy::top_p;
  pcfg.top_p = 1.0;

  std::vector<double> a = filtered_distribution(three_token_logits(), kcfg);
  std::vector<double> b = filtered_distribution(three_token_logits(), pcfg);
  CHECK(testutil::bitwise_equal(a, b));
  for (double p : a) CHECK(p > 0.0);

  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> logits = testutil::random_vector(rng, 31, 2.0);
    CHECK(testutil::bitwise_equal(filtered_distribution(logits, kcfg),
                                  filtered_distribution(logits, pcfg)));
  }
}

TEST_CASE("candidate set size is non-increasing as p decreases") {
  Rng rng(13);
  std::vector<double> logits = testutil::random_vector(rng, 25, 2.0);
  size_t prev = 26;
  for (double p : {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1}) {
    GenerationConfig cfg;
    cfg.strategy = Strategy::top_p;
    cfg.top_p = p;
    std::vector<double> dist = filtered_distribution(logits, cfg);
    size_t nonzero = 0;
    for (double q : dist)
      if (q != 0.0) ++nonzero;
    CHECK(nonzero <= prev);
    prev = nonzero;
  }
  // The three-token model, exhaustively.
  size_t prev3 = 4;
  for (double p : {1.0, 0.99, 0.8, 0.79, 0.5, 0.49, 0.2, 0.1}) {
    GenerationConfig cfg;
    cfg.strategy = Strategy::top_p;
    cfg.top_p = p;
    std::vector<double> dist = filtered_distribution(three_token_logits(), cfg);
    size_t nonzero = 0;
    for (double q : dist)
      if (q != 0.0) ++nonzero;
    CHECK(nonzero <= prev3);
    prev3 = nonzero;
  }
}

TEST_CASE("generation config validation") {
  GenerationConfig cfg;
  cfg.top_k = -1;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.top_p = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.top_p = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.max_new_tokens = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.temperature = 0.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("top_k(1) generation bit-equals greedy; greedy is seed-independent") {
  GenFixture f;
  std::vector<size_t> pool = f.corpus.split_indices(Split::train);
  REQUIRE(pool.size() >= 20);
  for (size_t i = 0; i < 20; ++i) {
    const Dialogue& d = f.corpus.dialogues[pool[i]];
    std::vector<std::string> context(d.utterances.begin(), d.utterances.end() - 1);

    GenerationConfig greedy;
    greedy.strategy = Strategy::greedy;
    greedy.max_new_tokens = 8;
    greedy.seed = 100 + i;
    GenerationResult g1 = generate(f.params, f.codec, context, greedy);
    greedy.seed = 987654 + i;
    GenerationResult g2 = generate(f.params, f.codec, context, greedy);
    CHECK(g1.ids == g2.ids);  // greedy ignores the seed

    GenerationConfig k1;
    k1.strategy = Strategy::top_k;
    k1.top_k = 1;
    k1.max_new_tokens = 8;
    k1.seed = 555 + i;
    GenerationResult gk = generate(f.params, f.codec, context, k1);
    CHECK(gk.ids == g1.ids);
  }
}

TEST_CASE("generation stops at EOS and keeps it final; budget stops are labeled") {
  GenFixture f;
  const Dialogue& d = f.corpus.dialogues[0];
  std::vector<std::string> context(d.utterances.begin(), d.utterances.end() - 1);
  GenerationConfig cfg;
  cfg.strategy = Strategy::top_k;
  cfg.top_k = 0;
  cfg.max_new_tokens = 200;  // enough that EOS usually arrives first
  cfg.seed = 4;
  SpecialTokens sp = f.codec.specials();
  bool saw_eos = false;
  for (u64 s = 0; s < 60 && !saw_eos; ++s) {
    cfg.seed = s;
    GenerationResult r = generate(f.params, f.codec, context, cfg);
    REQUIRE(!r.ids.empty());
    CHECK(static_cast<int>(r.ids.size()) <= cfg.max_new_tokens);
    for (size_t i = 0; i + 1 < r.ids.size(); ++i) CHECK(r.ids[i] != sp.eos);
    if (r.terminated_by == GenerationResult::Stop::eos) {
      saw_eos = true;
      CHECK(r.ids.back() == sp.eos);
    }
  }
  CHECK(saw_eos);

  cfg.max_new_tokens = 2;
  cfg.strategy = Strategy::greedy;
  GenerationResult shorty = generate(f.params, f.codec, context, cfg);
  CHECK(shorty.ids.size() <= 2);
}

TEST_CASE("build_prompt layout and oldest-first truncation") {
  GenFixture f;
  SpecialTokens sp = f.codec.specials();
  std::vector<i32> prompt = build_prompt(f.codec, {"baba koko", "mimi"}, 32, 1);
  CHECK(prompt.front() == sp.sep_pad);
  CHECK(prompt.back() == sp.sep_utt);
  // One SEP_UTT between the utterances plus the trailing one.
  int seps = 0;
  for (i32 id : prompt)
    if (id == sp.sep_utt) ++seps;
  CHECK(seps == 2);

  // A context far beyond the window keeps only the newest tokens.
  std::vector<std::string> huge(40, "babakoko mimi tata");
  std::vector<i32> truncated = build_prompt(f.codec, huge, 32, 1);
  CHECK(truncated.size() <= 31);
  CHECK(truncated.front() == sp.sep_pad);
}

TEST_CASE("sweeps: row counts, determinism, p=1.0 row equals k=0 row") {
  GenFixture f;
  SweepOptions opts;
  opts.max_new_tokens = 6;
  opts.seed = 21;
  opts.max_contexts = 8;

  SweepResult ks = sweep_top_k(f.params, f.codec, f.corpus, Split::valid, default_k_grid(), opts);
  CHECK(ks.rows.size() == 21);
  SweepResult ks2 = sweep_top_k(f.params, f.codec, f.corpus, Split::valid, default_k_grid(), opts);
  REQUIRE(ks2.rows.size() == ks.rows.size());
  for (size_t i = 0; i < ks.rows.size(); ++i) {
    CHECK(ks.rows[i].bleu2 == ks2.rows[i].bleu2);
    CHECK(ks.rows[i].nasl == ks2.rows[i].nasl);
  }

  SweepResult ps = sweep_top_p(f.params, f.codec, f.corpus, Split::valid, default_p_grid(), opts);
  CHECK(ps.rows.size() == 10);

  // Same seeds, equivalent configurations: identical generations and metrics.
  CHECK(ps.hypotheses[9] == ks.hypotheses[0]);
  CHECK(ps.rows[9].bleu2 == ks.rows[0].bleu2);
  CHECK(ps.rows[9].rouge2 == ks.rows[0].rouge2);
  CHECK(ps.rows[9].dist1 == ks.rows[0].dist1);
  CHECK(ps.rows[9].dist2 == ks.rows[0].dist2);
  CHECK(ps.rows[9].nasl == ks.rows[0].nasl);

  std::string csv = sweep_to_csv(ks);
  CHECK(csv.rfind("k_or_p,bleu2,rouge2,dist1,dist2,nasl\n", 0) == 0);
  CHECK(split(csv, '\n').size() == 23);  // header + 21 rows + trailing empty
}

TEST_CASE("best_param is the argmax of BLEU-2 with ties to the smaller value") {
  SweepResult r;
  r.rows = {{0, 0.5, 0, 0, 0, 0}, {1, 0.7, 0, 0, 0, 0}, {2, 0.7, 0, 0, 0, 0}};
  size_t best = 0;
  for (size_t i = 1; i < r.rows.size(); ++i)
    if (r.rows[i].bleu2 > r.rows[best].bleu2) best = i;
  CHECK(r.rows[best].param == 1);
}
