#include "dlgforge/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dlg {

Strategy strategy_from_string(const std::string& s) {
  if (s == "greedy") return Strategy::greedy;
  if (s == "top_k") return Strategy::top_k;
  if (s == "top_p") return Strategy::top_p;
  fail("unknown sampling strategy: " + s);
}

std::string strategy_to_string(Strategy s) {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::top_k: return "top_k";
    case Strategy::top_p: return "top_p";
  }
  fail("bad strategy value");
}

void GenerationConfig::validate() const {
  if (top_k < 0) fail("top_k must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) fail("top_p must be in (0,1]");
  if (temperature <= 0.0) fail("temperature must be positive");
  if (max_new_tokens < 1) fail("max_new_tokens must be >= 1");
}

namespace {

/// Candidate ids sorted by descending probability, ascending id on ties.
std::vector<int> probability_order(const std::vector<double>& probs) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)]; });
  return order;
}

std::vector<double> softmax_with_temperature(const std::vector<double>& logits, double temperature) {
  std::vector<double> probs(logits.size());
  double maxv = logits[0];
  for (double v : logits) maxv = std::max(maxv, v);
  double sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp((logits[i] - maxv) / temperature);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

int argmax_id(const std::vector<double>& values) {
  int best = 0;
  for (size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace

std::vector<double> filtered_distribution(const std::vector<double>& logits_row,
                                          const GenerationConfig& cfg) {
  cfg.validate();
  const size_t V = logits_row.size();
  std::vector<double> probs = softmax_with_temperature(logits_row, cfg.temperature);
  std::vector<double> out(V, 0.0);

  if (cfg.strategy == Strategy::greedy) {
    out[static_cast<size_t>(argmax_id(probs))] = 1.0;
    return out;
  }

  std::vector<int> order = probability_order(probs);
  size_t keep = V;
  if (cfg.strategy == Strategy::top_k) {
    keep = cfg.top_k == 0 ? V : std::min<size_t>(static_cast<size_t>(cfg.top_k), V);
  } else {
    // top-p: smallest probability-sorted prefix reaching mass p; the token
    // crossing the threshold is included. p >= 1 keeps everything.
    if (cfg.top_p < 1.0) {
      double cum = 0;
      keep = V;
      for (size_t i = 0; i < V; ++i) {
        cum += probs[static_cast<size_t>(order[i])];
        if (cum >= cfg.top_p) {
          keep = i + 1;
          break;
        }
      }
    }
  }

  double kept_mass = 0;
  for (size_t i = 0; i < keep; ++i) kept_mass += probs[static_cast<size_t>(order[i])];
  for (size_t i = 0; i < keep; ++i) {
    size_t id = static_cast<size_t>(order[i]);
    out[id] = probs[id] / kept_mass;
  }
  return out;
}

namespace {

/// Samples from the filtered distribution by walking candidates in
/// probability order. Greedy never consumes randomness.
i32 sample_token(const std::vector<double>& logits, const GenerationConfig& cfg, Rng& rng) {
  if (cfg.strategy == Strategy::greedy) {
    std::vector<double> probs = softmax_with_temperature(logits, cfg.temperature);
    return argmax_id(probs);
  }
  std::vector<double> dist = filtered_distribution(logits, cfg);
  std::vector<int> order = probability_order(dist);
  double u = rng.uniform01();
  double cum = 0;
  int last_kept = order[0];
  for (int id : order) {
    double p = dist[static_cast<size_t>(id)];
    if (p <= 0.0) break;
    last_kept = id;
    cum += p;
    if (u < cum) return id;
  }
  return last_kept;
}

}  // namespace

std::vector<i32> build_prompt(const TextCodec& codec, const std::vector<std::string>& context,
                              int max_seq_len, int reserve) {
  if (context.empty()) fail("empty context");
  SpecialTokens sp = codec.specials();
  std::vector<std::vector<i32>> encoded;
  encoded.reserve(context.size());
  for (const std::string& u : context) encoded.push_back(codec.encode(u));

  const int budget = max_seq_len - reserve - 2;  // SEP_PAD + trailing SEP_UTT
  if (budget < 1) fail("context too long for window");

  std::vector<i32> ctx;
  for (size_t u = 0; u < encoded.size(); ++u) {
    if (u > 0) ctx.push_back(sp.sep_utt);
    ctx.insert(ctx.end(), encoded[u].begin(), encoded[u].end());
  }
  if (static_cast<int>(ctx.size()) > budget)
    ctx.erase(ctx.begin(), ctx.end() - budget);

  std::vector<i32> prompt;
  prompt.reserve(ctx.size() + 2);
  prompt.push_back(sp.sep_pad);
  prompt.insert(prompt.end(), ctx.begin(), ctx.end());
  prompt.push_back(sp.sep_utt);
  return prompt;
}

template <class T>
GenerationResult generate(const Parameters<T>& params, const TextCodec& codec,
                          const std::vector<std::string>& context, const GenerationConfig& cfg) {
  cfg.validate();
  SpecialTokens sp = codec.specials();
  std::vector<i32> prompt = build_prompt(codec, context, params.cfg.max_seq_len, 1);

  IncrementalDecoder<T> dec(params);
  const std::vector<T>* logits = nullptr;
  for (i32 id : prompt) logits = &dec.step(id);

  Rng rng(hash_mix({cfg.seed, 0x6E9ull}));
  GenerationResult result;
  std::vector<double> row(static_cast<size_t>(params.cfg.vocab_size));
  while (static_cast<int>(result.ids.size()) < cfg.max_new_tokens) {
    for (size_t v = 0; v < row.size(); ++v) row[v] = static_cast<double>((*logits)[v]);
    i32 next = sample_token(row, cfg, rng);
    result.ids.push_back(next);
    if (next == sp.eos) {
      result.terminated_by = GenerationResult::Stop::eos;
      return result;
    }
    if (dec.position() >= params.cfg.max_seq_len) break;
    logits = &dec.step(next);
  }
  result.terminated_by = GenerationResult::Stop::length_limit;
  return result;
}

std::vector<int> default_k_grid() {
  std::vector<int> ks(21);
  std::iota(ks.begin(), ks.end(), 0);
  return ks;
}

std::vector<double> default_p_grid() {
  std::vector<double> ps;
  for (int i = 1; i <= 10; ++i) ps.push_back(static_cast<double>(i) / 10.0);
  return ps;
}

namespace {

template <class T>
SweepResult run_sweep(const Parameters<T>& params, const TextCodec& codec,
                      const DialogueCorpus& corpus, Split split,
                      const std::vector<GenerationConfig>& configs,
                      const std::vector<double>& param_values, const SweepOptions& opts) {
  std::vector<size_t> pool = corpus.split_indices(split);
  if (pool.empty()) fail("empty split");
  if (opts.max_contexts > 0 && pool.size() > opts.max_contexts) pool.resize(opts.max_contexts);

  std::vector<std::vector<std::string>> contexts(pool.size());
  SweepResult result;
  result.references.resize(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) {
    const Dialogue& d = corpus.dialogues[pool[i]];
    size_t first = opts.turns == TurnScope::single ? d.utterances.size() - 2 : 0;
    contexts[i].assign(d.utterances.begin() + static_cast<ptrdiff_t>(first),
                       d.utterances.end() - 1);
    result.references[i] = d.utterances.back();
  }

  result.hypotheses.resize(configs.size());
  for (size_t ci = 0; ci < configs.size(); ++ci) {
    std::vector<std::string> hyps(pool.size());
#pragma omp parallel for schedule(dynamic)
    for (i64 i = 0; i < static_cast<i64>(pool.size()); ++i) {
      GenerationConfig gen = configs[ci];
      gen.seed = hash_mix({opts.seed, 0x539EEDull, static_cast<u64>(i)});
      GenerationResult r = generate(params, codec, contexts[static_cast<size_t>(i)], gen);
      hyps[static_cast<size_t>(i)] = codec.decode(r.ids);
    }

    std::vector<EvalPair> pairs(pool.size());
    std::vector<std::vector<std::string>> hyp_tokens(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) {
      pairs[i].hyp = metric_tokenize(hyps[i]);
      pairs[i].ref = metric_tokenize(result.references[i]);
      hyp_tokens[i] = pairs[i].hyp;
    }
    SweepRow row;
    row.param = param_values[ci];
    row.bleu2 = bleu2(pairs, opts.eval.bleu);
    row.rouge2 = rouge2(pairs, opts.eval.rouge);
    try {
      row.dist1 = distinct_n(hyp_tokens, 1);
      row.dist2 = distinct_n(hyp_tokens, 2);
    } catch (const std::exception&) {
      // All-empty hypotheses: report zero diversity rather than aborting the sweep.
      row.dist1 = 0;
      row.dist2 = 0;
    }
    row.nasl = nasl(pairs);
    result.rows.push_back(row);
    result.hypotheses[ci] = std::move(hyps);
  }

  size_t best = 0;
  for (size_t i = 1; i < result.rows.size(); ++i)
    if (result.rows[i].bleu2 > result.rows[best].bleu2) best = i;
  result.best_param = result.rows.empty() ? 0 : result.rows[best].param;
  return result;
}

}  // namespace

template <class T>
SweepResult sweep_top_k(const Parameters<T>& params, const TextCodec& codec,
                        const DialogueCorpus& corpus, Split split, const std::vector<int>& ks,
                        const SweepOptions& opts) {
  std::vector<GenerationConfig> configs;
  std::vector<double> values;
  for (int k : ks) {
    GenerationConfig g;
    g.strategy = Strategy::top_k;
    g.top_k = k;
    g.temperature = opts.temperature;
    g.max_new_tokens = opts.max_new_tokens;
    configs.push_back(g);
    values.push_back(static_cast<double>(k));
  }
  return run_sweep(params, codec, corpus, split, configs, values, opts);
}

template <class T>
SweepResult sweep_top_p(const Parameters<T>& params, const TextCodec& codec,
                        const DialogueCorpus& corpus, Split split, const std::vector<double>& ps,
                        const SweepOptions& opts) {
  std::vector<GenerationConfig> configs;
  std::vector<double> values;
  for (double p : ps) {
    GenerationConfig g;
    g.strategy = Strategy::top_p;
    g.top_p = p;
    g.temperature = opts.temperature;
    g.max_new_tokens = opts.max_new_tokens;
    configs.push_back(g);
    values.push_back(p);
  }
  return run_sweep(params, codec, corpus, split, configs, values, opts);
}

std::string sweep_to_csv(const SweepResult& r) {
  std::string out = "k_or_p,bleu2,rouge2,dist1,dist2,nasl\n";
  for (const SweepRow& row : r.rows) {
    out += fmt_double(row.param);
    out += ',';
    out += fmt_double(row.bleu2);
    out += ',';
    out += fmt_double(row.rouge2);
    out += ',';
    out += fmt_double(row.dist1);
    out += ',';
    out += fmt_double(row.dist2);
    out += ',';
    out += fmt_double(row.nasl);
    out += '\n';
  }
  return out;
}

template GenerationResult generate<float>(const Parameters<float>&, const TextCodec&,
                                          const std::vector<std::string>&, const GenerationConfig&);
template GenerationResult generate<double>(const Parameters<double>&, const TextCodec&,
                                           const std::vector<std::string>&, const GenerationConfig&);
template SweepResult sweep_top_k<float>(const Parameters<float>&, const TextCodec&,
                                        const DialogueCorpus&, Split, const std::vector<int>&,
                                        const SweepOptions&);
template SweepResult sweep_top_k<double>(const Parameters<double>&, const TextCodec&,
                                         const DialogueCorpus&, Split, const std::vector<int>&,
                                         const SweepOptions&);
template SweepResult sweep_top_p<float>(const Parameters<float>&, const TextCodec&,
                                        const DialogueCorpus&, Split, const std::vector<double>&,
                                        const SweepOptions&);
template SweepResult sweep_top_p<double>(const Parameters<double>&, const TextCodec&,
                                         const DialogueCorpus&, Split, const std::vector<double>&,
                                         const SweepOptions&);

}  // namespace dlg
