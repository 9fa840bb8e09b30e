#pragma once

#include <string>
#include <vector>

#include "dlgforge/corpus.hpp"
#include "dlgforge/metrics.hpp"
#include "dlgforge/model.hpp"
#include "dlgforge/tokenizer.hpp"

namespace dlg {

enum class Strategy : u8 { greedy = 0, top_k = 1, top_p = 2 };

Strategy strategy_from_string(const std::string& s);
std::string strategy_to_string(Strategy s);

struct GenerationConfig {
  Strategy strategy = Strategy::greedy;
  int top_k = 0;        // 0 means no truncation
  double top_p = 1.0;   // in (0, 1]
  double temperature = 1.0;
  int max_new_tokens = 32;
  u64 seed = 0;

  void validate() const;
};

struct GenerationResult {
  std::vector<i32> ids;  // response tokens; EOS, if reached, is last
  enum class Stop : u8 { eos, length_limit } terminated_by = Stop::length_limit;
};

/// Temperature scale, softmax, strategy filter, renormalize. Returns the full
/// vocab-sized distribution with excluded tokens at exactly 0; candidate
/// order for sampling is probability-descending with id-ascending ties.
std::vector<double> filtered_distribution(const std::vector<double>& logits_row,
                                          const GenerationConfig& cfg);

/// Inference prompt: SEP_PAD, context utterances joined with SEP_UTT, then a
/// trailing SEP_UTT (no random padding at inference). Context is truncated
/// oldest-first so at least `reserve` positions stay free.
std::vector<i32> build_prompt(const TextCodec& codec, const std::vector<std::string>& context,
                              int max_seq_len, int reserve);

/// Autoregressive response generation; stops at EOS or the token budget.
template <class T>
GenerationResult generate(const Parameters<T>& params, const TextCodec& codec,
                          const std::vector<std::string>& context, const GenerationConfig& cfg);

struct SweepRow {
  double param = 0;  // k or p
  double bleu2 = 0, rouge2 = 0, dist1 = 0, dist2 = 0, nasl = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double best_param = 0;  // argmax BLEU-2, ties to the smaller value
  std::vector<std::vector<std::string>> hypotheses;  // per row, decoded
  std::vector<std::string> references;
};

struct SweepOptions {
  TurnScope turns = TurnScope::multi;
  int max_new_tokens = 32;
  double temperature = 1.0;
  u64 seed = 0;
  size_t max_contexts = 0;  // 0: all dialogues in the split
  EvalOptions eval;
};

/// Generates responses for every dialogue of the split at each k (per-context
/// RNG streams derived from (seed, context index), so rows with equivalent
/// configurations are identical) and scores them.
template <class T>
SweepResult sweep_top_k(const Parameters<T>& params, const TextCodec& codec,
                        const DialogueCorpus& corpus, Split split, const std::vector<int>& ks,
                        const SweepOptions& opts);

template <class T>
SweepResult sweep_top_p(const Parameters<T>& params, const TextCodec& codec,
                        const DialogueCorpus& corpus, Split split, const std::vector<double>& ps,
                        const SweepOptions& opts);

std::vector<int> default_k_grid();      // 0..20
std::vector<double> default_p_grid();   // 0.1..1.0 step 0.1

std::string sweep_to_csv(const SweepResult& r);  // k_or_p,bleu2,rouge2,dist1,dist2,nasl

}  // namespace dlg
