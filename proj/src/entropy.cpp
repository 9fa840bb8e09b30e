#include "dlgforge/entropy.hpp"

#include <algorithm>
#include <cmath>

namespace dlg {

EntropyProfile positional_entropy(const std::vector<std::vector<i32>>& sequences,
                                  size_t max_positions) {
  if (sequences.empty()) fail("no sequences");
  if (max_positions < 1) fail("max_positions must be >= 1");

  size_t longest = 0;
  i32 max_id = 0;
  for (const auto& s : sequences) {
    longest = std::max(longest, s.size());
    for (i32 id : s) max_id = std::max(max_id, id);
  }
  const size_t L = std::min(longest, max_positions);

  EntropyProfile profile;
  profile.entropy_bits.resize(L);
  profile.support.resize(L);

  // Positions are independent; tokens are tallied densely and summed in
  // ascending id order, so the result is byte-identical no matter how the
  // loop is scheduled.
#pragma omp parallel for schedule(dynamic)
  for (i64 j = 0; j < static_cast<i64>(L); ++j) {
    std::vector<i64> counts(static_cast<size_t>(max_id) + 1, 0);
    i64 n = 0;
    for (const auto& s : sequences) {
      if (s.size() > static_cast<size_t>(j)) {
        counts[static_cast<size_t>(s[static_cast<size_t>(j)])] += 1;
        ++n;
      }
    }
    double h = 0;
    for (i64 c : counts) {
      if (c == 0) continue;
      double p = static_cast<double>(c) / static_cast<double>(n);
      h -= p * std::log2(p);
    }
    profile.entropy_bits[static_cast<size_t>(j)] = h;
    profile.support[static_cast<size_t>(j)] = static_cast<size_t>(n);
  }
  return profile;
}

double profile_stddev(const EntropyProfile& profile) {
  const size_t n = profile.positions();
  if (n == 0) fail("empty profile");
  double mean = 0;
  for (double h : profile.entropy_bits) mean += h;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double h : profile.entropy_bits) var += (h - mean) * (h - mean);
  return std::sqrt(var / static_cast<double>(n));
}

BoundaryStats boundary_interior_means(const EntropyProfile& profile) {
  const size_t n = profile.positions();
  if (n < 10) fail("profile too short for decile statistics");
  const size_t d = n / 10;
  BoundaryStats stats;
  size_t nb = 0, ni = 0;
  for (size_t j = 0; j < n; ++j) {
    if (j < d || j >= n - d) {
      stats.boundary_mean += profile.entropy_bits[j];
      ++nb;
    } else {
      stats.interior_mean += profile.entropy_bits[j];
      ++ni;
    }
  }
  stats.boundary_mean /= static_cast<double>(nb);
  stats.interior_mean /= static_cast<double>(ni);
  return stats;
}

std::string profile_to_csv(const EntropyProfile& profile) {
  std::string out = "position,entropy_bits,support\n";
  for (size_t j = 0; j < profile.positions(); ++j) {
    out += std::to_string(j);
    out += ',';
    out += fmt_double(profile.entropy_bits[j]);
    out += ',';
    out += std::to_string(profile.support[j]);
    out += '\n';
  }
  return out;
}

std::vector<std::vector<i32>> corpus_view_bpe(const DialogueCorpus& corpus, const TextCodec& codec,
                                              Split split) {
  std::vector<std::vector<i32>> out;
  for (size_t i : corpus.split_indices(split))
    out.push_back(render_dialogue(corpus.dialogues[i], codec));
  return out;
}

std::vector<std::vector<i32>> corpus_view_basic(const DialogueCorpus& corpus, Split split,
                                                int min_frequency) {
  // The basic vocabulary is always built from the training split, matching
  // how the coverage statistic is defined.
  std::string train_text;
  for (size_t i : corpus.split_indices(Split::train))
    for (const std::string& u : corpus.dialogues[i].utterances) {
      train_text += u;
      train_text += '\n';
    }
  BasicVocab vocab = BasicVocab::build(train_text, min_frequency);
  std::vector<std::vector<i32>> out;
  for (size_t i : corpus.split_indices(split))
    out.push_back(render_dialogue(corpus.dialogues[i], vocab));
  return out;
}

std::vector<std::vector<i32>> corpus_view_padded(const DialogueCorpus& corpus, const TextCodec& codec,
                                                 Split split, int max_seq_len, u64 seed) {
  AssemblyConfig cfg;
  cfg.padding = PaddingMode::random;
  cfg.loss = LossMode::joint;
  cfg.turns = TurnScope::multi;
  cfg.max_seq_len = max_seq_len;
  Assembler assembler(corpus, codec, cfg);
  std::vector<std::vector<i32>> out;
  for (size_t i : corpus.split_indices(split)) {
    if (!assembler.fits(i)) continue;
    Rng rng(hash_mix({seed, 0xE27ull, i}));
    out.push_back(assembler.assemble(i, rng).ids);
  }
  if (out.empty()) fail("empty corpus");
  return out;
}

std::vector<EntropyProfile> profile_report(const DialogueCorpus& corpus, const TextCodec* bpe,
                                           const EntropyReportOptions& opts,
                                           const std::filesystem::path& out_dir) {
  std::vector<EntropyProfile> profiles;
  for (const std::string& variant : opts.variants) {
    std::vector<std::vector<i32>> view;
    if (variant == "basic") {
      view = corpus_view_basic(corpus, opts.split, opts.basic_min_frequency);
    } else if (variant == "bpe") {
      if (!bpe) fail("bpe variant requires a codec");
      view = corpus_view_bpe(corpus, *bpe, opts.split);
    } else if (variant == "padded") {
      if (!bpe) fail("padded variant requires a codec");
      view = corpus_view_padded(corpus, *bpe, opts.split, opts.max_seq_len, opts.seed);
    } else {
      fail("unknown entropy variant: " + variant);
    }
    EntropyProfile profile = positional_entropy(view, opts.max_positions);
    write_text_file(out_dir / ("entropy_" + variant + ".csv"), profile_to_csv(profile));
    profiles.push_back(std::move(profile));
  }
  return profiles;
}

}  // namespace dlg
