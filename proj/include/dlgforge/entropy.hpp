#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlgforge/corpus.hpp"
#include "dlgforge/tokenizer.hpp"

namespace dlg {

/// Per-position Shannon entropy (bits) of the token distribution across a
/// corpus view. Only covered positions appear; positions no sequence reaches
/// are absent rather than zero.
struct EntropyProfile {
  std::vector<double> entropy_bits;
  std::vector<size_t> support;

  size_t positions() const { return entropy_bits.size(); }
};

/// H_j = -sum_w p(w|j) log2 p(w|j), estimated over sequences of length > j.
EntropyProfile positional_entropy(const std::vector<std::vector<i32>>& sequences,
                                  size_t max_positions);

/// Flatness statistic: population standard deviation of H_j over covered
/// positions.
double profile_stddev(const EntropyProfile& profile);

/// Mean entropy of the first+last position deciles vs. the interior deciles.
struct BoundaryStats {
  double boundary_mean = 0;
  double interior_mean = 0;
};
BoundaryStats boundary_interior_means(const EntropyProfile& profile);

std::string profile_to_csv(const EntropyProfile& profile);  // position,entropy_bits,support

struct EntropyReportOptions {
  std::vector<std::string> variants;  // subset of {"basic", "bpe", "padded"}
  Split split = Split::train;
  int max_seq_len = 128;      // window for the padded variant
  u64 seed = 0;               // padding randomness for the padded variant
  int basic_min_frequency = 1;
  size_t max_positions = 1 << 20;
};

/// Builds the requested corpus views and writes entropy_<variant>.csv files.
/// Returns the profiles in variant order. An empty variant list writes
/// nothing and succeeds.
std::vector<EntropyProfile> profile_report(const DialogueCorpus& corpus, const TextCodec* bpe,
                                           const EntropyReportOptions& opts,
                                           const std::filesystem::path& out_dir);

/// The tokenized corpus views the report runs on, exposed for tests and the
/// acceptance suite.
std::vector<std::vector<i32>> corpus_view_bpe(const DialogueCorpus& corpus, const TextCodec& codec,
                                              Split split);
std::vector<std::vector<i32>> corpus_view_basic(const DialogueCorpus& corpus, Split split,
                                                int min_frequency);
std::vector<std::vector<i32>> corpus_view_padded(const DialogueCorpus& corpus, const TextCodec& codec,
                                                 Split split, int max_seq_len, u64 seed);

}  // namespace dlg
