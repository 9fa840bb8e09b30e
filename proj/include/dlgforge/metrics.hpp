#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dlgforge/common.hpp"

namespace dlg {

/// Hypothesis/reference pair, already tokenized for metric purposes
/// (lowercased, whitespace-split decoded text).
struct EvalPair {
  std::vector<std::string> hyp;
  std::vector<std::string> ref;
};

std::vector<std::string> metric_tokenize(std::string_view text);

struct BleuOptions {
  /// false: mean of smoothed per-pair scores (default); true: aggregate-count
  /// corpus BLEU over pooled n-gram statistics.
  bool corpus_level = false;
};

/// BLEU-2: modified 1/2-gram precisions, geometric mean, brevity penalty.
/// Empty cases get epsilon smoothing (1e-12); an empty hypothesis scores 0.
double bleu2(const std::vector<EvalPair>& pairs, BleuOptions opts = {});

enum class RougeVariant { f1, recall };

/// ROUGE-2 with clipped bigram counts. References shorter than two tokens are
/// skipped and counted in *skipped; returns 0 if every pair was skipped.
double rouge2(const std::vector<EvalPair>& pairs, RougeVariant variant = RougeVariant::f1,
              size_t* skipped = nullptr);

/// Corpus-pooled distinct-n: unique n-grams over total n-grams across all
/// hypotheses. Errors with "no n-grams" when nothing qualifies.
double distinct_n(const std::vector<std::vector<std::string>>& hypotheses, int n);

/// Mean of per-pair length ratios len(hyp)/len(ref).
double nasl(const std::vector<EvalPair>& pairs);

struct MetricReport {
  double bleu2 = 0, rouge2 = 0, dist1 = 0, dist2 = 0, nasl = 0;
  size_t pairs = 0;
  size_t skipped_rows = 0;
};

struct EvalOptions {
  BleuOptions bleu;
  RougeVariant rouge = RougeVariant::f1;
};

MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs, EvalOptions opts = {});

/// One generation record as written by `dlgforge generate`.
struct GenRecord {
  std::string context;
  std::string groundtruth;
  std::string generated;
};

void write_generations_jsonl(const std::filesystem::path& path, const std::vector<GenRecord>& records);
void write_generations_csv(const std::filesystem::path& path, const std::vector<GenRecord>& records);

/// Reads .jsonl (context/groundtruth/generated keys, with reference and
/// hypothesis accepted as aliases) or .csv (header row). Malformed rows are
/// skipped and counted.
std::vector<GenRecord> read_generations(const std::filesystem::path& path, size_t* malformed = nullptr);

/// Full run evaluation: read file, tokenize, drop rows with empty references
/// (counted), compute all metric families. Errors on an effectively empty file.
MetricReport evaluate_run_file(const std::filesystem::path& path, EvalOptions opts = {});

/// Report CSV, one header + one row: bleu2,rouge2,dist1,dist2,nasl.
std::string report_to_csv(const MetricReport& r);

}  // namespace dlg
