#include "dlgforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace dlg {

using json = nlohmann::json;

namespace {

constexpr double kEps = 1e-12;

/// n-gram multiset keyed by tokens joined with an unlikely separator byte.
std::unordered_map<std::string, i64> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::unordered_map<std::string, i64> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1F';
      key += tokens[i + static_cast<size_t>(j)];
    }
    counts[key] += 1;
  }
  return counts;
}

i64 clipped_matches(const std::unordered_map<std::string, i64>& hyp,
                    const std::unordered_map<std::string, i64>& ref) {
  i64 m = 0;
  for (const auto& [k, c] : hyp) {
    auto it = ref.find(k);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

double smoothed_precision(i64 matches, i64 total) {
  if (matches == 0 || total == 0)
    return (static_cast<double>(matches) + kEps) / (static_cast<double>(total) + kEps);
  return static_cast<double>(matches) / static_cast<double>(total);
}

}  // namespace

std::vector<std::string> metric_tokenize(std::string_view text) {
  std::string lowered = lower_ascii(text);
  std::vector<std::string> out;
  size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && is_ascii_space(static_cast<unsigned char>(lowered[i]))) ++i;
    size_t start = i;
    while (i < lowered.size() && !is_ascii_space(static_cast<unsigned char>(lowered[i]))) ++i;
    if (i > start) out.push_back(lowered.substr(start, i - start));
  }
  return out;
}

double bleu2(const std::vector<EvalPair>& pairs, BleuOptions opts) {
  if (pairs.empty()) fail("no pairs");
  if (!opts.corpus_level) {
    double sum = 0;
    for (const EvalPair& p : pairs) {
      i64 c = static_cast<i64>(p.hyp.size());
      i64 r = static_cast<i64>(p.ref.size());
      if (c == 0) continue;  // pair score 0
      double score = 1.0;
      for (int n = 1; n <= 2; ++n) {
        auto h = ngram_counts(p.hyp, n);
        auto g = ngram_counts(p.ref, n);
        i64 total = std::max<i64>(c - n + 1, 0);
        score *= smoothed_precision(clipped_matches(h, g), total);
      }
      double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
      sum += bp * std::sqrt(score);
    }
    return sum / static_cast<double>(pairs.size());
  }
  i64 match1 = 0, total1 = 0, match2 = 0, total2 = 0, csum = 0, rsum = 0;
  for (const EvalPair& p : pairs) {
    i64 c = static_cast<i64>(p.hyp.size());
    csum += c;
    rsum += static_cast<i64>(p.ref.size());
    match1 += clipped_matches(ngram_counts(p.hyp, 1), ngram_counts(p.ref, 1));
    total1 += std::max<i64>(c, 0);
    match2 += clipped_matches(ngram_counts(p.hyp, 2), ngram_counts(p.ref, 2));
    total2 += std::max<i64>(c - 1, 0);
  }
  if (csum == 0) return 0.0;
  double p1 = smoothed_precision(match1, total1);
  double p2 = smoothed_precision(match2, total2);
  double bp = csum < rsum ? std::exp(1.0 - static_cast<double>(rsum) / static_cast<double>(csum)) : 1.0;
  return bp * std::sqrt(p1 * p2);
}

double rouge2(const std::vector<EvalPair>& pairs, RougeVariant variant, size_t* skipped) {
  if (pairs.empty()) fail("no pairs");
  double sum = 0;
  size_t used = 0, skip = 0;
  for (const EvalPair& p : pairs) {
    if (p.ref.size() < 2) {
      ++skip;
      continue;
    }
    auto h = ngram_counts(p.hyp, 2);
    auto g = ngram_counts(p.ref, 2);
    i64 m = clipped_matches(h, g);
    i64 hyp_total = std::max<i64>(static_cast<i64>(p.hyp.size()) - 1, 0);
    i64 ref_total = static_cast<i64>(p.ref.size()) - 1;
    double prec = hyp_total > 0 ? static_cast<double>(m) / static_cast<double>(hyp_total) : 0.0;
    double rec = static_cast<double>(m) / static_cast<double>(ref_total);
    double score;
    if (variant == RougeVariant::recall)
      score = rec;
    else
      score = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    sum += score;
    ++used;
  }
  if (skipped) *skipped = skip;
  return used ? sum / static_cast<double>(used) : 0.0;
}

double distinct_n(const std::vector<std::vector<std::string>>& hypotheses, int n) {
  std::unordered_map<std::string, i64> pooled;
  i64 total = 0;
  for (const auto& hyp : hypotheses)
    for (const auto& [k, c] : ngram_counts(hyp, n)) {
      pooled[k] += c;
      total += c;
    }
  if (total == 0) fail("no n-grams");
  return static_cast<double>(pooled.size()) / static_cast<double>(total);
}

double nasl(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) fail("no pairs");
  double sum = 0;
  for (const EvalPair& p : pairs) {
    if (p.ref.empty()) fail("empty reference");
    sum += static_cast<double>(p.hyp.size()) / static_cast<double>(p.ref.size());
  }
  return sum / static_cast<double>(pairs.size());
}

MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs, EvalOptions opts) {
  if (pairs.empty()) fail("no pairs");
  MetricReport r;
  r.pairs = pairs.size();
  r.bleu2 = bleu2(pairs, opts.bleu);
  r.rouge2 = rouge2(pairs, opts.rouge);
  std::vector<std::vector<std::string>> hyps;
  hyps.reserve(pairs.size());
  for (const EvalPair& p : pairs) hyps.push_back(p.hyp);
  // Degenerate runs (every hypothesis empty / single-token) report zero
  // diversity rather than failing the whole evaluation.
  try {
    r.dist1 = distinct_n(hyps, 1);
  } catch (const std::exception&) {
    r.dist1 = 0;
  }
  try {
    r.dist2 = distinct_n(hyps, 2);
  } catch (const std::exception&) {
    r.dist2 = 0;
  }
  r.nasl = nasl(pairs);
  return r;
}

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

namespace {

std::string csv_quote(const std::string& s) {
  bool needs = s.find_first_of(",\"\n\r") != std::string::npos;
  if (!needs) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

/// Minimal RFC-4180-style row reader over the whole file.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  size_t i = 0;
  auto end_field = [&]() {
    row.push_back(field);
    field.clear();
  };
  auto end_row = [&]() {
    end_field();
    rows.push_back(row);
    row.clear();
  };
  while (i < text.size()) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
        continue;
      }
      field += c;
      ++i;
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      ++i;
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\n') {
      if (!field.empty() || !row.empty()) end_row();
      ++i;
    } else if (c == '\r') {
      ++i;
    } else {
      field += c;
      ++i;
    }
  }
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

std::string pick_key(const json& obj, std::initializer_list<const char*> keys) {
  for (const char* k : keys)
    if (obj.contains(k) && obj.at(k).is_string()) return obj.at(k).get<std::string>();
  fail("missing key");
}

}  // namespace

void write_generations_jsonl(const std::filesystem::path& path, const std::vector<GenRecord>& records) {
  std::string out;
  for (const GenRecord& r : records) {
    json j;
    j["context"] = r.context;
    j["groundtruth"] = r.groundtruth;
    j["generated"] = r.generated;
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

void write_generations_csv(const std::filesystem::path& path, const std::vector<GenRecord>& records) {
  std::string out = "context,groundtruth,generated\n";
  for (const GenRecord& r : records) {
    out += csv_quote(r.context);
    out += ',';
    out += csv_quote(r.groundtruth);
    out += ',';
    out += csv_quote(r.generated);
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<GenRecord> read_generations(const std::filesystem::path& path, size_t* malformed) {
  std::string text = read_text_file(path);
  std::vector<GenRecord> out;
  size_t bad = 0;
  if (path.extension() == ".csv") {
    auto rows = parse_csv(text);
    if (rows.empty()) fail("empty run file");
    const auto& header = rows[0];
    int ctx_col = -1, ref_col = -1, hyp_col = -1;
    for (size_t c = 0; c < header.size(); ++c) {
      std::string h = lower_ascii(trim(header[c]));
      if (h == "context") ctx_col = static_cast<int>(c);
      if (h == "groundtruth" || h == "reference") ref_col = static_cast<int>(c);
      if (h == "generated" || h == "hypothesis") hyp_col = static_cast<int>(c);
    }
    if (ref_col < 0 || hyp_col < 0) fail("run CSV missing reference/hypothesis columns");
    for (size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (static_cast<int>(row.size()) <= std::max(ref_col, hyp_col)) {
        ++bad;
        continue;
      }
      GenRecord rec;
      if (ctx_col >= 0 && ctx_col < static_cast<int>(row.size()))
        rec.context = row[static_cast<size_t>(ctx_col)];
      rec.groundtruth = row[static_cast<size_t>(ref_col)];
      rec.generated = row[static_cast<size_t>(hyp_col)];
      out.push_back(std::move(rec));
    }
  } else {
    for (const std::string& line : split(text, '\n')) {
      if (trim_view(line).empty()) continue;
      try {
        json j = json::parse(line);
        GenRecord rec;
        rec.context = j.contains("context") && j.at("context").is_string()
                          ? j.at("context").get<std::string>()
                          : "";
        rec.groundtruth = pick_key(j, {"groundtruth", "reference"});
        rec.generated = pick_key(j, {"generated", "hypothesis"});
        out.push_back(std::move(rec));
      } catch (const std::exception&) {
        ++bad;
      }
    }
  }
  if (malformed) *malformed = bad;
  return out;
}

MetricReport evaluate_run_file(const std::filesystem::path& path, EvalOptions opts) {
  size_t malformed = 0;
  std::vector<GenRecord> records = read_generations(path, &malformed);
  std::vector<EvalPair> pairs;
  size_t empty_refs = 0;
  for (const GenRecord& r : records) {
    EvalPair p;
    p.hyp = metric_tokenize(r.generated);
    p.ref = metric_tokenize(r.groundtruth);
    if (p.ref.empty()) {
      ++empty_refs;
      continue;
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) fail("empty run file");
  MetricReport report = evaluate_pairs(pairs, opts);
  report.skipped_rows = malformed + empty_refs;
  return report;
}

std::string report_to_csv(const MetricReport& r) {
  std::string out = "bleu2,rouge2,dist1,dist2,nasl\n";
  out += fmt_double(r.bleu2);
  out += ',';
  out += fmt_double(r.rouge2);
  out += ',';
  out += fmt_double(r.dist1);
  out += ',';
  out += fmt_double(r.dist2);
  out += ',';
  out += fmt_double(r.nasl);
  out += '\n';
  return out;
}

}  // namespace dlg
