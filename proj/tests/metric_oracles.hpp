#pragma once

// Brute-force metric oracles, deliberately written with quadratic scans and
// sorted vectors instead of the hash-map counting the library uses.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dlgforge/metrics.hpp"

namespace oracle {

inline std::vector<std::vector<std::string>> ngrams(const std::vector<std::string>& toks, int n) {
  std::vector<std::vector<std::string>> out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= toks.size(); ++i)
    out.emplace_back(toks.begin() + static_cast<ptrdiff_t>(i),
                     toks.begin() + static_cast<ptrdiff_t>(i + static_cast<size_t>(n)));
  return out;
}

inline long long clipped(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
                         int n) {
  auto hg = ngrams(hyp, n);
  auto rg = ngrams(ref, n);
  long long total = 0;
  std::vector<bool> seen(hg.size(), false);
  for (size_t i = 0; i < hg.size(); ++i) {
    if (seen[i]) continue;
    long long hyp_count = 0, ref_count = 0;
    for (size_t j = 0; j < hg.size(); ++j)
      if (hg[j] == hg[i]) {
        hyp_count += 1;
        seen[j] = true;
      }
    for (const auto& g : rg)
      if (g == hg[i]) ref_count += 1;
    total += std::min(hyp_count, ref_count);
  }
  return total;
}

inline double bleu2_sentence(const std::vector<dlg::EvalPair>& pairs) {
  double sum = 0;
  for (const auto& p : pairs) {
    long long c = static_cast<long long>(p.hyp.size());
    long long r = static_cast<long long>(p.ref.size());
    if (c == 0) continue;
    double score = 1;
    for (int n = 1; n <= 2; ++n) {
      long long m = clipped(p.hyp, p.ref, n);
      long long t = std::max<long long>(c - n + 1, 0);
      double pn = (m == 0 || t == 0)
                      ? (static_cast<double>(m) + 1e-12) / (static_cast<double>(t) + 1e-12)
                      : static_cast<double>(m) / static_cast<double>(t);
      score *= pn;
    }
    double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
    sum += bp * std::sqrt(score);
  }
  return sum / static_cast<double>(pairs.size());
}

inline double rouge2_f1(const std::vector<dlg::EvalPair>& pairs) {
  double sum = 0;
  size_t used = 0;
  for (const auto& p : pairs) {
    if (p.ref.size() < 2) continue;
    long long m = clipped(p.hyp, p.ref, 2);
    long long ht = std::max<long long>(static_cast<long long>(p.hyp.size()) - 1, 0);
    long long rt = static_cast<long long>(p.ref.size()) - 1;
    double prec = ht > 0 ? static_cast<double>(m) / static_cast<double>(ht) : 0.0;
    double rec = static_cast<double>(m) / static_cast<double>(rt);
    sum += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    ++used;
  }
  return used ? sum / static_cast<double>(used) : 0.0;
}

inline double distinct(const std::vector<std::vector<std::string>>& hyps, int n) {
  std::vector<std::vector<std::string>> all;
  for (const auto& h : hyps)
    for (auto& g : ngrams(h, n)) all.push_back(g);
  if (all.empty()) dlg::fail("no n-grams");
  std::sort(all.begin(), all.end());
  return static_cast<double>(std::unique(all.begin(), all.end()) - all.begin()) /
         static_cast<double>(all.size());
}

inline double nasl_mean(const std::vector<dlg::EvalPair>& pairs) {
  double s = 0;
  for (const auto& p : pairs)
    s += static_cast<double>(p.hyp.size()) / static_cast<double>(p.ref.size());
  return s / static_cast<double>(pairs.size());
}

}  // namespace oracle
