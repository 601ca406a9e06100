#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffcap {

template <typename Tok>
using Ngram = std::vector<Tok>;

template <typename Tok>
std::map<Ngram<Tok>, int> ngram_counts(std::span<const Tok> s, int n) {
  std::map<Ngram<Tok>, int> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Ngram<Tok>(s.begin() + i, s.begin() + i + n)];
  return counts;
}

/// Clipped n-gram matches and totals for one candidate, orders 1..4.
struct BleuStats {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long candidate_length = 0;
  long reference_length = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int i = 0; i < 4; ++i) {
      matches[i] += o.matches[i];
      totals[i] += o.totals[i];
    }
    candidate_length += o.candidate_length;
    reference_length += o.reference_length;
    return *this;
  }
};

template <typename Tok>
BleuStats bleu_stats(std::span<const Tok> candidate, std::span<const std::vector<Tok>> references) {
  if (candidate.empty() || references.empty()) throw std::invalid_argument("bleu needs a candidate and references");
  BleuStats st;
  st.candidate_length = static_cast<long>(candidate.size());
  // closest reference length, shorter on ties
  long best = -1;
  for (const auto& r : references) {
    if (r.empty()) throw std::invalid_argument("empty reference");
    const long len = static_cast<long>(r.size());
    const long diff = std::abs(len - st.candidate_length);
    const long best_diff = std::abs(best - st.candidate_length);
    if (best < 0 || diff < best_diff || (diff == best_diff && len < best)) best = len;
  }
  st.reference_length = best;
  for (int n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts<Tok>(candidate, n);
    std::map<Ngram<Tok>, int> max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : ngram_counts<Tok>(std::span<const Tok>(r), n))
        max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : cand) {
      auto it = max_ref.find(g);
      st.matches[n - 1] += std::min(c, it == max_ref.end() ? 0 : it->second);
      st.totals[n - 1] += c;
    }
  }
  return st;
}

/// Geometric mean of n-gram precisions up to `max_n` times the brevity
/// penalty. With smoothing, orders >= 2 use (matches + 1) / (total + 1).
inline double bleu_from_stats(const BleuStats& st, int max_n, bool smoothing) {
  if (max_n < 1 || max_n > 4) throw std::invalid_argument("bleu order must be 1..4");
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    double m = static_cast<double>(st.matches[n - 1]);
    double t = static_cast<double>(st.totals[n - 1]);
    if (smoothing && n >= 2) {
      m += 1.0;
      t += 1.0;
    }
    if (m <= 0.0 || t <= 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double c = static_cast<double>(st.candidate_length);
  const double r = static_cast<double>(st.reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

template <typename Tok>
double bleu(std::span<const Tok> candidate, std::span<const std::vector<Tok>> references, int max_n,
            bool smoothing) {
  return bleu_from_stats(bleu_stats(candidate, references), max_n, smoothing);
}

/// Corpus BLEU: statistics summed over examples before taking the mean.
template <typename Tok>
double corpus_bleu(std::span<const std::vector<Tok>> candidates,
                   std::span<const std::vector<std::vector<Tok>>> references, int max_n) {
  if (candidates.size() != references.size() || candidates.empty())
    throw std::invalid_argument("corpus bleu needs matching non-empty corpora");
  BleuStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].empty()) {
      // empty output: contributes reference length only
      BleuStats st;
      st.reference_length = static_cast<long>(references[i].front().size());
      for (const auto& r : references[i])
        st.reference_length = std::min<long>(st.reference_length, static_cast<long>(r.size()));
      total += st;
      continue;
    }
    total += bleu_stats(std::span<const Tok>(candidates[i]), std::span<const std::vector<Tok>>(references[i]));
  }
  if (total.candidate_length == 0) return 0.0;
  return bleu_from_stats(total, max_n, false);
}

template <typename Tok>
std::size_t lcs_length(std::span<const Tok> a, std::span<const Tok> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS F1 against the best-matching reference.
template <typename Tok>
double rouge_l(std::span<const Tok> candidate, std::span<const std::vector<Tok>> references) {
  if (candidate.empty() || references.empty()) throw std::invalid_argument("rouge_l needs a candidate and references");
  double best = 0.0;
  for (const auto& r : references) {
    if (r.empty()) throw std::invalid_argument("empty reference");
    const double lcs = static_cast<double>(lcs_length(candidate, std::span<const Tok>(r)));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(candidate.size());
    const double rec = lcs / static_cast<double>(r.size());
    best = std::max(best, 2.0 * p * rec / (p + rec));
  }
  return best;
}

struct CiderResult {
  double score = 0.0;               // corpus mean, in [0, 10]
  std::vector<double> per_example;  // same scale
  bool degenerate_idf = false;      // single-document corpus: every idf is zero
};

/// CIDEr without the CIDEr-D length penalty: for n = 1..4, cosine similarity
/// of tf-idf n-gram vectors (idf = log(N / max(1, df)), df over reference
/// sets), averaged over references and orders, scaled by 10.
template <typename Tok>
CiderResult cider(std::span<const std::vector<Tok>> candidates,
                  std::span<const std::vector<std::vector<Tok>>> references) {
  if (candidates.size() != references.size() || candidates.empty())
    throw std::invalid_argument("cider needs matching non-empty corpora");
  const std::size_t N = candidates.size();
  CiderResult res;
  res.degenerate_idf = N == 1;
  res.per_example.assign(N, 0.0);
  for (int n = 1; n <= 4; ++n) {
    std::map<Ngram<Tok>, int> df;
    for (const auto& refs : references) {
      std::set<Ngram<Tok>> seen;
      for (const auto& r : refs)
        for (const auto& [g, c] : ngram_counts<Tok>(std::span<const Tok>(r), n)) seen.insert(g);
      for (const auto& g : seen) ++df[g];
    }
    auto vec = [&](std::span<const Tok> s) {
      std::map<Ngram<Tok>, double> v;
      const auto counts = ngram_counts<Tok>(s, n);
      double total = 0.0;
      for (const auto& [g, c] : counts) total += c;
      for (const auto& [g, c] : counts) {
        auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : std::max(1, it->second);
        v[g] = (c / total) * std::log(static_cast<double>(N) / d);
      }
      return v;
    };
    auto norm = [](const std::map<Ngram<Tok>, double>& v) {
      double s = 0.0;
      for (const auto& [g, x] : v) s += x * x;
      return std::sqrt(s);
    };
    for (std::size_t i = 0; i < N; ++i) {
      if (candidates[i].empty()) continue;
      const auto cv = vec(std::span<const Tok>(candidates[i]));
      const double cn = norm(cv);
      double sum = 0.0;
      for (const auto& r : references[i]) {
        const auto rv = vec(std::span<const Tok>(r));
        const double rn = norm(rv);
        if (cn == 0.0 || rn == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, x] : cv) {
          auto it = rv.find(g);
          if (it != rv.end()) dot += x * it->second;
        }
        sum += dot / (cn * rn);
      }
      res.per_example[i] += 10.0 * sum / static_cast<double>(references[i].size()) / 4.0;
    }
  }
  for (double s : res.per_example) res.score += s;
  res.score /= static_cast<double>(N);
  return res;
}

/// Unique n-grams over total n-grams across all candidates.
template <typename Tok>
double distinct_n(std::span<const std::vector<Tok>> candidates, int n) {
  if (candidates.empty()) throw std::invalid_argument("distinct_n needs candidates");
  if (n < 1) throw std::invalid_argument("n must be positive");
  std::set<Ngram<Tok>> unique;
  long total = 0;
  for (const auto& c : candidates)
    for (std::size_t i = 0; i + n <= c.size(); ++i) {
      unique.emplace(c.begin() + i, c.begin() + i + n);
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

using Sentence = std::vector<std::string>;

struct ExampleScores {
  std::string id;
  std::string candidate;
  double bleu4 = 0.0;  // sentence-level, smoothed
  double rouge_l = 0.0;
  double cider = 0.0;
  bool exact_match = false;
};

/// Corpus scores (BLEU@1-4 corpus-level, mean ROUGE-L, CIDEr, distinct-1/2,
/// exact-match rate) plus a per-example table.
struct MetricsReport {
  std::vector<std::pair<std::string, double>> corpus;
  std::vector<ExampleScores> examples;
  std::vector<std::string> warnings;

  double get(const std::string& name) const;
};

MetricsReport evaluate_captions(std::span<const std::string> ids, std::span<const Sentence> candidates,
                                std::span<const std::vector<Sentence>> references);

std::string report_json(const MetricsReport& report, const std::string& config_hash, std::uint64_t seed);
std::string report_csv(const MetricsReport& report);

}  // namespace diffcap
