#pragma once

// Brute-force reference computations, independent of the library
// implementations they check. Everything here favours obviousness over
// speed and is only run on small inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "citypipe/metrics.hpp"

namespace oracles {

using Tokens = std::vector<std::string>;

// --- n-gram helpers on explicit token-vector keys -------------------------

inline std::map<Tokens, int> count_ngrams(const Tokens& tokens, int n) {
  std::map<Tokens, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[Tokens(tokens.begin() + i, tokens.begin() + i + n)] += 1;
  }
  return counts;
}

// --- BLEU-4 ---------------------------------------------------------------

inline double bleu4_oracle(const Tokens& hyp, const std::vector<Tokens>& refs) {
  if (hyp.empty()) return 0.0;
  double product = 1.0;
  for (int n = 1; n <= 4; ++n) {
    const std::map<Tokens, int> hyp_counts = count_ngrams(hyp, n);
    long long total = 0, matched = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      int best_ref = 0;
      for (const Tokens& ref : refs) {
        const std::map<Tokens, int> ref_counts = count_ngrams(ref, n);
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) best_ref = std::max(best_ref, it->second);
      }
      matched += std::min<long long>(count, best_ref);
    }
    if (total == 0 || matched == 0) return 0.0;
    product *= static_cast<double>(matched) / static_cast<double>(total);
  }
  // closest reference length, ties toward the shorter
  std::size_t ref_len = refs.front().size();
  for (const Tokens& ref : refs) {
    const auto d = [&](std::size_t len) {
      return len > hyp.size() ? len - hyp.size() : hyp.size() - len;
    };
    if (d(ref.size()) < d(ref_len) || (d(ref.size()) == d(ref_len) && ref.size() < ref_len)) {
      ref_len = ref.size();
    }
  }
  const double bp =
      hyp.size() >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp.size()));
  return bp * std::pow(product, 0.25);
}

// --- ROUGE-L ---------------------------------------------------------------

inline std::size_t lcs_oracle(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> dp(a.size() + 1,
                                           std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                      : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  return dp[a.size()][b.size()];
}

inline double rouge_l_oracle(const Tokens& hyp, const Tokens& ref, double beta = 1.2) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_oracle(hyp, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  return (1.0 + beta * beta) * r * p / (r + beta * beta * p);
}

// --- METEOR ----------------------------------------------------------------

// Exhaustive alignment search: every injective pairing built from exact or
// stem-equal tokens, filtered to maximal exact count, then maximal total
// count, then minimal chunks. Only feasible for short sentences.
struct MeteorAlignmentOracle {
  int exact = -1;
  int total = -1;
  int chunks = std::numeric_limits<int>::max();
};

inline int chunk_count_oracle(std::vector<std::pair<int, int>> pairs) {
  if (pairs.empty()) return 0;
  std::sort(pairs.begin(), pairs.end());
  int chunks = 1;
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (pairs[i].first != pairs[i - 1].first + 1 ||
        pairs[i].second != pairs[i - 1].second + 1) {
      ++chunks;
    }
  }
  return chunks;
}

inline void meteor_search(const Tokens& hyp, const Tokens& ref, const Tokens& hyp_stems,
                          const Tokens& ref_stems, std::size_t pos, std::vector<bool>& ref_used,
                          std::vector<std::pair<int, int>>& pairs, int exact,
                          MeteorAlignmentOracle& best) {
  if (pos == hyp.size()) {
    const int total = static_cast<int>(pairs.size());
    const int chunks = chunk_count_oracle(pairs);
    const auto better = [&]() {
      if (exact != best.exact) return exact > best.exact;
      if (total != best.total) return total > best.total;
      return chunks < best.chunks;
    };
    if (better()) {
      best = MeteorAlignmentOracle{exact, total, chunks};
    }
    return;
  }
  // leave hyp[pos] unmatched
  meteor_search(hyp, ref, hyp_stems, ref_stems, pos + 1, ref_used, pairs, exact, best);
  for (std::size_t j = 0; j < ref.size(); ++j) {
    if (ref_used[j]) continue;
    const bool exact_match = hyp[pos] == ref[j];
    const bool stem_match = hyp_stems[pos] == ref_stems[j];
    if (!exact_match && !stem_match) continue;
    ref_used[j] = true;
    pairs.emplace_back(static_cast<int>(pos), static_cast<int>(j));
    meteor_search(hyp, ref, hyp_stems, ref_stems, pos + 1, ref_used, pairs,
                  exact + (exact_match ? 1 : 0), best);
    pairs.pop_back();
    ref_used[j] = false;
  }
}

inline double meteor_oracle(const Tokens& hyp, const Tokens& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  Tokens hyp_stems(hyp.size()), ref_stems(ref.size());
  std::transform(hyp.begin(), hyp.end(), hyp_stems.begin(), citypipe::porter_stem);
  std::transform(ref.begin(), ref.end(), ref_stems.begin(), citypipe::porter_stem);
  MeteorAlignmentOracle best;
  std::vector<bool> ref_used(ref.size(), false);
  std::vector<std::pair<int, int>> pairs;
  meteor_search(hyp, ref, hyp_stems, ref_stems, 0, ref_used, pairs, 0, best);
  if (best.total <= 0) return 0.0;
  const double m = best.total;
  const double p = m / static_cast<double>(hyp.size());
  const double r = m / static_cast<double>(ref.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(best.chunks) / m, 3.0);
  return f * (1.0 - penalty);
}

// --- CIDEr-D ----------------------------------------------------------------

// Dense TF-IDF vectors over an explicit vocabulary; cosine per n; gaussian
// length penalty on bigram totals; clipped hypothesis weights.
struct CiderItemOracle {
  Tokens hyp;
  std::vector<Tokens> refs;
};

inline std::vector<double> cider_d_oracle(const std::vector<CiderItemOracle>& corpus,
                                          double sigma = 6.0) {
  const double log_n = std::log(static_cast<double>(corpus.size()));
  std::vector<double> scores;
  for (const CiderItemOracle& item : corpus) {
    double item_score = 0.0;
    for (int n = 1; n <= 4; ++n) {
      // vocabulary of this order across the whole corpus
      std::set<Tokens> vocab;
      for (const CiderItemOracle& other : corpus) {
        for (const auto& [gram, c] : count_ngrams(other.hyp, n)) vocab.insert(gram);
        for (const Tokens& ref : other.refs) {
          for (const auto& [gram, c] : count_ngrams(ref, n)) vocab.insert(gram);
        }
      }
      std::vector<Tokens> index(vocab.begin(), vocab.end());
      const auto df = [&](const Tokens& gram) {
        int count = 0;
        for (const CiderItemOracle& other : corpus) {
          bool found = false;
          for (const Tokens& ref : other.refs) {
            if (count_ngrams(ref, n).count(gram) > 0) found = true;
          }
          if (found) ++count;
        }
        return count;
      };
      const auto weight_vector = [&](const Tokens& sentence) {
        std::vector<double> vec(index.size(), 0.0);
        const std::map<Tokens, int> counts = count_ngrams(sentence, n);
        for (std::size_t k = 0; k < index.size(); ++k) {
          const auto it = counts.find(index[k]);
          if (it == counts.end()) continue;
          const double idf = log_n - std::log(std::max(1.0, static_cast<double>(df(index[k]))));
          vec[k] = static_cast<double>(it->second) * idf;
        }
        return vec;
      };
      const auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
      };
      const auto bigram_total = [](const Tokens& sentence) {
        double total = 0.0;
        for (const auto& [gram, c] : count_ngrams(sentence, 2)) total += c;
        return total;
      };

      const std::vector<double> hyp_vec = weight_vector(item.hyp);
      double over_refs = 0.0;
      for (const Tokens& ref : item.refs) {
        const std::vector<double> ref_vec = weight_vector(ref);
        double dot = 0.0;
        for (std::size_t k = 0; k < index.size(); ++k) {
          dot += std::min(hyp_vec[k], ref_vec[k]) * ref_vec[k];
        }
        double sim = 0.0;
        if (norm(hyp_vec) > 0.0 && norm(ref_vec) > 0.0) {
          sim = dot / (norm(hyp_vec) * norm(ref_vec));
        }
        const double delta = bigram_total(item.hyp) - bigram_total(ref);
        sim *= std::exp(-(delta * delta) / (2.0 * sigma * sigma));
        over_refs += sim;
      }
      item_score += over_refs / static_cast<double>(item.refs.size());
    }
    scores.push_back(item_score / 4.0 * 10.0);
  }
  return scores;
}

// --- the three-clause area filter -------------------------------------------

inline bool area_filter_oracle(double area_p, double area_v, double thr_p, double thr_v) {
  const bool clause1 = area_p > thr_p && area_v > thr_v;
  const bool clause2 = area_p > thr_p && area_v == 0.0;
  const bool clause3 = area_v > thr_v && area_p == 0.0;
  return !(clause1 || clause2 || clause3);
}

}  // namespace oracles
