#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "latoracle/error.hpp"
#include "latoracle/symbols.hpp"

namespace latoracle {

struct NGramHash {
    std::size_t operator()(const TokenSeq& s) const noexcept {
        std::size_t h = 0xcbf29ce484222325ULL;
        for (auto t : s) {
            h ^= t + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        }
        return h;
    }
};

using NGramCounts = std::unordered_map<TokenSeq, int, NGramHash>;

/// Counts every n-gram of `seq` with 1 <= n <= max_order.
inline NGramCounts count_ngrams(std::span<const TokenId> seq, int max_order) {
    NGramCounts counts;
    const auto len = static_cast<int>(seq.size());
    for (int n = 1; n <= max_order; ++n)
        for (int i = 0; i + n <= len; ++i)
            ++counts[TokenSeq(seq.begin() + i, seq.begin() + i + n)];
    return counts;
}

inline std::uint64_t pack_bigram(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

/// Reference-side n-gram statistics: counts for clipping (exact BLEU) and
/// presence tests (linear BLEU). Unigram and bigram presence have dedicated
/// lookups because the oracle queries them per arc.
class NGramIndex {
public:
    explicit NGramIndex(std::span<const TokenId> ref, int max_order = 4)
        : max_order_(max_order), ref_len_(ref.size()), counts_(count_ngrams(ref, max_order)) {
        if (max_order < 1) throw InputError("n-gram order must be >= 1");
        for (std::size_t i = 0; i < ref.size(); ++i) {
            unigrams_.insert(ref[i]);
            if (i + 1 < ref.size()) bigrams_.insert(pack_bigram(ref[i], ref[i + 1]));
        }
    }

    int max_order() const { return max_order_; }
    std::size_t ref_length() const { return ref_len_; }

    int count(const TokenSeq& ngram) const {
        auto it = counts_.find(ngram);
        return it == counts_.end() ? 0 : it->second;
    }
    bool contains(const TokenSeq& ngram) const { return count(ngram) > 0; }
    bool contains(TokenId unigram) const { return unigrams_.contains(unigram); }
    bool contains(TokenId first, TokenId second) const {
        return bigrams_.contains(pack_bigram(first, second));
    }

private:
    int max_order_;
    std::size_t ref_len_;
    NGramCounts counts_;
    std::unordered_set<TokenId> unigrams_;
    std::unordered_set<std::uint64_t> bigrams_;
};

/// Linear-BLEU weights: theta_0 = 1 and theta_n = -1 / (4 p r^(n-1)).
struct ThetaParams {
    double p = 0.25;
    double r_decay = 0.5;
    int order = 2;

    ThetaParams() = default;
    ThetaParams(double precision, double ratio, int n = 2) : p(precision), r_decay(ratio), order(n) {
        if (!(p > 0.0 && p < 1.0)) throw InputError("theta parameter p must be in (0, 1)");
        if (!(r_decay > 0.0 && r_decay < 1.0)) throw InputError("theta parameter r must be in (0, 1)");
        if (order < 1) throw InputError("theta order must be >= 1");
    }

    double theta(int n) const {
        if (n == 0) return 1.0;
        return -1.0 / (4.0 * p * std::pow(r_decay, n - 1));
    }

    std::vector<double> thetas() const {
        std::vector<double> out;
        for (int n = 0; n <= order; ++n) out.push_back(theta(n));
        return out;
    }
};

/// theta_0 |hyp| + sum_n theta_n sum_u c_u(hyp) delta_u(ref). Counts are not
/// clipped: every occurrence of a matched n-gram is rewarded.
///
/// `context` holds tokens preceding `hyp` (e.g. an already scored prefix);
/// n-grams that start in the context and end inside `hyp` are counted, which
/// makes the cost additive over concatenation:
///   cost(a + b) == cost(a) + cost(b, context = a).
inline double linear_bleu_cost(std::span<const TokenId> hyp, const NGramIndex& idx,
                               const ThetaParams& th, std::span<const TokenId> context = {}) {
    if (th.order > idx.max_order())
        throw InputError("theta order exceeds the reference index order");
    TokenSeq seq(context.begin(), context.end());
    seq.insert(seq.end(), hyp.begin(), hyp.end());
    const auto c = static_cast<int>(context.size());
    const auto len = static_cast<int>(seq.size());

    double cost = th.theta(0) * static_cast<double>(hyp.size());
    for (int n = 1; n <= th.order; ++n) {
        int matched = 0;
        for (int end = c; end < len; ++end) {
            const int begin = end - n + 1;
            if (begin < 0) continue;
            if (idx.contains(TokenSeq(seq.begin() + begin, seq.begin() + end + 1))) ++matched;
        }
        cost += th.theta(n) * matched;
    }
    return cost;
}

// ---------------------------------------------------------------------------
// Exact metrics. Scores live in [0, 1]; tables multiply by 100.

struct BleuStats {
    std::vector<long> matches;
    std::vector<long> totals;
    long hyp_len = 0;
    long ref_len = 0;

    explicit BleuStats(int max_n = 4) : matches(max_n, 0), totals(max_n, 0) {}

    void add(std::span<const TokenId> hyp, std::span<const TokenId> ref) {
        const int max_n = static_cast<int>(matches.size());
        const auto h = count_ngrams(hyp, max_n);
        const auto r = count_ngrams(ref, max_n);
        for (const auto& [gram, cnt] : h) {
            auto it = r.find(gram);
            if (it != r.end()) matches[gram.size() - 1] += std::min(cnt, it->second);
        }
        for (int n = 1; n <= max_n; ++n)
            totals[n - 1] += std::max<long>(0, static_cast<long>(hyp.size()) - n + 1);
        hyp_len += static_cast<long>(hyp.size());
        ref_len += static_cast<long>(ref.size());
    }
};

inline double brevity_penalty(long hyp_len, long ref_len) {
    if (hyp_len == 0) return 0.0;
    return std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
}

/// Sentence BLEU: unigram precision unsmoothed, add-one smoothing on
/// numerator and denominator for n >= 2.
inline double sentence_bleu(std::span<const TokenId> hyp, std::span<const TokenId> ref,
                            int max_n = 4) {
    if (max_n < 1) throw InputError("BLEU order must be >= 1");
    if (ref.empty()) throw InputError("BLEU reference is empty");
    if (hyp.empty()) return 0.0;
    BleuStats s(max_n);
    s.add(hyp, ref);
    if (s.matches[0] == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 0; n < max_n; ++n) {
        const double num = static_cast<double>(s.matches[n]) + (n > 0 ? 1.0 : 0.0);
        const double den = static_cast<double>(s.totals[n]) + (n > 0 ? 1.0 : 0.0);
        log_sum += std::log(num / den);
    }
    return std::exp(log_sum / max_n) * brevity_penalty(s.hyp_len, s.ref_len);
}

using SentencePair = std::pair<TokenSeq, TokenSeq>;

/// Corpus BLEU over aggregated clipped counts, no smoothing.
inline double corpus_bleu(std::span<const SentencePair> pairs, int max_n = 4) {
    if (pairs.empty()) throw InputError("corpus BLEU of an empty corpus");
    BleuStats s(max_n);
    for (const auto& [hyp, ref] : pairs) s.add(hyp, ref);
    double log_sum = 0.0;
    for (int n = 0; n < max_n; ++n) {
        if (s.matches[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
    }
    return std::exp(log_sum / max_n) * brevity_penalty(s.hyp_len, s.ref_len);
}

/// Sentence GLEU: min(precision, recall) over pooled 1..4-gram matches.
inline double gleu(std::span<const TokenId> hyp, std::span<const TokenId> ref) {
    if (ref.empty()) throw InputError("GLEU reference is empty");
    constexpr int kMaxN = 4;
    const auto h = count_ngrams(hyp, kMaxN);
    const auto r = count_ngrams(ref, kMaxN);
    long matches = 0, hyp_total = 0, ref_total = 0;
    for (const auto& [gram, cnt] : h) {
        hyp_total += cnt;
        auto it = r.find(gram);
        if (it != r.end()) matches += std::min(cnt, it->second);
    }
    for (const auto& [gram, cnt] : r) ref_total += cnt;
    if (hyp_total == 0) return 0.0;
    const double precision = static_cast<double>(matches) / static_cast<double>(hyp_total);
    const double recall = static_cast<double>(matches) / static_cast<double>(ref_total);
    return std::min(precision, recall);
}

enum class Metric { Bleu, Gleu };

inline double score(Metric m, std::span<const TokenId> hyp, std::span<const TokenId> ref) {
    return m == Metric::Bleu ? sentence_bleu(hyp, ref) : gleu(hyp, ref);
}

/// metric(full) - metric(prefix): the contribution of the suffix appended to
/// `prefix`. May be negative.
inline double suffix_metric(std::span<const TokenId> prefix, std::span<const TokenId> full,
                            std::span<const TokenId> ref, Metric m) {
    if (prefix.size() > full.size() || !std::equal(prefix.begin(), prefix.end(), full.begin()))
        throw InputError("suffix metric: prefix is not a prefix of the full hypothesis");
    return score(m, full, ref) - score(m, prefix, ref);
}

}  // namespace latoracle
