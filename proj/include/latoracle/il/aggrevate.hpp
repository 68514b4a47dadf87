#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "latoracle/error.hpp"
#include "latoracle/il/exploration.hpp"
#include "latoracle/il/policy.hpp"
#include "latoracle/il/task.hpp"
#include "latoracle/metrics.hpp"
#include "latoracle/oracle.hpp"
#include "latoracle/parallel.hpp"
#include "latoracle/rng.hpp"

namespace latoracle::il {

/// sigma(scale * (q - offset)), mapping Q to the BLEU range.
struct SigmoidCalibration {
    double scale = 1.0;
    double offset = 0.0;

    double operator()(double q) const { return 1.0 / (1.0 + std::exp(-scale * (q - offset))); }
};

/// Places q_min at 0.05 and q_max at 0.95.
inline SigmoidCalibration sigmoid_calibrate(double q_min, double q_max) {
    if (q_min > q_max) throw InputError("sigmoid calibration needs q_min <= q_max");
    if (q_min == q_max) return {1.0, q_min};
    return {2.0 * std::log(19.0) / (q_max - q_min), 0.5 * (q_min + q_max)};
}

// I * (sigma(Q) - delta)^2
inline double loss_term(double q, double delta, bool indicator, const SigmoidCalibration& c) {
    if (!indicator) return 0.0;
    const double d = c(q) - delta;
    return d * d;
}

// d loss_term / dQ
inline double loss_gradient(double q, double delta, bool indicator, const SigmoidCalibration& c) {
    if (!indicator) return 0.0;
    const double s = c(q);
    return 2.0 * (s - delta) * s * (1.0 - s) * c.scale;
}

/// Mean per-token NLL of references (end token included) under teacher forcing.
inline double teacher_forced_nll(const Policy& policy, std::span<const Example> corpus) {
    double total = 0.0;
    std::size_t count = 0;
    const TokenId end = policy.end_token();
    for (const auto& ex : corpus) {
        for (std::size_t t = 0; t <= ex.reference.size(); ++t) {
            const std::span<const TokenId> prefix(ex.reference.data(), t);
            const TokenId target = t < ex.reference.size() ? ex.reference[t] : end;
            total += token_nll(policy.q_values(ex.source, prefix), action_index(target));
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

/// Teacher-forcing baseline: one averaged NLL gradient step per epoch.
/// Returns the corpus NLL before training and after every epoch.
inline std::vector<double> behavioral_cloning(Policy& policy, std::span<const Example> corpus, int epochs) {
    if (corpus.empty()) throw InputError("behavioral cloning needs a non-empty corpus");
    std::vector<double> nll{teacher_forced_nll(policy, corpus)};
    const TokenId end = policy.end_token();
    for (int e = 0; e < epochs; ++e) {
        std::vector<QGradient> grads;
        for (const auto& ex : corpus) {
            for (std::size_t t = 0; t <= ex.reference.size(); ++t) {
                const auto cut = ex.reference.begin() + static_cast<long>(t);
                QGradient g{ex.source, TokenSeq(ex.reference.begin(), cut), {}};
                const auto p = softmax(policy.q_values(g.source, g.prefix));
                const TokenId gold = t < ex.reference.size() ? ex.reference[t] : end;
                const std::size_t target = action_index(gold);
                for (std::size_t i = 0; i < p.size(); ++i)
                    g.entries.emplace_back(i, p[i] - (i == target ? 1.0 : 0.0));
                grads.push_back(std::move(g));
            }
        }
        policy.update(grads);
        nll.push_back(teacher_forced_nll(policy, corpus));
    }
    return nll;
}

inline std::vector<SentencePair> roll_in_corpus(const Policy& policy, std::span<const Example> corpus) {
    std::vector<SentencePair> pairs;
    pairs.reserve(corpus.size());
    for (const auto& ex : corpus) pairs.emplace_back(roll_in(policy, ex.source, ex.noise), ex.reference);
    return pairs;
}

/// Corpus BLEU of the student's roll-ins, in [0, 1].
inline double student_bleu(const Policy& policy, std::span<const Example> corpus) {
    return corpus_bleu(roll_in_corpus(policy, corpus));
}

struct AggrevateConfig {
    int iterations = 20;
    ExplorationStrategy strategy = ExplorationStrategy::mixture(0.1);
    ThetaParams theta{};
    // Passes over the aggregated loss terms after each epoch.
    int passes = 1;
    // Apply each loss term as its own step instead of one averaged step.
    bool per_step = false;
    std::optional<SigmoidCalibration> calibration;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
};

/// One AggreVaTe query: roll-in, sampled position, exploration action and
/// the oracle's answer.
struct SentenceRecord {
    std::size_t example = 0;
    bool skipped = false;
    std::size_t t = 0;
    TokenId action = kBos;
    double q = 0.0;
    double delta = 0.0;
    bool indicator = false;
    double bleu_s = 0.0;   // student roll-in
    double bleu_o = 0.0;   // from-scratch oracle
    double bleu_oe = 0.0;  // oracle continuation after prefix + action
    double loss = 0.0;
};

struct IterationLog {
    int iteration = 0;
    double b_s = 0.0;
    double b_o = 0.0;
    double b_oe = 0.0;
    // Mean of the indicator I: share of sentences the oracle improves.
    double ratio = 0.0;
    double loss = 0.0;
    std::size_t skipped = 0;
    double heldout_bleu = std::numeric_limits<double>::quiet_NaN();
    std::vector<SentenceRecord> records;
};

/// Per-iteration averages over the non-skipped records.
inline IterationLog summarize(int iteration, std::vector<SentenceRecord> records) {
    IterationLog log;
    log.iteration = iteration;
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.skipped) {
            ++log.skipped;
            continue;
        }
        ++n;
        log.b_s += r.bleu_s;
        log.b_o += r.bleu_o;
        log.b_oe += r.bleu_oe;
        log.ratio += r.indicator ? 1.0 : 0.0;
        log.loss += r.loss;
    }
    if (n) {
        const double d = static_cast<double>(n);
        log.b_s /= d;
        log.b_o /= d;
        log.b_oe /= d;
        log.ratio /= d;
        log.loss /= d;
    }
    log.records = std::move(records);
    return log;
}

struct AggrevateResult {
    SigmoidCalibration calibration;
    std::vector<IterationLog> iterations;
};

/// AggreVaTe on a tabular student. `oracles[i]` answers queries for
/// corpus[i]. When `heldout` is given, its roll-in corpus BLEU is logged
/// after every iteration.
inline AggrevateResult aggrevate_train(Policy& policy, std::span<const Example> corpus,
                                       std::span<const Oracle> oracles, const AggrevateConfig& cfg,
                                       std::span<const Example> heldout = {}) {
    if (corpus.empty()) throw InputError("AggreVaTe needs a non-empty corpus");
    if (oracles.size() != corpus.size()) throw InputError("one oracle per training example required");
    if (cfg.iterations < 0 || cfg.passes < 1) throw InputError("iterations >= 0 and passes >= 1 required");

    const TokenId end = policy.end_token();

    std::vector<double> scratch_bleu(corpus.size());
    parallel_for(corpus.size(), cfg.jobs, [&](std::size_t i) {
        scratch_bleu[i] = oracles[i].decode(corpus[i].reference, cfg.theta).exact_bleu;
    });

    AggrevateResult result;
    std::optional<SigmoidCalibration> calib = cfg.calibration;

    for (int j = 1; j <= cfg.iterations; ++j) {
        std::vector<SentenceRecord> records(corpus.size());
        std::vector<std::pair<double, double>> q_range(corpus.size());
        std::vector<TokenSeq> prefixes(corpus.size());
        parallel_for(corpus.size(), cfg.jobs, [&](std::size_t i) {
            const auto& ex = corpus[i];
            auto& rec = records[i];
            rec.example = i;
            auto rng = make_rng(cfg.seed, {static_cast<std::uint64_t>(j), i});
            const auto y = roll_in(policy, ex.source, ex.noise);
            if (y.empty()) {
                rec.skipped = true;
                return;
            }
            rec.t = sample_position(y.size(), rng);
            TokenSeq query(y.begin(), y.begin() + static_cast<long>(rec.t));
            const auto q = policy.q_values(ex.source, query);
            rec.action = select_action(cfg.strategy, q, rng);
            rec.q = q[action_index(rec.action)];
            const auto [qmin, qmax] = std::minmax_element(q.begin(), q.end());
            q_range[i] = {*qmin, *qmax};
            prefixes[i] = query;
            if (rec.action == end) {
                // Stopping has no suffix to contribute.
                rec.delta = 0.0;
                rec.bleu_oe = sentence_bleu(query, ex.reference);
            } else {
                query.push_back(rec.action);
                try {
                    const auto res = oracles[i].continue_prefix(query, ex.reference, cfg.theta);
                    rec.delta = res.reward_to_go;
                    rec.bleu_oe = res.exact_bleu;
                } catch (const OracleError&) {
                    rec.skipped = true;
                    return;
                }
            }
            rec.bleu_s = sentence_bleu(y, ex.reference);
            rec.bleu_o = scratch_bleu[i];
            rec.indicator = rec.bleu_oe > rec.bleu_s;
        });

        if (!calib) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < records.size(); ++i) {
                if (records[i].skipped) continue;
                lo = std::min(lo, q_range[i].first);
                hi = std::max(hi, q_range[i].second);
            }
            calib = std::isfinite(lo) ? sigmoid_calibrate(lo, hi) : SigmoidCalibration{};
        }

        // Lambda: the gated loss terms of this epoch.
        std::vector<const SentenceRecord*> lambda;
        for (auto& rec : records) {
            if (rec.skipped) continue;
            rec.loss = loss_term(rec.q, rec.delta, rec.indicator, *calib);
            if (rec.indicator) lambda.push_back(&rec);
        }

        for (int pass = 0; pass < cfg.passes; ++pass) {
            std::vector<QGradient> grads;
            for (const auto* rec : lambda) {
                const auto& ex = corpus[rec->example];
                QGradient g{ex.source, prefixes[rec->example], {}};
                const double q = policy.q_values(g.source, g.prefix)[action_index(rec->action)];
                const double d = loss_gradient(q, rec->delta, true, *calib);
                g.entries.emplace_back(action_index(rec->action), d);
                if (cfg.per_step)
                    policy.update(std::span<const QGradient>(&g, 1));
                else
                    grads.push_back(std::move(g));
            }
            if (!cfg.per_step && !grads.empty()) policy.update(grads);
        }

        auto log = summarize(j, std::move(records));
        if (!heldout.empty()) log.heldout_bleu = student_bleu(policy, heldout);
        result.iterations.push_back(std::move(log));
    }
    result.calibration = calib.value_or(SigmoidCalibration{});
    return result;
}

}  // namespace latoracle::il
