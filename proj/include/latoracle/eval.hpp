#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "latoracle/batch.hpp"
#include "latoracle/error.hpp"
#include "latoracle/il/aggrevate.hpp"
#include "latoracle/lattice.hpp"
#include "latoracle/metrics.hpp"
#include "latoracle/oracle.hpp"
#include "latoracle/parallel.hpp"
#include "latoracle/rng.hpp"

namespace latoracle::eval {

// ---------------------------------------------------------------------------
// Perplexity by position

/// Positions with fewer samples than this are flagged.
inline constexpr std::size_t kMinPositionSamples = 5;

struct PositionPerplexity {
    std::size_t position = 0;  // 0-based target position
    std::size_t count = 0;
    // exp(mean NLL of the reference token at this position).
    double perplexity = 0.0;
    // Variance across sentences of the per-token perplexity exp(NLL).
    double variance = 0.0;
    bool low_count = false;
};

/// Teacher-forced: position t scores reference[t] given reference[0, t).
inline std::vector<PositionPerplexity> perplexity_by_position(const il::Policy& policy,
                                                              std::span<const il::Example> corpus,
                                                              std::size_t max_pos) {
    if (corpus.empty()) throw InputError("perplexity of an empty corpus");
    std::vector<std::vector<double>> nll(max_pos);
    for (const auto& ex : corpus) {
        for (std::size_t t = 0; t < std::min(max_pos, ex.reference.size()); ++t) {
            const std::span<const TokenId> prefix(ex.reference.data(), t);
            nll[t].push_back(
                il::token_nll(policy.q_values(ex.source, prefix), il::action_index(ex.reference[t])));
        }
    }
    std::vector<PositionPerplexity> out;
    for (std::size_t t = 0; t < max_pos && !nll[t].empty(); ++t) {
        const auto& v = nll[t];
        const double n = static_cast<double>(v.size());
        double mean_nll = 0.0, mean_ppl = 0.0;
        for (double x : v) {
            mean_nll += x;
            mean_ppl += std::exp(x);
        }
        mean_nll /= n;
        mean_ppl /= n;
        double var = 0.0;
        for (double x : v) var += (std::exp(x) - mean_ppl) * (std::exp(x) - mean_ppl);
        out.push_back({t, v.size(), std::exp(mean_nll), var / n, v.size() < kMinPositionSamples});
    }
    return out;
}

inline constexpr const char* kPplCsvHeader = "position,count,perplexity,variance,low_count";

inline void write_ppl_csv(std::ostream& out, std::span<const PositionPerplexity> rows) {
    out << kPplCsvHeader << '\n';
    for (const auto& r : rows)
        out << r.position + 1 << ',' << r.count << ',' << format_fixed(r.perplexity) << ','
            << format_fixed(r.variance) << ',' << (r.low_count ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// (b, beta) sweep

/// One oracle query of the sweep.
struct SweepRecord {
    std::size_t example = 0;
    bool skipped = false;
    std::size_t t = 0;
    TokenId action = kBos;
    // Student prefix plus the exploration action.
    TokenSeq prefix;
    TokenSeq full_hyp;
};

struct SweepRow {
    double b = 1.0;
    double beta = 0.0;
    double s_bleu = 0.0;
    double s_gleu = 0.0;
    double bleu = 0.0;
    double gleu = 0.0;
    std::size_t skipped = 0;
    std::vector<SweepRecord> records;
};

/// Scores of one row, recomputed from its records. BLEU is corpus BLEU of the
/// full hypotheses; GLEU and the suffix scores are sentence means. All x100.
inline void score_sweep_row(SweepRow& row, std::span<const il::Example> corpus) {
    std::vector<SentencePair> pairs;
    double s_bleu = 0.0, s_gleu = 0.0, g = 0.0;
    row.skipped = 0;
    for (const auto& r : row.records) {
        if (r.skipped) {
            ++row.skipped;
            continue;
        }
        const auto& ref = corpus[r.example].reference;
        s_bleu += suffix_metric(r.prefix, r.full_hyp, ref, Metric::Bleu);
        s_gleu += suffix_metric(r.prefix, r.full_hyp, ref, Metric::Gleu);
        g += gleu(r.full_hyp, ref);
        pairs.emplace_back(r.full_hyp, ref);
    }
    if (pairs.empty()) {
        row.s_bleu = row.s_gleu = row.bleu = row.gleu = 0.0;
        return;
    }
    const double n = static_cast<double>(pairs.size());
    row.s_bleu = 100.0 * s_bleu / n;
    row.s_gleu = 100.0 * s_gleu / n;
    row.gleu = 100.0 * g / n;
    row.bleu = 100.0 * corpus_bleu(pairs);
}

/// For each (b, beta): roll in the student, sample a position, pick an action
/// with randomness beta and let the oracle on the b-pruned lattice continue.
/// Position and action draws for example i come from the same stream in every
/// row, so rows differ only by b and beta.
inline std::vector<SweepRow> sweep_table(std::span<const il::Example> corpus,
                                         std::span<const double> b_values,
                                         std::span<const double> beta_values, const il::Policy& policy,
                                         const ThetaParams& th, std::uint64_t seed, unsigned jobs = 1) {
    if (corpus.empty()) throw InputError("sweep needs a non-empty corpus");
    if (b_values.empty() || beta_values.empty()) throw InputError("sweep needs non-empty b and beta grids");
    std::vector<SweepRow> rows;
    for (double b : b_values) {
        const PruneSpec spec(b);
        std::vector<std::optional<Oracle>> oracles(corpus.size());
        parallel_for(corpus.size(), jobs,
                     [&](std::size_t i) { oracles[i].emplace(prune(corpus[i].lattice, spec)); });
        for (double beta : beta_values) {
            const auto strategy = il::ExplorationStrategy::mixture(beta);
            SweepRow row;
            row.b = b;
            row.beta = beta;
            row.records.resize(corpus.size());
            parallel_for(corpus.size(), jobs, [&](std::size_t i) {
                const auto& ex = corpus[i];
                auto& rec = row.records[i];
                rec.example = i;
                auto rng = make_rng(seed, {0x73776565, i});
                const auto y = il::roll_in(policy, ex.source, ex.noise);
                if (y.empty()) {
                    rec.skipped = true;
                    return;
                }
                rec.t = il::sample_position(y.size(), rng);
                rec.prefix.assign(y.begin(), y.begin() + static_cast<long>(rec.t));
                rec.action = il::select_action(strategy, policy.q_values(ex.source, rec.prefix), rng);
                if (rec.action == policy.end_token()) {
                    // Stopping ends the hypothesis; there is nothing to continue.
                    rec.full_hyp = rec.prefix;
                    return;
                }
                rec.prefix.push_back(rec.action);
                try {
                    rec.full_hyp = oracles[i]->continue_prefix(rec.prefix, ex.reference, th).full_hyp;
                } catch (const OracleError&) {
                    rec.skipped = true;
                }
            });
            score_sweep_row(row, corpus);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline constexpr const char* kSweepCsvHeader = "b,beta,s_bleu,s_gleu,bleu,gleu,skipped";

inline void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << kSweepCsvHeader << '\n';
    for (const auto& r : rows)
        out << format_fixed(r.b, 4) << ',' << format_fixed(r.beta, 4) << ',' << format_fixed(r.s_bleu, 4)
            << ',' << format_fixed(r.s_gleu, 4) << ',' << format_fixed(r.bleu, 4) << ','
            << format_fixed(r.gleu, 4) << ',' << r.skipped << '\n';
}

// ---------------------------------------------------------------------------
// Oracle benchmark

/// Bytes of a compact binary encoding: a state count and final list, then per
/// transition its endpoints, cost, label count and labels.
inline std::size_t serialized_size(const Lattice& l) {
    std::size_t bytes = sizeof(std::uint32_t) * (2 + l.finals().size());
    for (const auto& t : l.transitions())
        bytes +=
            2 * sizeof(StateId) + sizeof(double) + sizeof(std::uint32_t) + t.labels.size() * sizeof(TokenId);
    return bytes;
}

/// Serialized lattice plus the expanded lattice and one DP cell per expanded
/// state: what a single oracle query holds in memory.
inline std::size_t memory_proxy(const Lattice& l, const ExpandedLattice& e) {
    return serialized_size(l) + e.arcs().size() * (sizeof(Arc) + sizeof(double)) +
           e.num_states() * (sizeof(detail::PathCell) + sizeof(TokenId) + sizeof(StateId));
}

struct BenchRecord {
    double b = 1.0;
    // Median over repeats of the mean wall time of one continuation query.
    double mean_continuation_time = 0.0;
    // Largest memory proxy over the corpus.
    std::size_t peak_lattice_memory = 0;
    // Totals over the corpus after pruning.
    std::size_t states = 0;
    std::size_t edges = 0;
    std::size_t skipped = 0;
};

struct BenchQuery {
    Lattice lattice;
    TokenSeq reference;
    TokenSeq prefix;
};

/// Times oracle construction plus continue_prefix per query, single-threaded.
/// Repeats cycle over all b values so slow drift hits every b alike.
inline std::vector<BenchRecord> bench_oracle(std::span<const BenchQuery> corpus,
                                             std::span<const double> b_values, int repeats,
                                             const ThetaParams& th = {}) {
    if (repeats < 3) throw InputError("bench needs at least 3 repeats");
    if (corpus.empty()) throw InputError("bench needs a non-empty corpus");
    using Clock = std::chrono::steady_clock;

    std::vector<BenchRecord> out(b_values.size());
    std::vector<std::vector<const BenchQuery*>> kept(b_values.size());
    std::vector<std::vector<Lattice>> pruned(b_values.size());
    for (std::size_t k = 0; k < b_values.size(); ++k) {
        const PruneSpec spec(b_values[k]);
        auto& rec = out[k];
        rec.b = b_values[k];
        for (const auto& q : corpus) {
            try {
                pruned[k].push_back(prune(q.lattice, spec));
                kept[k].push_back(&q);
            } catch (const LatticeError&) {
                ++rec.skipped;
            }
        }
        for (const auto& l : pruned[k]) {
            rec.states += l.num_states();
            rec.edges += l.transitions().size();
            rec.peak_lattice_memory =
                std::max(rec.peak_lattice_memory, memory_proxy(l, Oracle(l).expanded()));
        }
    }

    std::vector<std::vector<double>> times(b_values.size());
    std::size_t guard = 0;
    for (int rep = 0; rep < repeats; ++rep) {
        for (std::size_t k = 0; k < b_values.size(); ++k) {
            const auto start = Clock::now();
            for (std::size_t i = 0; i < pruned[k].size(); ++i) {
                const Oracle oracle(pruned[k][i]);
                guard +=
                    oracle.continue_prefix(kept[k][i]->prefix, kept[k][i]->reference, th).continuation.size();
            }
            const std::chrono::duration<double> dt = Clock::now() - start;
            times[k].push_back(pruned[k].empty() ? 0.0 : dt.count() / static_cast<double>(pruned[k].size()));
        }
    }
    // Keeps the queries observable so they are not optimised away.
    if (guard == static_cast<std::size_t>(-1)) throw OracleError("unreachable");
    for (std::size_t k = 0; k < b_values.size(); ++k) {
        auto& t = times[k];
        std::nth_element(t.begin(), t.begin() + static_cast<long>(t.size() / 2), t.end());
        out[k].mean_continuation_time = t[t.size() / 2];
    }
    return out;
}

/// Dense lattice: `positions` chained states, each with arcs to the next
/// `span` states and `fanout` labels per arc target. Costs are uniform in
/// [0, max_cost), so pruning thresholds spread across edges.
inline Lattice dense_lattice(Rng& rng, std::uint32_t positions, std::uint32_t span, std::uint32_t fanout,
                             std::uint32_t vocab, double max_cost = 3.0) {
    if (positions < 1 || span < 1 || fanout < 1 || vocab < 1)
        throw InputError("dense lattice sizes must be >= 1");
    std::uniform_int_distribution<TokenId> tok(1, vocab);
    std::uniform_real_distribution<double> cost(0.0, max_cost);
    std::vector<Transition> edges;
    for (StateId s = 0; s < positions; ++s)
        for (StateId to = s + 1; to <= std::min(positions, s + span); ++to)
            for (std::uint32_t k = 0; k < fanout; ++k) edges.push_back({s, to, {tok(rng)}, cost(rng)});
    return Lattice::build(positions + 1, std::move(edges), {positions});
}

/// Queries over dense lattices. The reference is a random sentence over the
/// same vocabulary; the prefix is the first half of the model-best path.
inline std::vector<BenchQuery> dense_bench_corpus(std::size_t n, std::uint64_t seed,
                                                  std::uint32_t positions = 12, std::uint32_t span = 3,
                                                  std::uint32_t fanout = 4, std::uint32_t vocab = 40) {
    std::vector<BenchQuery> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = make_rng(seed, {0x62656e63, i});
        BenchQuery q{dense_lattice(rng, positions, span, fanout, vocab), {}, {}};
        std::uniform_int_distribution<TokenId> tok(1, vocab);
        for (std::uint32_t t = 0; t < positions; ++t) q.reference.push_back(tok(rng));
        const auto best = best_model_path(q.lattice).tokens;
        q.prefix.assign(best.begin(), best.begin() + static_cast<long>(best.size() / 2));
        out.push_back(std::move(q));
    }
    return out;
}

inline constexpr const char* kBenchCsvHeader =
    "b,mean_continuation_time,peak_lattice_memory,states,edges,skipped";

inline void write_bench_csv(std::ostream& out, std::span<const BenchRecord> rows) {
    out << kBenchCsvHeader << '\n';
    char buf[32];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6e", r.mean_continuation_time);
        out << format_fixed(r.b, 4) << ',' << buf << ',' << r.peak_lattice_memory << ',' << r.states << ','
            << r.edges << ',' << r.skipped << '\n';
    }
}

// ---------------------------------------------------------------------------
// Training curves

struct CurvePoint {
    int iteration = 0;
    double b_s = 0.0;
    double b_o = 0.0;
    double b_oe = 0.0;
    // Share of sentences where the oracle beats the student (mean of I).
    double ratio = 0.0;
    double loss = 0.0;
    std::size_t skipped = 0;
    double heldout_bleu = std::numeric_limits<double>::quiet_NaN();
};

/// Per-iteration aggregates, recomputed from the persisted sentence records.
inline std::vector<CurvePoint> curve_log(std::span<const il::IterationLog> log) {
    std::vector<CurvePoint> out;
    for (const auto& it : log) {
        const auto s = il::summarize(it.iteration, it.records);
        out.push_back({s.iteration, s.b_s, s.b_o, s.b_oe, s.ratio, s.loss, s.skipped, it.heldout_bleu});
    }
    return out;
}

inline constexpr const char* kCurvesCsvHeader = "iteration,b_s,b_o,b_oe,ratio,loss,skipped,heldout_bleu";

inline void write_curves_csv(std::ostream& out, std::span<const CurvePoint> curve) {
    out << kCurvesCsvHeader << '\n';
    for (const auto& c : curve)
        out << c.iteration << ',' << format_fixed(c.b_s) << ',' << format_fixed(c.b_o) << ','
            << format_fixed(c.b_oe) << ',' << format_fixed(c.ratio) << ',' << format_fixed(c.loss) << ','
            << c.skipped << ',' << (std::isnan(c.heldout_bleu) ? std::string() : format_fixed(c.heldout_bleu))
            << '\n';
}

inline constexpr const char* kRecordsCsvHeader =
    "iteration,example,skipped,t,action,q,delta,indicator,bleu_s,bleu_o,bleu_oe,loss";

/// Per-sentence records behind curves.csv.
inline void write_records_csv(std::ostream& out, std::span<const il::IterationLog> log) {
    out << kRecordsCsvHeader << '\n';
    for (const auto& it : log)
        for (const auto& r : it.records)
            out << it.iteration << ',' << r.example << ',' << (r.skipped ? 1 : 0) << ',' << r.t << ','
                << r.action << ',' << format_fixed(r.q, 9) << ',' << format_fixed(r.delta, 9) << ','
                << (r.indicator ? 1 : 0) << ',' << format_fixed(r.bleu_s, 9) << ','
                << format_fixed(r.bleu_o, 9) << ',' << format_fixed(r.bleu_oe, 9) << ','
                << format_fixed(r.loss, 9) << '\n';
}

}  // namespace latoracle::eval
