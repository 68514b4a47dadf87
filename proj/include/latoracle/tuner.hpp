#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latoracle/batch.hpp"
#include "latoracle/error.hpp"
#include "latoracle/lattice.hpp"
#include "latoracle/metrics.hpp"
#include "latoracle/oracle.hpp"
#include "latoracle/parallel.hpp"
#include "latoracle/rng.hpp"

namespace latoracle {

/// Where tuning prefixes are cut from: the reference itself, or a supplied
/// noisy translation standing in for a student's output.
enum class PrefixSource { Reference, Imperfect };

inline std::string_view to_string(PrefixSource s) {
    return s == PrefixSource::Reference ? "reference" : "imperfect";
}

inline PrefixSource parse_prefix_source(std::string_view s) {
    if (s == "reference") return PrefixSource::Reference;
    if (s == "imperfect") return PrefixSource::Imperfect;
    throw InputError("prefix source must be 'reference' or 'imperfect', got '" + std::string(s) + "'");
}

struct DevExample {
    Lattice lattice;
    TokenSeq reference;
    // Sequence prefixes are cut from.
    TokenSeq prefix_source;
};

struct GridSpec {
    std::vector<double> p_values;
    std::vector<double> r_values;
    // Prefix lengths as fractions of the prefix source; 0 decodes from scratch.
    std::vector<double> prefix_fractions{0.0};
    // Optional outer loop over pruning thresholds; empty means unpruned.
    std::vector<double> b_values;

    void validate() const {
        auto open_unit = [](const std::vector<double>& v, const char* name) {
            if (v.empty()) throw InputError(std::string(name) + " grid is empty");
            for (double x : v)
                if (!(x > 0.0 && x < 1.0)) throw InputError(std::string(name) + " values must be in (0, 1)");
        };
        open_unit(p_values, "p");
        open_unit(r_values, "r");
        if (prefix_fractions.empty()) throw InputError("prefix fraction grid is empty");
        for (double f : prefix_fractions)
            if (!(f >= 0.0 && f <= 1.0)) throw InputError("prefix fractions must be in [0, 1]");
        for (double b : b_values)
            if (!(b > 0.0 && b <= 1.0)) throw InputError("b values must be in (0, 1]");
    }

    /// p and r over 0.10..0.95 in steps of 0.05; prefixes at 0..80% in 20% steps.
    static GridSpec standard() {
        GridSpec g;
        for (int i = 2; i <= 19; ++i) {
            g.p_values.push_back(i * 0.05);
            g.r_values.push_back(i * 0.05);
        }
        g.prefix_fractions = {0.0, 0.2, 0.4, 0.6, 0.8};
        return g;
    }
};

struct GridCell {
    std::optional<double> b;
    double p = 0.0;
    double r = 0.0;
    double corpus_bleu = 0.0;
    std::size_t skipped = 0;
};

struct GridResult {
    GridCell best;
    std::vector<GridCell> table;
    // Prefix cut per dev example, shared by every cell.
    std::vector<std::size_t> cuts;
};

/// Prefix length per example: a fraction drawn uniformly from the grid, times
/// the prefix source length, rounded.
inline std::vector<std::size_t> sample_cuts(std::span<const DevExample> dev,
                                            std::span<const double> fractions, std::uint64_t seed) {
    std::vector<std::size_t> cuts;
    cuts.reserve(dev.size());
    for (std::size_t i = 0; i < dev.size(); ++i) {
        auto rng = make_rng(seed, {0x74756e65, i});
        const double f = fractions[std::uniform_int_distribution<std::size_t>(0, fractions.size() - 1)(rng)];
        const auto n = dev[i].prefix_source.size();
        cuts.push_back(
            std::min<std::size_t>(n, static_cast<std::size_t>(std::lround(f * static_cast<double>(n)))));
    }
    return cuts;
}

// Higher BLEU wins; ties go to smaller p, then r, then b.
inline bool better_cell(const GridCell& a, const GridCell& b) {
    if (a.corpus_bleu != b.corpus_bleu) return a.corpus_bleu > b.corpus_bleu;
    if (a.p != b.p) return a.p < b.p;
    if (a.r != b.r) return a.r < b.r;
    return a.b.value_or(1.0) < b.b.value_or(1.0);
}

/// Corpus BLEU of oracle continuations for every (b, p, r) cell. Examples the
/// oracle fails on are skipped and counted per cell.
inline GridResult grid_search(std::span<const DevExample> dev, const GridSpec& grid, std::uint64_t seed,
                              unsigned jobs = 1) {
    if (dev.empty()) throw InputError("grid search needs a non-empty dev set");
    grid.validate();
    for (std::size_t i = 0; i < dev.size(); ++i)
        if (dev[i].reference.empty())
            throw InputError("dev example " + std::to_string(i + 1) + " has an empty reference");

    GridResult out;
    out.cuts = sample_cuts(dev, grid.prefix_fractions, seed);

    std::vector<std::optional<double>> bs;
    if (grid.b_values.empty()) bs.push_back(std::nullopt);
    for (double b : grid.b_values) bs.push_back(b);

    for (const auto& b : bs) {
        std::vector<std::optional<Oracle>> oracles(dev.size());
        parallel_for(dev.size(), jobs, [&](std::size_t i) {
            oracles[i].emplace(b ? prune(dev[i].lattice, PruneSpec(*b)) : dev[i].lattice);
        });
        for (double p : grid.p_values) {
            for (double r : grid.r_values) {
                const ThetaParams th(p, r);
                std::vector<std::optional<TokenSeq>> hyps(dev.size());
                parallel_for(dev.size(), jobs, [&](std::size_t i) {
                    const auto& ex = dev[i];
                    const std::span<const TokenId> prefix(ex.prefix_source.data(), out.cuts[i]);
                    try {
                        hyps[i] = oracles[i]->continue_prefix(prefix, ex.reference, th).full_hyp;
                    } catch (const OracleError&) {
                    }
                });
                GridCell cell{b, p, r, 0.0, 0};
                std::vector<SentencePair> pairs;
                for (std::size_t i = 0; i < dev.size(); ++i) {
                    if (hyps[i])
                        pairs.emplace_back(std::move(*hyps[i]), dev[i].reference);
                    else
                        ++cell.skipped;
                }
                if (!pairs.empty()) cell.corpus_bleu = corpus_bleu(pairs);
                out.table.push_back(cell);
            }
        }
    }

    out.best = out.table.front();
    for (const auto& c : out.table)
        if (better_cell(c, out.best)) out.best = c;
    return out;
}

inline constexpr const char* kGridCsvHeader = "b,p,r,prefix_source,corpus_bleu,skipped";

/// One row per cell in grid order; b is blank when the lattices were not pruned.
inline void write_grid_csv(std::ostream& out, const GridResult& result, PrefixSource source) {
    out << kGridCsvHeader << '\n';
    for (const auto& c : result.table) {
        out << (c.b ? format_fixed(*c.b, 4) : "") << ',' << format_fixed(c.p, 4) << ','
            << format_fixed(c.r, 4) << ',' << to_string(source) << ',' << format_fixed(c.corpus_bleu) << ','
            << c.skipped << '\n';
    }
}

}  // namespace latoracle
