#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "latoracle/error.hpp"
#include "latoracle/il/policy.hpp"
#include "latoracle/lattice.hpp"
#include "latoracle/oracle.hpp"
#include "latoracle/rng.hpp"

namespace latoracle::il {

/// Synthetic translation task. The reference is a token-wise substitution of
/// the source; each lattice is a chain of per-position candidate sets.
///
/// noise_rate is the student's error channel: at a noised position the
/// lattice's cheapest candidate is a wrong token, and a student rolling in
/// on that example emits it regardless of its policy.
struct SyntheticTask {
    std::uint32_t source_vocab = 8;
    std::uint32_t target_vocab = 32;
    double noise_rate = 0.0;
    double coverage = 1.0;
    std::uint32_t candidates = 3;
    std::uint32_t min_length = 4;
    std::uint32_t max_length = 8;
    std::uint64_t map_seed = 1;

    void validate() const {
        if (source_vocab < 1) throw InputError("source_vocab must be >= 1");
        if (target_vocab < source_vocab) throw InputError("target_vocab must be >= source_vocab");
        if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw InputError("noise rate must be in [0, 1)");
        if (!(coverage > 0.0 && coverage <= 1.0)) throw InputError("coverage must be in (0, 1]");
        if (candidates < 1 || candidates > target_vocab)
            throw InputError("candidates must be in [1, target_vocab]");
        if (coverage < 1.0 && candidates >= target_vocab)
            throw InputError("coverage < 1 needs candidates < target_vocab");
        if (min_length < 1 || min_length > max_length)
            throw InputError("lengths must satisfy 1 <= min_length <= max_length");
    }

    // Content tokens are ids 1..target_vocab; the end token follows them.
    TokenId end_token() const { return target_vocab + 1; }
    std::size_t num_actions() const { return target_vocab + 1; }
};

struct Example {
    SourceSeq source;
    TokenSeq reference;
    Lattice lattice;
    // noise[t] != kBos marks a position where the student emits noise[t].
    TokenSeq noise;
};

/// Source token -> target token, fixed by map_seed.
inline std::vector<TokenId> substitution_map(const SyntheticTask& cfg) {
    std::vector<TokenId> targets(cfg.target_vocab);
    std::iota(targets.begin(), targets.end(), TokenId{1});
    auto rng = make_rng(cfg.map_seed, {0x6d6170});
    std::shuffle(targets.begin(), targets.end(), rng);
    targets.resize(cfg.source_vocab);
    return targets;
}

inline SymbolTable task_symbols(const SyntheticTask& cfg) {
    SymbolTable symtab;
    for (std::uint32_t i = 1; i <= cfg.target_vocab; ++i) symtab.intern("t" + std::to_string(i));
    symtab.intern("</s>");
    return symtab;
}

inline std::string source_string(const SourceSeq& source) {
    std::string out;
    for (std::size_t i = 0; i < source.size(); ++i) {
        if (i) out += ' ';
        out += 's' + std::to_string(source[i]);
    }
    return out;
}

namespace detail {

inline Example make_example(const SyntheticTask& cfg, const std::vector<TokenId>& map, Rng& rng) {
    std::uniform_int_distribution<std::uint32_t> len(cfg.min_length, cfg.max_length);
    std::uniform_int_distribution<std::uint32_t> src(0, cfg.source_vocab - 1);
    std::uniform_int_distribution<TokenId> tok(1, cfg.target_vocab);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Example ex{{}, {}, Lattice::build(1, {}, {0}), {}};
    const std::uint32_t n = len(rng);
    std::vector<Transition> edges;
    for (std::uint32_t t = 0; t < n; ++t) {
        const auto s = src(rng);
        const TokenId ref = map[s];
        ex.source.push_back(s);
        ex.reference.push_back(ref);

        TokenId noise = kBos;
        if (cfg.target_vocab > 1 && unit(rng) < cfg.noise_rate) {
            do noise = tok(rng);
            while (noise == ref);
        }
        ex.noise.push_back(noise);

        const bool covered = cfg.coverage >= 1.0 || unit(rng) < cfg.coverage;
        TokenSeq cands;
        if (covered) cands.push_back(ref);
        if (noise != kBos && cands.size() < cfg.candidates) cands.push_back(noise);
        while (cands.size() < cfg.candidates) {
            const TokenId c = tok(rng);
            if (c == ref || std::find(cands.begin(), cands.end(), c) != cands.end()) continue;
            cands.push_back(c);
        }
        const bool noise_in = noise != kBos && std::find(cands.begin(), cands.end(), noise) != cands.end();
        const TokenId cheapest = noise_in ? noise : cands.front();

        std::sort(cands.begin(), cands.end());
        for (TokenId c : cands) {
            const double cost = c == cheapest ? unit(rng) * 0.5 : 0.5 + unit(rng) * 2.5;
            edges.push_back({t, t + 1, {c}, cost});
        }
    }
    ex.lattice = Lattice::build(n + 1, std::move(edges), {n});
    return ex;
}

}  // namespace detail

/// n examples drawn from a stream fixed by `seed`; example i depends only on
/// (map_seed, seed, i).
inline std::vector<Example> generate_task(const SyntheticTask& cfg, std::size_t n, std::uint64_t seed) {
    cfg.validate();
    if (n < 1) throw InputError("task needs at least one example");
    const auto map = substitution_map(cfg);
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = make_rng(seed, {0x7461736b, i});
        out.push_back(detail::make_example(cfg, map, rng));
    }
    return out;
}

inline std::vector<Oracle> make_oracles(const std::vector<Example>& corpus) {
    std::vector<Oracle> out;
    out.reserve(corpus.size());
    for (const auto& ex : corpus) out.emplace_back(ex.lattice);
    return out;
}

inline bool reference_in_lattice(const Example& ex) {
    for (std::size_t t = 0; t < ex.reference.size(); ++t) {
        bool found = false;
        for (auto id : ex.lattice.out()[static_cast<StateId>(t)])
            if (ex.lattice.transitions()[id].labels.front() == ex.reference[t]) found = true;
        if (!found) return false;
    }
    return true;
}

}  // namespace latoracle::il
