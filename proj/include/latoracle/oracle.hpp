#pragma once

#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "latoracle/error.hpp"
#include "latoracle/lattice.hpp"
#include "latoracle/metrics.hpp"

namespace latoracle {

// Path costs closer than this are ties; ties fall through to length, then to
// lexicographic order of token ids.
inline constexpr double kCostTieTolerance = 1e-9;

/// Expanded lattice whose arcs carry linear-BLEU costs against one reference:
///   cost(a) = theta_0 + theta_1 [label in ref] + theta_2 [(ctx(from), label) in ref]
/// Model costs stay on the underlying arcs but are not used for search.
class WeightedLattice {
public:
    WeightedLattice(std::shared_ptr<const ExpandedLattice> lattice,
                    std::shared_ptr<const NGramIndex> index, ThetaParams theta,
                    bool all_final = false)
        : lattice_(std::move(lattice)), index_(std::move(index)), theta_(theta),
          all_final_(all_final) {
        if (theta_.order > 2) throw InputError("oracle decoding supports n-gram order <= 2");
        if (theta_.order > index_->max_order())
            throw InputError("theta order exceeds the reference index order");
        costs_.reserve(lattice_->arcs().size());
        for (std::uint32_t id = 0; id < lattice_->arcs().size(); ++id)
            costs_.push_back(cost_with_context(id, lattice_->ctx(lattice_->arcs()[id].from)));
    }

    const ExpandedLattice& lattice() const { return *lattice_; }
    const ThetaParams& theta() const { return theta_; }
    double cost(std::uint32_t arc) const { return costs_[arc]; }
    bool is_final(StateId s) const { return all_final_ || lattice_->is_final(s); }

    /// Arc cost when the token before the arc is `left` instead of the
    /// context of its source state.
    double cost_with_context(std::uint32_t arc, TokenId left) const {
        const TokenId label = lattice_->arcs()[arc].label;
        double c = theta_.theta(0);
        if (index_->contains(label)) c += theta_.theta(1);
        if (theta_.order >= 2 && left != kBos && index_->contains(left, label))
            c += theta_.theta(2);
        return c;
    }

private:
    std::shared_ptr<const ExpandedLattice> lattice_;
    std::shared_ptr<const NGramIndex> index_;
    ThetaParams theta_;
    bool all_final_;
    std::vector<double> costs_;
};

inline WeightedLattice reweight(std::shared_ptr<const ExpandedLattice> lattice,
                                std::span<const TokenId> ref, const ThetaParams& th,
                                bool all_final = false) {
    auto idx = std::make_shared<const NGramIndex>(ref, std::max(th.order, 1));
    return WeightedLattice(std::move(lattice), std::move(idx), th, all_final);
}

inline WeightedLattice reweight(const ExpandedLattice& lattice, std::span<const TokenId> ref,
                                const ThetaParams& th, bool all_final = false) {
    return reweight(std::make_shared<const ExpandedLattice>(lattice), ref, th, all_final);
}

struct OraclePath {
    TokenSeq tokens;
    double linear_cost = 0.0;
    StateId end_state = 0;
    std::vector<StateId> states;  // visited states, from the source state to end_state
};

namespace detail {

struct PathCell {
    double cost = kInfCost;
    std::size_t length = 0;
    // Arc taken out of the state; -1 stops here (state is final).
    long next = -1;
    bool reachable = false;
};

// Lexicographic order of the token sequences spelled by two candidate
// continuations; an arc id of -1 denotes the empty continuation.
inline int compare_suffixes(const WeightedLattice& w, const std::vector<PathCell>& dp, long a,
                            long b) {
    const auto& arcs = w.lattice().arcs();
    while (a >= 0 && b >= 0) {
        const TokenId la = arcs[a].label, lb = arcs[b].label;
        if (la != lb) return la < lb ? -1 : 1;
        a = dp[arcs[a].to].next;
        b = dp[arcs[b].to].next;
    }
    if (a < 0 && b < 0) return 0;
    return a < 0 ? -1 : 1;
}

}  // namespace detail

/// Minimum-cost path from `from` to any final state by dynamic programming in
/// reverse topological order (negative arc costs are fine on a DAG). Ties
/// prefer the shorter path, then the lexicographically smaller token
/// sequence. `junction` overrides the bigram context of arcs leaving `from`.
/// Returns nullopt when no final state is reachable.
inline std::optional<OraclePath> try_shortest_path(const WeightedLattice& w, StateId from,
                                                   std::optional<TokenId> junction = {}) {
    const auto& lat = w.lattice();
    if (from >= lat.num_states()) throw InputError("shortest path source state out of range");
    std::vector<detail::PathCell> dp(lat.num_states());

    const auto& order = lat.topo_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const StateId s = *it;
        auto& cell = dp[s];
        if (w.is_final(s)) {
            cell = {0.0, 0, -1, true};
        }
        for (auto id : lat.out()[s]) {
            const auto& next = dp[lat.arcs()[id].to];
            if (!next.reachable) continue;
            const double arc_cost =
                (junction && s == from) ? w.cost_with_context(id, *junction) : w.cost(id);
            const double cost = arc_cost + next.cost;
            const std::size_t length = next.length + 1;
            bool better = !cell.reachable;
            if (!better) {
                if (cost < cell.cost - kCostTieTolerance) {
                    better = true;
                } else if (cost <= cell.cost + kCostTieTolerance) {
                    if (length != cell.length)
                        better = length < cell.length;
                    else
                        better = detail::compare_suffixes(w, dp, static_cast<long>(id), cell.next) < 0;
                }
            }
            if (better) cell = {cost, length, static_cast<long>(id), true};
        }
    }

    if (!dp[from].reachable) return std::nullopt;
    OraclePath path;
    path.linear_cost = dp[from].cost;
    StateId s = from;
    path.states.push_back(s);
    while (dp[s].next >= 0) {
        const auto& arc = lat.arcs()[dp[s].next];
        path.tokens.push_back(arc.label);
        s = arc.to;
        path.states.push_back(s);
    }
    path.end_state = s;
    return path;
}

inline OraclePath shortest_path(const WeightedLattice& w, StateId from = 0,
                                std::optional<TokenId> junction = {}) {
    auto p = try_shortest_path(w, from, junction);
    if (!p) throw OracleError("no final state reachable from state " + std::to_string(from));
    return std::move(*p);
}

/// BLEU(prefix + continuation) - BLEU(prefix), where `prefix` already ends
/// with the exploration action.
inline double reward_to_go(std::span<const TokenId> prefix, std::span<const TokenId> continuation,
                           std::span<const TokenId> ref) {
    TokenSeq full(prefix.begin(), prefix.end());
    full.insert(full.end(), continuation.begin(), continuation.end());
    return sentence_bleu(full, ref) - sentence_bleu(prefix, ref);
}

inline double reward_to_go(std::span<const TokenId> prefix, TokenId action,
                           std::span<const TokenId> continuation, std::span<const TokenId> ref) {
    TokenSeq head(prefix.begin(), prefix.end());
    head.push_back(action);
    return reward_to_go(head, continuation, ref);
}

struct OracleResult {
    TokenSeq continuation;
    TokenSeq matched_prefix;
    TokenSeq full_hyp;
    double exact_bleu = 0.0;
    double linear_cost = 0.0;
    double reward_to_go = 0.0;
    // Expanded-lattice state where the matched prefix ends.
    StateId matched_state = 0;

    friend bool operator==(const OracleResult&, const OracleResult&) = default;
};

/// BLEU oracle over one lattice. Construction splits phrases and expands
/// bigram contexts once; queries only reweight and search, so a single
/// instance serves any number of concurrent queries.
class Oracle {
public:
    explicit Oracle(const Lattice& lattice)
        : expanded_(std::make_shared<const ExpandedLattice>(
              expand_bigram_context(split_phrases(lattice)))) {}

    const ExpandedLattice& expanded() const { return *expanded_; }
    std::shared_ptr<const ExpandedLattice> expanded_ptr() const { return expanded_; }

    /// Best complete path against `ref` from scratch.
    OracleResult decode(std::span<const TokenId> ref, const ThetaParams& th) const {
        const auto w = reweight(expanded_, ref, th);
        auto path = shortest_path(w, expanded_->start());
        OracleResult r;
        r.continuation = std::move(path.tokens);
        r.full_hyp = r.continuation;
        r.linear_cost = path.linear_cost;
        r.exact_bleu = sentence_bleu(r.full_hyp, ref);
        r.reward_to_go = latoracle::reward_to_go({}, r.continuation, ref);
        r.matched_state = expanded_->start();
        return r;
    }

    /// Continues `prefix` (student prefix plus exploration action) in two
    /// steps. First, with every state final and the prefix itself as the
    /// reference, find the in-lattice partial path closest to the prefix.
    /// Second, from that path's end state, search the best completion against
    /// the true reference; the first continuation arc is scored with the last
    /// token of the real prefix as its bigram context.
    OracleResult continue_prefix(std::span<const TokenId> prefix, std::span<const TokenId> ref,
                                 const ThetaParams& th) const {
        const auto step1 = reweight(expanded_, prefix, th, /*all_final=*/true);
        const auto matched = shortest_path(step1, expanded_->start());

        const auto step2 = reweight(expanded_, ref, th);
        const TokenId junction = prefix.empty() ? kBos : prefix.back();

        // Fall back to the nearest ancestor on the matched path that still
        // reaches a final state.
        for (std::size_t keep = matched.tokens.size() + 1; keep-- > 0;) {
            const StateId from = matched.states[keep];
            auto cont = try_shortest_path(step2, from, junction);
            if (!cont) continue;
            OracleResult r;
            r.matched_prefix.assign(matched.tokens.begin(), matched.tokens.begin() + keep);
            r.matched_state = from;
            r.continuation = std::move(cont->tokens);
            r.full_hyp.assign(prefix.begin(), prefix.end());
            r.full_hyp.insert(r.full_hyp.end(), r.continuation.begin(), r.continuation.end());
            r.linear_cost = cont->linear_cost;
            r.exact_bleu = sentence_bleu(r.full_hyp, ref);
            r.reward_to_go = latoracle::reward_to_go(prefix, r.continuation, ref);
            return r;
        }
        throw OracleError("no final state reachable from the matched prefix");
    }

private:
    std::shared_ptr<const ExpandedLattice> expanded_;
};

inline OracleResult decode_oracle(const Lattice& l, std::span<const TokenId> ref,
                                  const ThetaParams& th) {
    return Oracle(l).decode(ref, th);
}

inline OracleResult continue_prefix(const Lattice& l, std::span<const TokenId> prefix,
                                    std::span<const TokenId> ref, const ThetaParams& th) {
    return Oracle(l).continue_prefix(prefix, ref, th);
}

}  // namespace latoracle
