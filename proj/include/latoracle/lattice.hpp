#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "latoracle/error.hpp"
#include "latoracle/graph.hpp"
#include "latoracle/symbols.hpp"

namespace latoracle {

inline constexpr double kInfCost = std::numeric_limits<double>::infinity();

struct Transition {
    StateId from = 0;
    StateId to = 0;
    TokenSeq labels;
    double model_cost = 0.0;

    friend bool operator==(const Transition&, const Transition&) = default;
};

/// Acyclic, trimmed word/phrase lattice with start state 0.
///
/// Instances are only produced by `Lattice::build`, which rejects cycles,
/// non-finite costs, empty or BOS labels and out-of-range states, and then
/// trims states that are not on a start-to-final path (renumbering the
/// survivors in their original relative order). A built lattice is
/// immutable.
class Lattice {
public:
    static Lattice build(std::size_t num_states, std::vector<Transition> transitions,
                         std::vector<StateId> finals);

    std::size_t num_states() const { return num_states_; }
    StateId start() const { return 0; }
    const std::vector<Transition>& transitions() const { return transitions_; }
    const std::vector<StateId>& finals() const { return finals_; }
    bool is_final(StateId s) const { return is_final_[s]; }
    const Adjacency& out() const { return out_; }
    const std::vector<StateId>& topo_order() const { return order_; }

    bool single_token() const {
        return std::all_of(transitions_.begin(), transitions_.end(),
                           [](const Transition& t) { return t.labels.size() == 1; });
    }

    friend bool operator==(const Lattice& a, const Lattice& b) {
        return a.num_states_ == b.num_states_ && a.transitions_ == b.transitions_ &&
               a.finals_ == b.finals_;
    }

private:
    Lattice() = default;

    std::size_t num_states_ = 0;
    std::vector<Transition> transitions_;
    std::vector<StateId> finals_;
    std::vector<bool> is_final_;
    Adjacency out_;
    std::vector<StateId> order_;
};

namespace detail {

template <class Edge>
std::vector<bool> reach(std::size_t n, const std::vector<Edge>& edges,
                        const std::vector<StateId>& seeds, bool backward) {
    Adjacency adj(n, edges, backward);
    std::vector<bool> seen(n, false);
    std::vector<StateId> stack;
    for (auto s : seeds) {
        if (!seen[s]) {
            seen[s] = true;
            stack.push_back(s);
        }
    }
    while (!stack.empty()) {
        const StateId s = stack.back();
        stack.pop_back();
        for (auto id : adj[s]) {
            const StateId t = backward ? edges[id].from : edges[id].to;
            if (!seen[t]) {
                seen[t] = true;
                stack.push_back(t);
            }
        }
    }
    return seen;
}

}  // namespace detail

inline Lattice Lattice::build(std::size_t num_states, std::vector<Transition> transitions,
                              std::vector<StateId> finals) {
    if (num_states == 0) throw LatticeError("lattice has no states");
    for (const auto& t : transitions) {
        if (t.from >= num_states || t.to >= num_states)
            throw LatticeError("transition references state outside [0, " +
                               std::to_string(num_states) + ")");
        if (t.labels.empty()) throw LatticeError("transition with empty label");
        if (std::find(t.labels.begin(), t.labels.end(), kBos) != t.labels.end())
            throw LatticeError("BOS sentinel used as an edge label");
        if (!std::isfinite(t.model_cost)) throw LatticeError("non-finite model cost");
    }
    for (auto f : finals)
        if (f >= num_states) throw LatticeError("final state out of range");
    if (!topological_order(num_states, transitions))
        throw LatticeError("lattice contains a cycle");

    const auto fwd = detail::reach(num_states, transitions, {0}, false);
    const auto bwd = detail::reach(num_states, transitions, finals, true);
    if (!bwd[0]) throw LatticeError("no complete path from start to a final state");

    std::vector<StateId> remap(num_states, 0);
    StateId kept = 0;
    for (std::size_t s = 0; s < num_states; ++s)
        if (fwd[s] && bwd[s]) remap[s] = kept++;

    Lattice l;
    l.num_states_ = kept;
    for (auto& t : transitions) {
        if (fwd[t.from] && bwd[t.from] && fwd[t.to] && bwd[t.to]) {
            t.from = remap[t.from];
            t.to = remap[t.to];
            l.transitions_.push_back(std::move(t));
        }
    }
    for (auto f : finals)
        if (fwd[f] && bwd[f]) l.finals_.push_back(remap[f]);
    std::sort(l.finals_.begin(), l.finals_.end());
    l.finals_.erase(std::unique(l.finals_.begin(), l.finals_.end()), l.finals_.end());

    l.is_final_.assign(kept, false);
    for (auto f : l.finals_) l.is_final_[f] = true;
    l.out_ = Adjacency(kept, l.transitions_);
    l.order_ = *topological_order(kept, l.transitions_);
    return l;
}

/// Replaces every multi-token transition by a chain through fresh states.
/// The whole model cost sits on the first edge of the chain.
inline Lattice split_phrases(const Lattice& l) {
    std::size_t n = l.num_states();
    std::vector<Transition> out;
    out.reserve(l.transitions().size());
    for (const auto& t : l.transitions()) {
        StateId prev = t.from;
        for (std::size_t i = 0; i < t.labels.size(); ++i) {
            const bool last = i + 1 == t.labels.size();
            const StateId next = last ? t.to : static_cast<StateId>(n++);
            out.push_back({prev, next, {t.labels[i]}, i == 0 ? t.model_cost : 0.0});
            prev = next;
        }
    }
    return Lattice::build(n, std::move(out), l.finals());
}

// ---------------------------------------------------------------------------
// Bigram-context expansion

struct Arc {
    StateId from = 0;
    StateId to = 0;
    TokenId label = kBos;
    double model_cost = 0.0;

    friend bool operator==(const Arc&, const Arc&) = default;
};

/// Single-token lattice in which every state has a unique left context: the
/// label shared by all of its incoming arcs (BOS for the start state).
/// `origin` maps each state back to the lattice state it was split from.
class ExpandedLattice {
public:
    static ExpandedLattice build(std::size_t num_states, std::vector<Arc> arcs,
                                 std::vector<StateId> finals, std::vector<TokenId> ctx,
                                 std::vector<StateId> origin = {});

    std::size_t num_states() const { return ctx_.size(); }
    StateId start() const { return 0; }
    const std::vector<Arc>& arcs() const { return arcs_; }
    const std::vector<StateId>& finals() const { return finals_; }
    bool is_final(StateId s) const { return is_final_[s]; }
    TokenId ctx(StateId s) const { return ctx_[s]; }
    StateId origin(StateId s) const { return origin_[s]; }
    const Adjacency& out() const { return out_; }
    const Adjacency& in() const { return in_; }
    const std::vector<StateId>& topo_order() const { return order_; }

private:
    ExpandedLattice() = default;

    std::vector<Arc> arcs_;
    std::vector<StateId> finals_;
    std::vector<bool> is_final_;
    std::vector<TokenId> ctx_;
    std::vector<StateId> origin_;
    Adjacency out_;
    Adjacency in_;
    std::vector<StateId> order_;
};

inline ExpandedLattice ExpandedLattice::build(std::size_t num_states, std::vector<Arc> arcs,
                                              std::vector<StateId> finals,
                                              std::vector<TokenId> ctx,
                                              std::vector<StateId> origin) {
    if (num_states == 0) throw LatticeError("expanded lattice has no states");
    if (ctx.size() != num_states) throw LatticeError("context vector size mismatch");
    if (ctx[0] != kBos) throw LatticeError("start state context must be BOS");
    if (origin.empty()) {
        origin.resize(num_states);
        for (StateId s = 0; s < num_states; ++s) origin[s] = s;
    }
    if (origin.size() != num_states) throw LatticeError("origin vector size mismatch");
    for (const auto& a : arcs) {
        if (a.from >= num_states || a.to >= num_states)
            throw LatticeError("arc references state out of range");
        if (a.label == kBos) throw LatticeError("BOS sentinel used as an arc label");
        if (ctx[a.to] != a.label)
            throw LatticeError("arc label differs from the context of its target state");
        if (!std::isfinite(a.model_cost)) throw LatticeError("non-finite model cost");
    }
    auto order = topological_order(num_states, arcs);
    if (!order) throw LatticeError("expanded lattice contains a cycle");

    ExpandedLattice e;
    e.arcs_ = std::move(arcs);
    e.ctx_ = std::move(ctx);
    e.origin_ = std::move(origin);
    e.is_final_.assign(num_states, false);
    for (auto f : finals) {
        if (f >= num_states) throw LatticeError("final state out of range");
        e.is_final_[f] = true;
    }
    for (StateId s = 0; s < num_states; ++s)
        if (e.is_final_[s]) e.finals_.push_back(s);
    e.out_ = Adjacency(num_states, e.arcs_);
    e.in_ = Adjacency(num_states, e.arcs_, true);
    e.order_ = std::move(*order);
    return e;
}

/// Splits each state of a single-token lattice into one copy per distinct
/// incoming label, duplicating its outgoing arcs. Path set and path costs are
/// unchanged. New state ids increase along arcs.
inline ExpandedLattice expand_bigram_context(const Lattice& l) {
    if (!l.single_token())
        throw LatticeError("bigram expansion requires a single-token lattice");

    // One copy of each state per distinct incoming label, numbered in
    // topological order so that ids increase along arcs.
    std::vector<std::vector<TokenId>> incoming(l.num_states());
    for (const auto& t : l.transitions()) incoming[t.to].push_back(t.labels.front());
    incoming[l.start()].push_back(kBos);

    std::map<std::pair<StateId, TokenId>, StateId> ids;
    std::vector<TokenId> ctx;
    std::vector<StateId> origin;
    std::vector<std::vector<StateId>> variants(l.num_states());
    for (StateId s : l.topo_order()) {
        auto& labels = incoming[s];
        std::sort(labels.begin(), labels.end());
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
        for (TokenId c : labels) {
            const auto id = static_cast<StateId>(ctx.size());
            ids.emplace(std::pair{s, c}, id);
            ctx.push_back(c);
            origin.push_back(s);
            variants[s].push_back(id);
        }
    }

    std::vector<Arc> arcs;
    for (StateId s : l.topo_order()) {
        for (StateId from : variants[s]) {
            for (auto id : l.out()[s]) {
                const auto& t = l.transitions()[id];
                const TokenId label = t.labels.front();
                arcs.push_back({from, ids.at({t.to, label}), label, t.model_cost});
            }
        }
    }

    std::vector<StateId> finals;
    for (auto f : l.finals())
        for (auto v : variants[f]) finals.push_back(v);
    const auto n = ctx.size();
    return ExpandedLattice::build(n, std::move(arcs), std::move(finals), std::move(ctx),
                                  std::move(origin));
}

// ---------------------------------------------------------------------------
// Model-cost search and beam pruning

/// Relative beam threshold in probability space: an edge survives when the
/// best path through it is at least b times as probable as the best path.
struct PruneSpec {
    double b = 0.1;

    explicit PruneSpec(double threshold) : b(threshold) {
        if (!(b > 0.0 && b <= 1.0)) throw InputError("pruning threshold b must be in (0, 1]");
    }
};

struct ModelCosts {
    std::vector<double> forward;   // cheapest start -> state
    std::vector<double> backward;  // cheapest state -> final
};

inline ModelCosts model_costs(const Lattice& l) {
    ModelCosts mc{std::vector<double>(l.num_states(), kInfCost),
                  std::vector<double>(l.num_states(), kInfCost)};
    mc.forward[l.start()] = 0.0;
    for (StateId s : l.topo_order()) {
        if (mc.forward[s] == kInfCost) continue;
        for (auto id : l.out()[s]) {
            const auto& t = l.transitions()[id];
            mc.forward[t.to] = std::min(mc.forward[t.to], mc.forward[s] + t.model_cost);
        }
    }
    const auto& order = l.topo_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const StateId s = *it;
        double best = l.is_final(s) ? 0.0 : kInfCost;
        for (auto id : l.out()[s]) {
            const auto& t = l.transitions()[id];
            best = std::min(best, t.model_cost + mc.backward[t.to]);
        }
        mc.backward[s] = best;
    }
    return mc;
}

struct ModelPath {
    TokenSeq tokens;
    double cost = 0.0;
};

/// Viterbi path under model costs; the first cheapest edge wins ties.
inline ModelPath best_model_path(const Lattice& l) {
    const auto mc = model_costs(l);
    ModelPath p{{}, mc.backward[l.start()]};
    StateId s = l.start();
    for (;;) {
        const double here = mc.backward[s];
        if (l.is_final(s) && here == 0.0) break;
        const Transition* next = nullptr;
        for (auto id : l.out()[s]) {
            const auto& t = l.transitions()[id];
            if (t.model_cost + mc.backward[t.to] == here) {
                next = &t;
                break;
            }
        }
        if (!next) break;
        p.tokens.insert(p.tokens.end(), next->labels.begin(), next->labels.end());
        s = next->to;
    }
    return p;
}

/// Keeps a transition iff forward + cost + backward <= best - ln(b), then
/// trims. b = 1 keeps only edges on a best path (up to ties).
inline Lattice prune(const Lattice& l, PruneSpec spec) {
    const auto mc = model_costs(l);
    const double best = mc.backward[l.start()];
    const double limit = best - std::log(spec.b);
    const double slack = 1e-9 * std::max(1.0, std::abs(limit));

    std::vector<Transition> kept;
    for (const auto& t : l.transitions()) {
        const double through = mc.forward[t.from] + t.model_cost + mc.backward[t.to];
        if (through <= limit + slack) kept.push_back(t);
    }
    try {
        return Lattice::build(l.num_states(), std::move(kept), l.finals());
    } catch (const LatticeError&) {
        throw LatticeError("empty lattice after pruning");
    }
}

}  // namespace latoracle
