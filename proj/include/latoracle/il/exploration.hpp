#pragma once

#include <random>
#include <span>

#include "latoracle/error.hpp"
#include "latoracle/il/policy.hpp"
#include "latoracle/rng.hpp"

namespace latoracle::il {

struct ExplorationStrategy {
    enum class Kind { Uniform, StudentArgmax, Mixture };

    Kind kind = Kind::Mixture;
    // Probability of a uniform action under Mixture.
    double beta = 0.1;

    static ExplorationStrategy uniform() { return {Kind::Uniform, 1.0}; }
    static ExplorationStrategy student_argmax() { return {Kind::StudentArgmax, 0.0}; }
    static ExplorationStrategy mixture(double beta) {
        if (!(beta >= 0.0 && beta <= 1.0)) throw InputError("beta must be in [0, 1]");
        return {Kind::Mixture, beta};
    }
};

/// Exploration action over the entries of q_row, returned as a token id.
inline TokenId select_action(const ExplorationStrategy& s, std::span<const double> q_row, Rng& rng) {
    if (q_row.empty()) throw InputError("empty action set");
    auto uniform = [&] {
        return action_token(std::uniform_int_distribution<std::size_t>(0, q_row.size() - 1)(rng));
    };
    switch (s.kind) {
        case ExplorationStrategy::Kind::Uniform:
            return uniform();
        case ExplorationStrategy::Kind::StudentArgmax:
            return action_token(argmax(q_row));
        case ExplorationStrategy::Kind::Mixture:
            if (std::bernoulli_distribution(s.beta)(rng)) return uniform();
            return action_token(argmax(q_row));
    }
    return action_token(argmax(q_row));
}

// Uniform position in [0, T).
inline std::size_t sample_position(std::size_t T, Rng& rng) {
    if (T == 0) throw InputError("cannot sample a position in an empty sequence");
    return std::uniform_int_distribution<std::size_t>(0, T - 1)(rng);
}

}  // namespace latoracle::il
