#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "latoracle/error.hpp"
#include "latoracle/symbols.hpp"

namespace latoracle::il {

using SourceSeq = std::vector<std::uint32_t>;

// Source key used once every source token has been translated.
inline constexpr std::uint32_t kEndOfSource = std::numeric_limits<std::uint32_t>::max();

// Actions are target token ids 1..num_actions; index i holds token i + 1.
inline TokenId action_token(std::size_t index) { return static_cast<TokenId>(index + 1); }
inline std::size_t action_index(TokenId token) { return static_cast<std::size_t>(token) - 1; }

/// Gradient of some loss with respect to Q entries of the row that
/// q_values(source, prefix) reads. Entries absent from the list are zero.
struct QGradient {
    SourceSeq source;
    TokenSeq prefix;
    std::vector<std::pair<std::size_t, double>> entries;
};

/// Student policy: unnormalized action values Q over the target vocabulary.
/// The last action is the end-of-sentence token.
class Policy {
public:
    virtual ~Policy() = default;

    virtual std::size_t num_actions() const = 0;
    virtual std::vector<double> q_values(std::span<const std::uint32_t> source,
                                         std::span<const TokenId> prefix) const = 0;
    /// One gradient step. Contributions to the same Q entry are averaged.
    virtual void update(std::span<const QGradient> grads) = 0;

    TokenId end_token() const { return action_token(num_actions() - 1); }
};

inline std::vector<double> softmax(std::span<const double> q) {
    const double m = *std::max_element(q.begin(), q.end());
    std::vector<double> p(q.size());
    double z = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) z += p[i] = std::exp(q[i] - m);
    for (auto& v : p) v /= z;
    return p;
}

// -log softmax(q)[index]
inline double token_nll(std::span<const double> q, std::size_t index) {
    const double m = *std::max_element(q.begin(), q.end());
    double z = 0.0;
    for (double v : q) z += std::exp(v - m);
    return m + std::log(z) - q[index];
}

// First maximum, so ties go to the lowest token id.
inline std::size_t argmax(std::span<const double> q) {
    return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

/// Q table keyed on (source token at the next position, last emitted target
/// token). Unseen keys read as all-zero rows.
class TabularPolicy final : public Policy {
public:
    using Key = std::pair<std::uint32_t, TokenId>;

    TabularPolicy(std::size_t num_actions, double learning_rate)
        : num_actions_(num_actions), lr_(learning_rate) {
        if (num_actions < 2) throw InputError("policy needs at least one content token and an end token");
        if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
    }

    std::size_t num_actions() const override { return num_actions_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) {
        if (!(lr > 0.0)) throw InputError("learning rate must be positive");
        lr_ = lr;
    }

    static Key key(std::span<const std::uint32_t> source, std::span<const TokenId> prefix) {
        const std::uint32_t src = prefix.size() < source.size() ? source[prefix.size()] : kEndOfSource;
        return {src, prefix.empty() ? kBos : prefix.back()};
    }

    std::vector<double> q_values(std::span<const std::uint32_t> source,
                                 std::span<const TokenId> prefix) const override {
        auto it = table_.find(key(source, prefix));
        return it == table_.end() ? std::vector<double>(num_actions_, 0.0) : it->second;
    }

    void update(std::span<const QGradient> grads) override {
        std::map<Key, std::pair<std::vector<double>, std::vector<int>>> acc;
        for (const auto& g : grads) {
            auto& [sum, count] = acc[key(g.source, g.prefix)];
            if (sum.empty()) {
                sum.assign(num_actions_, 0.0);
                count.assign(num_actions_, 0);
            }
            for (const auto& [i, d] : g.entries) {
                if (i >= num_actions_) throw InputError("gradient entry out of range");
                sum[i] += d;
                ++count[i];
            }
        }
        for (const auto& [k, sc] : acc) {
            auto [it, inserted] = table_.try_emplace(k, num_actions_, 0.0);
            for (std::size_t i = 0; i < num_actions_; ++i)
                if (sc.second[i] > 0) it->second[i] -= lr_ * sc.first[i] / sc.second[i];
        }
    }

    const std::map<Key, std::vector<double>>& table() const { return table_; }

    friend bool operator==(const TabularPolicy& a, const TabularPolicy& b) {
        return a.num_actions_ == b.num_actions_ && a.table_ == b.table_;
    }

private:
    std::size_t num_actions_;
    double lr_;
    std::map<Key, std::vector<double>> table_;
};

/// Greedy decoding: argmax per step until the end token or 2 * |source|
/// tokens. A non-zero noise[t] overrides the student's choice at position t
/// (the student's own error channel). The end token is not returned.
inline TokenSeq roll_in(const Policy& policy, std::span<const std::uint32_t> source,
                        std::span<const TokenId> noise = {}) {
    const TokenId end = policy.end_token();
    TokenSeq y;
    while (y.size() < 2 * source.size()) {
        const std::size_t t = y.size();
        if (t < noise.size() && t < source.size() && noise[t] != kBos) {
            y.push_back(noise[t]);
            continue;
        }
        const auto q = policy.q_values(source, y);
        const TokenId tok = action_token(argmax(q));
        if (tok == end) break;
        y.push_back(tok);
    }
    return y;
}

}  // namespace latoracle::il
