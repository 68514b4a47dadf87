#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace latoracle {

using StateId = std::uint32_t;

// Out-edge index in compressed sparse row form. Edge ids refer to positions in
// the edge vector the index was built from; per-state order follows that
// vector.
class Adjacency {
public:
    Adjacency() = default;

    template <class Edge>
    Adjacency(std::size_t num_states, const std::vector<Edge>& edges, bool reverse = false)
        : offsets_(num_states + 1, 0), ids_(edges.size()) {
        for (const auto& e : edges) ++offsets_[(reverse ? e.to : e.from) + 1];
        for (std::size_t s = 0; s < num_states; ++s) offsets_[s + 1] += offsets_[s];
        std::vector<std::uint32_t> fill(offsets_.begin(), offsets_.end() - 1);
        for (std::uint32_t i = 0; i < edges.size(); ++i) {
            const auto s = reverse ? edges[i].to : edges[i].from;
            ids_[fill[s]++] = i;
        }
    }

    std::span<const std::uint32_t> operator[](StateId s) const {
        return {ids_.data() + offsets_[s], ids_.data() + offsets_[s + 1]};
    }

    std::size_t num_states() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }

private:
    std::vector<std::uint32_t> offsets_;
    std::vector<std::uint32_t> ids_;
};

// Kahn's algorithm with a FIFO queue seeded in state-id order, so the result
// is a deterministic function of the edge vector. nullopt on a cycle.
template <class Edge>
std::optional<std::vector<StateId>> topological_order(std::size_t num_states,
                                                      const std::vector<Edge>& edges) {
    std::vector<std::uint32_t> indegree(num_states, 0);
    for (const auto& e : edges) ++indegree[e.to];
    Adjacency out(num_states, edges);

    std::vector<StateId> ready;
    for (StateId s = 0; s < num_states; ++s)
        if (indegree[s] == 0) ready.push_back(s);

    std::vector<StateId> order;
    order.reserve(num_states);
    std::size_t head = 0;
    while (head < ready.size()) {
        const StateId s = ready[head++];
        order.push_back(s);
        for (auto id : out[s]) {
            const StateId t = edges[id].to;
            if (--indegree[t] == 0) ready.push_back(t);
        }
    }
    if (order.size() != num_states) return std::nullopt;
    return order;
}

}  // namespace latoracle
