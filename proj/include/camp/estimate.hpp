#pragma once

#include <optional>

#include "camp/graph.hpp"
#include "camp/tensor.hpp"

namespace camp {

/// Output of a causal discovery method: a binary adjacency, plus the
/// pre-threshold weight matrix when the method has one.
struct EstimatedGraph {
    DagGraph adjacency;
    std::optional<Tensor> weighted;
};

/// Drops the weakest edge lying on a cycle until the graph is acyclic.
/// `weights(i, j)` supplies the edge strength; deterministic tie-break by
/// (i, j) scan order.
inline void break_cycles_by_weight(DagGraph& g, const Tensor& weights) {
    const size_t v = g.node_count();
    auto reaches = [&g, v](size_t from, size_t to) {
        std::vector<uint8_t> seen(v, 0);
        std::vector<size_t> stack{from};
        seen[from] = 1;
        while (!stack.empty()) {
            const size_t u = stack.back();
            stack.pop_back();
            if (u == to) return true;
            for (size_t w = 0; w < v; ++w) {
                if (g.edge(u, w) && !seen[w]) {
                    seen[w] = 1;
                    stack.push_back(w);
                }
            }
        }
        return false;
    };
    while (!g.is_acyclic()) {
        double weakest = std::numeric_limits<double>::infinity();
        size_t bi = 0, bj = 0;
        bool found = false;
        for (size_t i = 0; i < v; ++i) {
            for (size_t j = 0; j < v; ++j) {
                if (!g.edge(i, j)) continue;
                if (!reaches(j, i)) continue;  // edge not on any cycle
                const double w = std::abs(weights(i, j));
                if (!found || w < weakest) {
                    weakest = w;
                    bi = i;
                    bj = j;
                    found = true;
                }
            }
        }
        if (!found) break;
        g.set_edge(bi, bj, false);
    }
}

}  // namespace camp
