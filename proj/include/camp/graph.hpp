#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "camp/errors.hpp"
#include "camp/rng.hpp"

namespace camp {

/// Binary adjacency over V nodes; entry (i, j) = 1 means edge i -> j.
class DagGraph {
public:
    DagGraph() = default;
    explicit DagGraph(size_t v) : v_(v), adj_(v * v, 0) {}

    size_t node_count() const { return v_; }

    bool edge(size_t i, size_t j) const { return adj_[i * v_ + j] != 0; }
    void set_edge(size_t i, size_t j, bool present) {
        if (i == j && present) throw DomainError("self-loop rejected");
        adj_[i * v_ + j] = present ? 1 : 0;
    }

    size_t edge_count() const {
        size_t n = 0;
        for (uint8_t e : adj_) n += e;
        return n;
    }

    std::vector<size_t> parents(size_t j) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < v_; ++i)
            if (edge(i, j)) out.push_back(i);
        return out;
    }

    size_t in_degree(size_t j) const { return parents(j).size(); }
    size_t out_degree(size_t i) const {
        size_t n = 0;
        for (size_t j = 0; j < v_; ++j) n += edge(i, j);
        return n;
    }

    /// Kahn's algorithm; nullopt when a cycle exists.
    std::optional<std::vector<size_t>> topological_sort() const {
        std::vector<size_t> indeg(v_, 0);
        for (size_t i = 0; i < v_; ++i)
            for (size_t j = 0; j < v_; ++j)
                if (edge(i, j)) ++indeg[j];
        std::vector<size_t> queue, order;
        for (size_t j = 0; j < v_; ++j)
            if (indeg[j] == 0) queue.push_back(j);
        while (!queue.empty()) {
            // Smallest-index first keeps the order deterministic.
            auto it = std::min_element(queue.begin(), queue.end());
            const size_t u = *it;
            queue.erase(it);
            order.push_back(u);
            for (size_t j = 0; j < v_; ++j) {
                if (edge(u, j) && --indeg[j] == 0) queue.push_back(j);
            }
        }
        if (order.size() != v_) return std::nullopt;
        return order;
    }

    bool is_acyclic() const { return topological_sort().has_value(); }

    bool operator==(const DagGraph& o) const { return v_ == o.v_ && adj_ == o.adj_; }

private:
    size_t v_ = 0;
    std::vector<uint8_t> adj_;
};

/// Uniform random permutation over forward-ordered pairs: acyclic by
/// construction, marginally Erdos-Renyi with edge probability p.
inline DagGraph sample_erdos_renyi_dag(size_t v, double p, Rng& rng) {
    if (v < 2) throw DomainError("erdos-renyi dag: need at least 2 nodes");
    if (p < 0.0 || p > 1.0) throw DomainError("erdos-renyi dag: p outside [0, 1]");
    std::vector<size_t> perm(v);
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = v; i-- > 1;) {
        const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)));
        std::swap(perm[i], perm[j]);
    }
    DagGraph g(v);
    for (size_t a = 0; a < v; ++a)
        for (size_t b = a + 1; b < v; ++b)
            if (rng.bernoulli(p)) g.set_edge(perm[a], perm[b], true);
    return g;
}

inline DagGraph sample_erdos_renyi_dag(size_t v, double p, uint64_t seed) {
    Rng rng(seed);
    return sample_erdos_renyi_dag(v, p, rng);
}

/// Preferential-attachment growth seeded with a complete DAG on the first
/// m nodes; every new node receives m edges from degree-weighted existing
/// nodes, oriented earlier -> later. Edge count is C(m,2) + m*(V-m).
inline DagGraph sample_scale_free_dag(size_t v, size_t attachment_m, Rng& rng) {
    if (v < 2) throw DomainError("scale-free dag: need at least 2 nodes");
    if (attachment_m < 1 || attachment_m >= v)
        throw DomainError("scale-free dag: attachment must be in [1, V)");
    DagGraph g(v);
    std::vector<double> degree(v, 0.0);
    for (size_t a = 0; a < attachment_m; ++a) {
        for (size_t b = a + 1; b < attachment_m; ++b) {
            g.set_edge(a, b, true);
            degree[a] += 1.0;
            degree[b] += 1.0;
        }
    }
    for (size_t t = attachment_m; t < v; ++t) {
        std::vector<size_t> chosen;
        std::vector<double> weight(degree.begin(), degree.begin() + static_cast<long>(t));
        for (size_t pick = 0; pick < attachment_m; ++pick) {
            double total = 0.0;
            for (double w : weight) total += w + 1.0;  // +1 smoothing covers degree-0 seeds
            double r = rng.uniform(0.0, total);
            size_t sel = 0;
            for (size_t i = 0; i < weight.size(); ++i) {
                r -= weight[i] + 1.0;
                if (r <= 0.0) {
                    sel = i;
                    break;
                }
            }
            chosen.push_back(sel);
            weight[sel] = -1.0;  // exclude from further picks this round
        }
        for (size_t src : chosen) {
            g.set_edge(src, t, true);
            degree[src] += 1.0;
            degree[t] += 1.0;
        }
    }
    return g;
}

inline DagGraph sample_scale_free_dag(size_t v, size_t attachment_m, uint64_t seed) {
    Rng rng(seed);
    return sample_scale_free_dag(v, attachment_m, rng);
}

// -- adjacency CSV (V rows of V comma-separated 0/1 entries) -----------------

inline void write_adjacency_csv(const DagGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open for write: " + path);
    const size_t v = g.node_count();
    for (size_t i = 0; i < v; ++i) {
        for (size_t j = 0; j < v; ++j) {
            if (j) out << ',';
            out << (g.edge(i, j) ? '1' : '0');
        }
        out << '\n';
    }
}

inline DagGraph parse_adjacency_csv(std::istream& in, const std::string& what) {
    std::vector<std::vector<int>> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<int> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            // trim
            while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
            size_t start = cell.find_first_not_of(' ');
            if (start == std::string::npos)
                throw ParseError(what + ": empty cell at line " + std::to_string(lineno));
            const std::string trimmed = cell.substr(start);
            if (trimmed == "0")
                row.push_back(0);
            else if (trimmed == "1")
                row.push_back(1);
            else
                throw ParseError(what + ": non-binary entry '" + trimmed + "' at line " +
                                 std::to_string(lineno));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(what + ": empty adjacency file");
    const size_t v = rows.size();
    DagGraph g(v);
    for (size_t i = 0; i < v; ++i) {
        if (rows[i].size() != v)
            throw ParseError(what + ": row " + std::to_string(i + 1) + " has " +
                             std::to_string(rows[i].size()) + " entries, expected " +
                             std::to_string(v));
        for (size_t j = 0; j < v; ++j) {
            if (rows[i][j]) {
                if (i == j) throw ParseError(what + ": self-loop at node " + std::to_string(i));
                g.set_edge(i, j, true);
            }
        }
    }
    return g;
}

inline DagGraph read_adjacency_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    return parse_adjacency_csv(in, path);
}

}  // namespace camp
