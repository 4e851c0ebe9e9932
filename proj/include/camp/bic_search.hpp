#pragma once

#include <cmath>
#include <vector>

#include "camp/dataset.hpp"
#include "camp/errors.hpp"
#include "camp/estimate.hpp"
#include "camp/tensor.hpp"

namespace camp {

struct GreedyBicConfig {
    size_t max_iterations = 500;
    double min_improvement = 1e-9;
};

namespace detail {

/// Gaussian local BIC from the covariance matrix: log-likelihood of the
/// node's linear regression on its parents minus (|P|+2)/2 * log n.
class BicScorer {
public:
    BicScorer(const Dataset& data) : n_(data.rows()), v_(data.cols()), cov_({v_, v_}) {
        std::vector<double> mean(v_, 0.0);
        for (size_t i = 0; i < n_; ++i)
            for (size_t j = 0; j < v_; ++j) mean[j] += data(i, j);
        for (double& m : mean) m /= static_cast<double>(n_);
        for (size_t i = 0; i < n_; ++i)
            for (size_t a = 0; a < v_; ++a)
                for (size_t b = a; b < v_; ++b)
                    cov_(a, b) += (data(i, a) - mean[a]) * (data(i, b) - mean[b]);
        for (size_t a = 0; a < v_; ++a)
            for (size_t b = a; b < v_; ++b) {
                cov_(a, b) /= static_cast<double>(n_);
                cov_(b, a) = cov_(a, b);
            }
    }

    double local(size_t j, const std::vector<size_t>& parents) const {
        double sigma2 = cov_(j, j);
        if (!parents.empty()) {
            const size_t k = parents.size();
            Tensor gram({k, k});
            for (size_t a = 0; a < k; ++a)
                for (size_t b = 0; b < k; ++b) gram(a, b) = cov_(parents[a], parents[b]);
            for (size_t a = 0; a < k; ++a) gram(a, a) += 1e-8;
            std::vector<double> rhs(k);
            for (size_t a = 0; a < k; ++a) rhs[a] = cov_(parents[a], j);
            Tensor chol = gram;
            if (cholesky(chol) > 0) return -std::numeric_limits<double>::infinity();
            const auto beta = cholesky_solve(chol, rhs);
            double explained = 0.0;
            for (size_t a = 0; a < k; ++a) explained += beta[a] * rhs[a];
            sigma2 -= explained;
        }
        sigma2 = std::max(sigma2, 1e-12);
        const double n = static_cast<double>(n_);
        const double loglik = -0.5 * n * (1.0 + std::log(2.0 * M_PI) + std::log(sigma2));
        const double penalty = 0.5 * std::log(n) * (static_cast<double>(parents.size()) + 2.0);
        return loglik - penalty;
    }

private:
    size_t n_, v_;
    Tensor cov_;
};

}  // namespace detail

/// Greedy hill climbing over single-edge additions, deletions and
/// reversals maximizing the linear-Gaussian BIC; cycle-creating moves are
/// rejected and every accepted move strictly increases the score.
inline EstimatedGraph greedy_bic(const Dataset& data, const GreedyBicConfig& cfg = {}) {
    const size_t n = data.rows(), v = data.cols();
    if (n <= v) throw InsufficientSampleError("greedy_bic needs n > V");

    detail::BicScorer scorer(data);
    DagGraph g(v);
    std::vector<double> local(v);
    for (size_t j = 0; j < v; ++j) local[j] = scorer.local(j, {});

    auto with_parent = [](std::vector<size_t> parents, size_t extra) {
        parents.push_back(extra);
        std::sort(parents.begin(), parents.end());
        return parents;
    };
    auto without_parent = [](std::vector<size_t> parents, size_t gone) {
        parents.erase(std::remove(parents.begin(), parents.end(), gone), parents.end());
        return parents;
    };
    auto reaches = [&g, v](size_t from, size_t to) {
        std::vector<uint8_t> seen(v, 0);
        std::vector<size_t> stack{from};
        seen[from] = 1;
        while (!stack.empty()) {
            const size_t u = stack.back();
            stack.pop_back();
            if (u == to) return true;
            for (size_t w = 0; w < v; ++w)
                if (g.edge(u, w) && !seen[w]) {
                    seen[w] = 1;
                    stack.push_back(w);
                }
        }
        return false;
    };

    for (size_t iter = 0; iter < cfg.max_iterations; ++iter) {
        enum class MoveKind { None, Add, Delete, Reverse };
        MoveKind best_kind = MoveKind::None;
        size_t best_i = 0, best_j = 0;
        double best_delta = cfg.min_improvement;

        for (size_t i = 0; i < v; ++i) {
            for (size_t j = 0; j < v; ++j) {
                if (i == j) continue;
                const auto pj = g.parents(j);
                if (!g.edge(i, j)) {
                    if (g.edge(j, i)) continue;
                    if (reaches(j, i)) continue;  // would create a cycle
                    const double delta = scorer.local(j, with_parent(pj, i)) - local[j];
                    if (delta > best_delta) {
                        best_delta = delta;
                        best_kind = MoveKind::Add;
                        best_i = i;
                        best_j = j;
                    }
                } else {
                    const double del_delta = scorer.local(j, without_parent(pj, i)) - local[j];
                    if (del_delta > best_delta) {
                        best_delta = del_delta;
                        best_kind = MoveKind::Delete;
                        best_i = i;
                        best_j = j;
                    }
                    // Reversal: remove i->j, add j->i, if acyclic afterwards.
                    g.set_edge(i, j, false);
                    const bool ok = !reaches(i, j);
                    g.set_edge(i, j, true);
                    if (ok) {
                        const double delta = del_delta +
                                             scorer.local(i, with_parent(g.parents(i), j)) -
                                             local[i];
                        if (delta > best_delta) {
                            best_delta = delta;
                            best_kind = MoveKind::Reverse;
                            best_i = i;
                            best_j = j;
                        }
                    }
                }
            }
        }

        if (best_kind == MoveKind::None) break;
        switch (best_kind) {
            case MoveKind::Add:
                g.set_edge(best_i, best_j, true);
                break;
            case MoveKind::Delete:
                g.set_edge(best_i, best_j, false);
                break;
            case MoveKind::Reverse:
                g.set_edge(best_i, best_j, false);
                g.set_edge(best_j, best_i, true);
                break;
            default:
                break;
        }
        for (size_t j : {best_i, best_j}) local[j] = scorer.local(j, g.parents(j));
    }

    EstimatedGraph out;
    out.adjacency = g;
    return out;
}

}  // namespace camp
