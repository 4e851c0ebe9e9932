#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "camp/dataset.hpp"
#include "camp/errors.hpp"
#include "camp/estimate.hpp"
#include "camp/graph.hpp"
#include "camp/tensor.hpp"

namespace camp {

struct DirectLingamConfig {
    double prune_threshold = 0.3;  // |coef| >= tau keeps the edge
};

namespace detail {

/// Differential entropy of a standardized variable via the Hyvarinen
/// maximum-entropy approximation (log-cosh contrast, published constants).
inline double logcosh_entropy(std::span<const double> u) {
    constexpr double k1 = 79.047;
    constexpr double k2 = 7.4129;
    constexpr double gamma = 0.37457;
    double mean_logcosh = 0.0, mean_uexp = 0.0;
    for (double x : u) {
        mean_logcosh += std::log(std::cosh(x));
        mean_uexp += x * std::exp(-0.5 * x * x);
    }
    const double n = static_cast<double>(u.size());
    mean_logcosh /= n;
    mean_uexp /= n;
    return (1.0 + std::log(2.0 * M_PI)) / 2.0 - k1 * (mean_logcosh - gamma) * (mean_logcosh - gamma) -
           k2 * mean_uexp * mean_uexp;
}

inline void standardize_inplace(std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    double mu = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= n;
    const double sd = std::sqrt(std::max(var, 1e-24));
    for (double& v : x) v = (v - mu) / sd;
}

inline double column_cov(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - ma) * (b[i] - mb);
    return acc / n;
}

}  // namespace detail

/// DirectLiNGAM: iteratively identify the most exogenous variable via the
/// pairwise non-Gaussianity contrast, regress it out, and repeat to obtain
/// a causal order; coefficients are then estimated by least squares in that
/// order and pruned at |coef| >= tau. Deterministic given (data, config).
inline EstimatedGraph direct_lingam(const Dataset& data, const DirectLingamConfig& cfg = {}) {
    const size_t n = data.rows(), v = data.cols();
    if (n <= v) throw InsufficientSampleError("direct_lingam needs n > V");

    // Working copy, one column vector per variable, standardized up front.
    std::vector<std::vector<double>> cols(v, std::vector<double>(n));
    for (size_t j = 0; j < v; ++j) {
        for (size_t i = 0; i < n; ++i) cols[j][i] = data(i, j);
        detail::standardize_inplace(cols[j]);
    }

    std::vector<size_t> remaining(v);
    std::iota(remaining.begin(), remaining.end(), 0);
    std::vector<size_t> order;

    std::vector<double> r_ab(n), r_ba(n);
    while (!remaining.empty()) {
        size_t root = remaining[0];
        if (remaining.size() > 1) {
            const size_t u = remaining.size();
            std::vector<std::vector<double>> sx(u);
            std::vector<double> hx(u);
            for (size_t a = 0; a < u; ++a) {
                sx[a] = cols[remaining[a]];
                detail::standardize_inplace(sx[a]);
                hx[a] = detail::logcosh_entropy(sx[a]);
            }
            // The contrast is antisymmetric, so each unordered pair is
            // computed once and credited to both sides.
            std::vector<double> score(u, 0.0);
            for (size_t a = 0; a < u; ++a) {
                for (size_t b = a + 1; b < u; ++b) {
                    const double cab = detail::column_cov(sx[a], sx[b]);
                    for (size_t t = 0; t < n; ++t) {
                        r_ab[t] = sx[a][t] - cab * sx[b][t];
                        r_ba[t] = sx[b][t] - cab * sx[a][t];
                    }
                    detail::standardize_inplace(r_ab);
                    detail::standardize_inplace(r_ba);
                    const double diff = (hx[b] + detail::logcosh_entropy(r_ab)) -
                                        (hx[a] + detail::logcosh_entropy(r_ba));
                    const double neg_ab = std::min(0.0, diff);
                    const double neg_ba = std::min(0.0, -diff);
                    score[a] += neg_ab * neg_ab;
                    score[b] += neg_ba * neg_ba;
                }
            }
            size_t best_pos = 0;
            for (size_t a = 1; a < u; ++a)
                if (score[a] < score[best_pos]) best_pos = a;
            root = remaining[best_pos];
        }
        order.push_back(root);
        remaining.erase(std::find(remaining.begin(), remaining.end(), root));
        // Regress the chosen root out of the remaining columns.
        const double var_root = detail::column_cov(cols[root], cols[root]);
        for (size_t i : remaining) {
            const double beta = detail::column_cov(cols[i], cols[root]) / std::max(var_root, 1e-24);
            for (size_t t = 0; t < n; ++t) cols[i][t] -= beta * cols[root][t];
        }
    }

    // Coefficients by least squares against the standardized originals,
    // following the recovered order; |coef| >= tau binarizes.
    std::vector<std::vector<double>> std_cols(v, std::vector<double>(n));
    for (size_t j = 0; j < v; ++j) {
        for (size_t i = 0; i < n; ++i) std_cols[j][i] = data(i, j);
        detail::standardize_inplace(std_cols[j]);
    }

    Tensor weights({v, v});
    DagGraph g(v);
    for (size_t m = 1; m < v; ++m) {
        const size_t target = order[m];
        Tensor design({n, m});
        for (size_t k = 0; k < m; ++k)
            for (size_t i = 0; i < n; ++i) design(i, k) = std_cols[order[k]][i];
        Tensor y({n}, std_cols[target]);
        Tensor beta = linear_least_squares(design, y);
        for (size_t k = 0; k < m; ++k) {
            weights(order[k], target) = beta[k];
            if (std::abs(beta[k]) >= cfg.prune_threshold) g.set_edge(order[k], target, true);
        }
    }

    EstimatedGraph out;
    out.adjacency = g;
    out.weighted = std::move(weights);
    return out;
}

}  // namespace camp
