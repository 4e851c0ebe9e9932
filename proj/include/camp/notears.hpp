#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "camp/autodiff.hpp"
#include "camp/dataset.hpp"
#include "camp/errors.hpp"
#include "camp/estimate.hpp"
#include "camp/rng.hpp"
#include "camp/tensor.hpp"

namespace camp {

struct NotearsLinearConfig {
    double lambda1 = 0.1;    // L1 weight, handled by the proximal step
    double threshold = 0.3;  // |W| >= omega binarizes
    double h_tol = 1e-8;
    size_t max_outer_rounds = 10;
    size_t max_inner_steps = 1000;
    double grad_tol = 1e-6;  // prox-gradient mapping norm
    double rho_max = 1e16;
};

struct NotearsMlpConfig {
    size_t hidden = 10;
    double lambda1 = 0.01;  // L1 on first-layer weights, handled proximally
    double lambda2 = 0.01;  // L2 on first/second layer weights
    double threshold = 0.3;
    double h_tol = 1e-8;
    size_t max_outer_rounds = 10;
    size_t max_inner_steps = 450;
    double grad_tol = 1e-6;
    double rho_max = 1e16;
};

namespace detail {

/// Soft threshold toward exact zeros; the proximal map of the L1 term.
/// Exact zeros are what let h reach its tolerance: a weight matrix
/// supported on a DAG gives h = 0 identically.
inline void soft_threshold_inplace(Tensor& w, double amount) {
    for (size_t i = 0; i < w.size(); ++i) {
        if (w[i] > amount) w[i] -= amount;
        else if (w[i] < -amount) w[i] += amount;
        else w[i] = 0.0;
    }
}

/// Monotone proximal gradient with backtracking on the smooth part.
/// `eval(params, grads)` returns the smooth objective and fills gradients
/// when `grads` is non-null; `prox(params, 1/L)` applies the nonsmooth
/// step (L1 shrinkage, pinned entries). Descent is guaranteed by the
/// backtracking majorization test, which is what keeps the iterate on the
/// augmented-Lagrangian central path instead of overshooting when the
/// penalty weight gets large.
inline double prox_gradient_solve(
    std::vector<Tensor>& params,
    const std::function<double(const std::vector<Tensor>&, std::vector<Tensor>*)>& eval,
    const std::function<void(std::vector<Tensor>&, double)>& prox, size_t max_iter,
    double grad_tol) {
    double lip = 1.0;
    std::vector<Tensor> grads;
    double fcur = eval(params, &grads);
    std::vector<Tensor> cand = params;
    for (size_t it = 0; it < max_iter; ++it) {
        double quad = 0.0;
        bool accepted = false;
        while (lip < 1e18) {
            cand = params;
            for (size_t p = 0; p < params.size(); ++p)
                for (size_t i = 0; i < params[p].size(); ++i)
                    cand[p][i] = params[p][i] - grads[p][i] / lip;
            prox(cand, 1.0 / lip);
            const double fq = eval(cand, nullptr);
            double lin = 0.0;
            quad = 0.0;
            for (size_t p = 0; p < params.size(); ++p)
                for (size_t i = 0; i < params[p].size(); ++i) {
                    const double d = cand[p][i] - params[p][i];
                    lin += grads[p][i] * d;
                    quad += d * d;
                }
            if (fq <= fcur + lin + 0.5 * lip * quad + 1e-14) {
                accepted = true;
                break;
            }
            lip *= 2.0;
        }
        if (!accepted) break;
        params = cand;
        fcur = eval(params, &grads);
        if (std::sqrt(quad) * lip < grad_tol || std::sqrt(quad) < 1e-9) break;
        lip = std::max(lip * 0.7, 1e-8);
    }
    return fcur;
}

/// Augmented-Lagrangian outer loop shared by both NOTEARS variants.
/// `inner(rho, alpha)` minimizes the penalized objective from the current
/// iterate and returns h at its minimizer; `snapshot`/`restore` let a
/// poor-progress round retry from the previous iterate at 10x rho.
/// Magnitude below which weights are rounded to exact zero in bulk when
/// projecting a near-feasible iterate onto the constraint set.
constexpr double kFeasibilityRoundingCut = 0.1;

/// Feasibility projection for a near-feasible AL iterate: bulk-zero tiny
/// entries, then zero the weakest cycle-participating entries one at a
/// time. Only entries strictly below `cap` (the binarization threshold)
/// may be zeroed, so a successful projection cannot change the thresholded
/// output. Returns true and commits when h(W) <= h_tol.
inline bool round_weights_to_feasible(Tensor& w, double h_tol, double cap,
                                      const std::function<double(const Tensor&)>& h_of) {
    Tensor r = w;
    for (size_t i = 0; i < r.size(); ++i)
        if (std::abs(r[i]) < kFeasibilityRoundingCut) r[i] = 0.0;
    const size_t v = r.rows();
    auto reaches = [&r, v](size_t from, size_t to) {
        std::vector<uint8_t> seen(v, 0);
        std::vector<size_t> stack{from};
        seen[from] = 1;
        while (!stack.empty()) {
            const size_t u = stack.back();
            stack.pop_back();
            if (u == to) return true;
            for (size_t t = 0; t < v; ++t)
                if (r(u, t) != 0.0 && !seen[t]) {
                    seen[t] = 1;
                    stack.push_back(t);
                }
        }
        return false;
    };
    for (size_t guard = 0; guard <= r.size(); ++guard) {
        if (h_of(r) <= h_tol) {
            w = std::move(r);
            return true;
        }
        double weakest = cap;
        size_t bi = 0, bj = 0;
        bool found = false;
        for (size_t i = 0; i < v; ++i)
            for (size_t j = 0; j < v; ++j) {
                const double mag = std::abs(r(i, j));
                if (mag == 0.0 || mag >= weakest) continue;
                if (!reaches(j, i)) continue;  // not on any cycle
                weakest = mag;
                bi = i;
                bj = j;
                found = true;
            }
        if (!found) return false;
        r(bi, bj) = 0.0;
    }
    return false;
}

template <typename InnerFn, typename SnapshotFn, typename RestoreFn, typename RoundFn>
void augmented_lagrangian(InnerFn&& inner, SnapshotFn&& snapshot, RestoreFn&& restore,
                          RoundFn&& try_round, double h_tol, size_t max_rounds, double rho_max,
                          const char* what) {
    double rho = 1.0, alpha = 0.0;
    double h_prev = std::numeric_limits<double>::infinity();
    double h = h_prev;
    for (size_t round = 0; round < max_rounds; ++round) {
        // The stationary point at the previous rho barely moves once alpha
        // is updated, so every round after the first escalates up front.
        if (round > 0 && rho < rho_max) rho *= 10.0;
        while (true) {
            auto saved = snapshot();
            h = inner(rho, alpha);
            if (h > 0.1 * h_prev && rho < rho_max) {
                restore(saved);
                rho *= 10.0;
                continue;
            }
            break;
        }
        if (h <= h_tol) return;
        // At tiny h every remaining cycle runs through near-zero weights;
        // rounding those to exact zero is a feasibility projection that the
        // later 0.3 threshold cannot distinguish from the unrounded iterate.
        if (try_round()) return;
        h_prev = h;
        alpha += rho * h;
    }
    throw ConvergenceError(std::string(what) + " did not reach h_tol", h);
}

/// tr(e^{S}) - d and optionally e^{S} itself for gradient assembly.
inline double trace_expm_minus_d(const Tensor& s, Tensor* expm_out = nullptr) {
    Tensor e = matrix_exp(s);
    double tr = 0.0;
    for (size_t i = 0; i < s.rows(); ++i) tr += e(i, i);
    if (expm_out) *expm_out = std::move(e);
    return tr - static_cast<double>(s.rows());
}

}  // namespace detail

/// Acyclicity value h(W) = tr(e^{W o W}) - d used by the NOTEARS family;
/// zero exactly when W is supported on a DAG.
inline double notears_h(const Tensor& w) {
    Tensor s({w.rows(), w.cols()});
    for (size_t i = 0; i < w.size(); ++i) s[i] = w[i] * w[i];
    return detail::trace_expm_minus_d(s);
}

/// NOTEARS with a linear model: minimize 1/(2n) ||X - XW||^2 + lambda1 |W|_1
/// subject to h(W) = 0 via the augmented Lagrangian. The least-squares part
/// depends on X only through its covariance, which is precomputed once; the
/// diagonal of W is pinned to zero as in the reference formulation.
/// Deterministic: W starts at zero.
inline EstimatedGraph notears_linear(const Dataset& data, const NotearsLinearConfig& cfg = {}) {
    const size_t n = data.rows(), v = data.cols();
    if (n <= v) throw InsufficientSampleError("notears_linear needs n > V");

    // cov = X^T X / n (uncentered, matching 1/(2n)||X - XW||^2 exactly)
    Tensor cov({v, v});
    detail::gemm(true, false, v, v, n, 1.0 / static_cast<double>(n), data.data(), v, data.data(),
                 v, 0.0, cov.data(), v);

    std::vector<Tensor> params{Tensor::zeros({v, v})};

    auto inner = [&](double rho, double alpha) -> double {
        auto eval = [&](const std::vector<Tensor>& ps, std::vector<Tensor>* grads) -> double {
            const Tensor& w = ps[0];
            Tensor iw = Tensor::identity(v) - w;
            Tensor ciw = matmul(cov, iw);
            double fit = 0.0;
            for (size_t i = 0; i < iw.size(); ++i) fit += iw[i] * ciw[i];
            fit *= 0.5;

            Tensor s({v, v});
            for (size_t i = 0; i < w.size(); ++i) s[i] = w[i] * w[i];
            Tensor expm;
            const double h = detail::trace_expm_minus_d(s, &expm);
            const double value = fit + alpha * h + 0.5 * rho * h * h;
            if (grads) {
                grads->assign(1, Tensor({v, v}));
                Tensor& g = (*grads)[0];
                // d fit / dW = cov (W - I); d h / dW = 2 W o e^{S}^T
                const double hc = alpha + rho * h;
                for (size_t i = 0; i < v; ++i)
                    for (size_t j = 0; j < v; ++j)
                        g(i, j) = -ciw(i, j) + hc * 2.0 * w(i, j) * expm(j, i);
            }
            return value;
        };
        auto prox = [&](std::vector<Tensor>& ps, double step) {
            detail::soft_threshold_inplace(ps[0], cfg.lambda1 * step);
            for (size_t i = 0; i < v; ++i) ps[0](i, i) = 0.0;
        };
        detail::prox_gradient_solve(params, eval, prox, cfg.max_inner_steps, cfg.grad_tol);
        return notears_h(params[0]);
    };

    auto try_round = [&]() -> bool {
        return detail::round_weights_to_feasible(
            params[0], cfg.h_tol, cfg.threshold, [](const Tensor& t) { return notears_h(t); });
    };

    detail::augmented_lagrangian(
        inner, [&]() { return params; }, [&](const std::vector<Tensor>& s) { params = s; },
        try_round, cfg.h_tol, cfg.max_outer_rounds, cfg.rho_max, "notears_linear");

    const Tensor& w = params[0];
    DagGraph g(v);
    for (size_t i = 0; i < v; ++i)
        for (size_t j = 0; j < v; ++j)
            if (i != j && std::abs(w(i, j)) >= cfg.threshold) g.set_edge(i, j, true);
    break_cycles_by_weight(g, w);

    EstimatedGraph out;
    out.adjacency = g;
    out.weighted = w;
    return out;
}

namespace detail {

/// Smooth part of the NOTEARS-MLP objective with analytic gradients. All
/// per-node first layers live in one (v, v*m) block so the heavy passes
/// are two GEMMs; the autodiff tape route exists in tests as the oracle
/// for these formulas.
class MlpObjective {
public:
    MlpObjective(const Dataset& data, size_t hidden, double lambda2)
        : data_(data), n_(data.rows()), v_(data.cols()), m_(hidden), lambda2_(lambda2) {}

    // params: [w1cat (v, v*m), b1cat (v*m), w2cat (v*m), b2cat (v)]
    std::vector<Tensor> init_params(uint64_t seed) const {
        Rng rng(derive_seed(seed, "notears_mlp_init"));
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(v_));
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(m_));
        Tensor w1({v_, v_ * m_}), w2({v_ * m_});
        for (size_t j = 0; j < v_; ++j) {
            for (size_t k = 0; k < v_; ++k)
                for (size_t h = 0; h < m_; ++h)
                    w1(k, j * m_ + h) = (k == j) ? 0.0 : rng.uniform(-bound1, bound1);
            for (size_t h = 0; h < m_; ++h) w2[j * m_ + h] = rng.uniform(-bound2, bound2);
        }
        return {std::move(w1), Tensor::zeros({v_ * m_}), std::move(w2), Tensor::zeros({v_})};
    }

    Tensor dependency_squared(const std::vector<Tensor>& ps) const {
        const Tensor& w1 = ps[0];
        Tensor s({v_, v_});
        for (size_t j = 0; j < v_; ++j)
            for (size_t k = 0; k < v_; ++k) {
                double acc = 0.0;
                for (size_t h = 0; h < m_; ++h) acc += w1(k, j * m_ + h) * w1(k, j * m_ + h);
                s(k, j) = acc;
            }
        return s;
    }

    double eval(const std::vector<Tensor>& ps, std::vector<Tensor>* grads, double rho,
                double alpha) const {
        const Tensor& w1 = ps[0];
        const Tensor& b1 = ps[1];
        const Tensor& w2 = ps[2];
        const Tensor& b2 = ps[3];
        const size_t wide = v_ * m_;

        // Z = X W1 + b1; P = sigmoid(Z); pred(i,j) = sum_h P(i,jm+h) w2[jm+h] + b2[j]
        Tensor p({n_, wide});
        gemm(false, false, n_, wide, v_, 1.0, data_.data(), v_, w1.data(), wide, 0.0, p.data(),
             wide);
        for (size_t i = 0; i < n_; ++i)
            for (size_t c = 0; c < wide; ++c) p(i, c) = detail::fast_sigmoid(p(i, c) + b1[c]);
        Tensor resid({n_, v_});
        double fit = 0.0;
        for (size_t i = 0; i < n_; ++i) {
            for (size_t j = 0; j < v_; ++j) {
                double pred = b2[j];
                const double* prow = p.data() + i * wide + j * m_;
                const double* wrow = w2.data() + j * m_;
                for (size_t h = 0; h < m_; ++h) pred += prow[h] * wrow[h];
                const double r = pred - data_(i, j);
                resid(i, j) = r;
                fit += r * r;
            }
        }
        fit *= 0.5 / static_cast<double>(n_);
        double l2 = 0.0;
        for (double x : w1.values()) l2 += x * x;
        for (double x : w2.values()) l2 += x * x;

        Tensor expm;
        const double h = trace_expm_minus_d(dependency_squared(ps), &expm);
        const double value = fit + 0.5 * lambda2_ * l2 + alpha * h + 0.5 * rho * h * h;
        if (!grads) return value;

        grads->assign(4, Tensor());
        Tensor& gw1 = (*grads)[0];
        Tensor& gb1 = (*grads)[1];
        Tensor& gw2 = (*grads)[2];
        Tensor& gb2 = (*grads)[3];
        gw1 = Tensor({v_, wide});
        gb1 = Tensor::zeros({wide});
        gw2 = Tensor::zeros({wide});
        gb2 = Tensor::zeros({v_});

        // dpred = resid / n; dZ = (dpred w2) o P o (1-P), reusing P's buffer
        const double inv_n = 1.0 / static_cast<double>(n_);
        for (size_t i = 0; i < n_; ++i) {
            for (size_t j = 0; j < v_; ++j) {
                const double dpred = resid(i, j) * inv_n;
                gb2[j] += dpred;
                double* prow = p.data() + i * wide + j * m_;
                const double* wrow = w2.data() + j * m_;
                double* gwrow = gw2.data() + j * m_;
                for (size_t h = 0; h < m_; ++h) {
                    const double act = prow[h];
                    gwrow[h] += act * dpred;
                    prow[h] = dpred * wrow[h] * act * (1.0 - act);  // now dZ
                }
            }
        }
        for (size_t i = 0; i < n_; ++i) {
            const double* zrow = p.data() + i * wide;
            for (size_t c = 0; c < wide; ++c) gb1[c] += zrow[c];
        }
        // dW1 = X^T dZ + lambda2 W1 + acyclicity part
        gemm(true, false, v_, wide, n_, 1.0, data_.data(), v_, p.data(), wide, 0.0, gw1.data(),
             wide);
        const double hc = alpha + rho * h;
        for (size_t j = 0; j < v_; ++j)
            for (size_t k = 0; k < v_; ++k)
                for (size_t h2 = 0; h2 < m_; ++h2)
                    gw1(k, j * m_ + h2) += lambda2_ * w1(k, j * m_ + h2) +
                                           hc * 2.0 * w1(k, j * m_ + h2) * expm(j, k);
        for (size_t c = 0; c < wide; ++c) gw2[c] += lambda2_ * w2[c];
        return value;
    }

private:
    const Dataset& data_;
    size_t n_, v_, m_;
    double lambda2_;
};

}  // namespace detail

/// MLP NOTEARS: one small MLP per node predicting it from all others; the
/// dependency matrix entry (k, j) is the L2 norm of node j's first-layer
/// weights attributable to input k, and the same augmented-Lagrangian
/// acyclicity treatment applies to that matrix. Self-inputs are pinned to
/// zero.
inline EstimatedGraph notears_mlp(const Dataset& data, const NotearsMlpConfig& cfg = {},
                                  uint64_t seed = 0) {
    const size_t n = data.rows(), v = data.cols();
    const size_t m = cfg.hidden;
    if (n <= v) throw InsufficientSampleError("notears_mlp needs n > V");
    if (m == 0) throw ConfigError("notears_mlp: hidden units must be >= 1");

    detail::MlpObjective obj(data, m, cfg.lambda2);
    std::vector<Tensor> params = obj.init_params(seed);

    auto inner = [&](double rho, double alpha) -> double {
        auto eval = [&](const std::vector<Tensor>& ps, std::vector<Tensor>* grads) {
            return obj.eval(ps, grads, rho, alpha);
        };
        auto prox = [&](std::vector<Tensor>& ps, double step) {
            detail::soft_threshold_inplace(ps[0], cfg.lambda1 * step);
            for (size_t j = 0; j < v; ++j)
                for (size_t h = 0; h < m; ++h) ps[0](j, j * m + h) = 0.0;
        };
        detail::prox_gradient_solve(params, eval, prox, cfg.max_inner_steps, cfg.grad_tol);
        return detail::trace_expm_minus_d(obj.dependency_squared(params));
    };

    auto try_round = [&]() -> bool {
        Tensor s = obj.dependency_squared(params);
        Tensor dep({v, v});
        for (size_t i = 0; i < v * v; ++i) dep[i] = std::sqrt(s[i]);
        Tensor rounded_dep = dep;
        if (!detail::round_weights_to_feasible(rounded_dep, cfg.h_tol, cfg.threshold,
                                               [](const Tensor& t) { return notears_h(t); }))
            return false;
        for (size_t j = 0; j < v; ++j)
            for (size_t k = 0; k < v; ++k)
                if (rounded_dep(k, j) == 0.0 && dep(k, j) != 0.0)
                    for (size_t h = 0; h < m; ++h) params[0](k, j * m + h) = 0.0;
        return true;
    };

    detail::augmented_lagrangian(
        inner, [&]() { return params; }, [&](const std::vector<Tensor>& s) { params = s; },
        try_round, cfg.h_tol, cfg.max_outer_rounds, cfg.rho_max, "notears_mlp");

    // Dependency matrix is entrywise >= 0 by construction (norms).
    Tensor s = obj.dependency_squared(params);
    Tensor dep({v, v});
    for (size_t i = 0; i < v * v; ++i) dep[i] = std::sqrt(s[i]);

    DagGraph g(v);
    for (size_t i = 0; i < v; ++i)
        for (size_t j = 0; j < v; ++j)
            if (i != j && dep(i, j) >= cfg.threshold) g.set_edge(i, j, true);
    break_cycles_by_weight(g, dep);

    EstimatedGraph out;
    out.adjacency = g;
    out.weighted = std::move(dep);
    return out;
}

}  // namespace camp
