#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "camp/dataset.hpp"
#include "camp/errors.hpp"
#include "camp/graph.hpp"
#include "camp/rng.hpp"

namespace camp {

enum class ScmFamily {
    LinearGaussian,
    LinearNonGaussian,
    NonlinearAnm,
    PostNonlinear,
    LocationScale,
};

enum class AssumptionClass { LinearGaussian, LinearNonGaussian, Nonlinear };

inline const char* family_name(ScmFamily f) {
    switch (f) {
        case ScmFamily::LinearGaussian: return "linear_gaussian";
        case ScmFamily::LinearNonGaussian: return "linear_non_gaussian";
        case ScmFamily::NonlinearAnm: return "nonlinear_anm";
        case ScmFamily::PostNonlinear: return "post_nonlinear";
        case ScmFamily::LocationScale: return "location_scale";
    }
    return "?";
}

inline const char* assumption_name(AssumptionClass a) {
    switch (a) {
        case AssumptionClass::LinearGaussian: return "linear_gaussian";
        case AssumptionClass::LinearNonGaussian: return "linear_non_gaussian";
        case AssumptionClass::Nonlinear: return "nonlinear";
    }
    return "?";
}

inline AssumptionClass assumption_from_name(const std::string& s) {
    if (s == "linear_gaussian") return AssumptionClass::LinearGaussian;
    if (s == "linear_non_gaussian") return AssumptionClass::LinearNonGaussian;
    if (s == "nonlinear") return AssumptionClass::Nonlinear;
    throw ParseError("unknown assumption class '" + s + "'");
}

/// Total function from SCM family to the 3-way assumption class.
inline AssumptionClass assumption_label(ScmFamily family) {
    switch (family) {
        case ScmFamily::LinearGaussian: return AssumptionClass::LinearGaussian;
        case ScmFamily::LinearNonGaussian: return AssumptionClass::LinearNonGaussian;
        default: return AssumptionClass::Nonlinear;
    }
}

enum class NoiseKind { Gaussian, Uniform, Exponential };

/// Random Fourier feature approximation of a GP draw with RBF kernel of
/// lengthscale 1: f(x) = sqrt(2/M) * sum_m amp_m cos(omega_m . x + phase_m).
/// A fixed deterministic function once sampled.
struct RandomFunction {
    size_t arity = 0;
    size_t features = 0;
    std::vector<double> freqs;   // features x arity, row-major
    std::vector<double> phases;  // features
    std::vector<double> amps;    // features

    static constexpr size_t kMinFeatures = 64;

    static RandomFunction sample(size_t arity, size_t features, Rng& rng) {
        if (features < kMinFeatures) throw DomainError("random function: too few features");
        RandomFunction f;
        f.arity = arity;
        f.features = features;
        f.freqs.resize(features * std::max<size_t>(arity, 1));
        f.phases.resize(features);
        f.amps.resize(features);
        for (size_t m = 0; m < features; ++m) {
            for (size_t a = 0; a < std::max<size_t>(arity, 1); ++a)
                f.freqs[m * std::max<size_t>(arity, 1) + a] = rng.normal();
            f.phases[m] = rng.uniform(0.0, 2.0 * M_PI);
            f.amps[m] = rng.normal();
        }
        return f;
    }

    double eval(std::span<const double> x) const {
        const double scale = std::sqrt(2.0 / static_cast<double>(features));
        const size_t width = std::max<size_t>(arity, 1);
        double out = 0.0;
        for (size_t m = 0; m < features; ++m) {
            double phase = phases[m];
            for (size_t a = 0; a < x.size(); ++a) phase += freqs[m * width + a] * x[a];
            out += amps[m] * std::cos(phase);
        }
        return scale * out;
    }
};

/// Per-node structural equation parameters. Which fields are live depends
/// on the family and sub-variant.
struct NodeMechanism {
    std::vector<double> weights;  // linear coefficient per parent
    RandomFunction f;             // joint GP draw
    std::vector<RandomFunction> additive;  // per-parent GP draws (Additive-GP)
    RandomFunction scale_fn;      // location-scale g_j
    int sub_variant = 0;
    double pnl_beta = 0.0, pnl_gamma = 0.0;  // variant (i) outer u + beta*tanh(gamma*u)
    double pnl_a1 = 0.0, pnl_a3 = 0.0;       // variant (ii) outer a1*v + a3*v^3
    NoiseKind noise = NoiseKind::Gaussian;
    double noise_scale = 1.0;
};

/// Full generative description of one sampled SCM; the source of ground
/// truth for labels and scoring.
struct ScmSpec {
    DagGraph graph;
    ScmFamily family = ScmFamily::LinearGaussian;
    std::vector<NodeMechanism> nodes;
    uint64_t seed = 0;
};

inline AssumptionClass assumption_label(const ScmSpec& spec) {
    return assumption_label(spec.family);
}

namespace detail {

inline double sample_weight(Rng& rng) {
    // Uniform([-2, -0.5] u [0.5, 2])
    const double mag = rng.uniform(0.5, 2.0);
    return rng.bernoulli(0.5) ? mag : -mag;
}

inline double sample_sigma(Rng& rng) { return rng.uniform(0.2, 2.0); }

constexpr size_t kRffFeatures = 128;

}  // namespace detail

/// Samples mechanism and noise parameters for every node of `graph` from
/// the given family. Sub-variants (GP vs Additive-GP; PNL i vs ii) are
/// chosen uniformly within the family.
inline ScmSpec sample_scm(const DagGraph& graph, ScmFamily family, uint64_t seed) {
    Rng rng(derive_seed(seed, "scm"));
    ScmSpec spec;
    spec.graph = graph;
    spec.family = family;
    spec.seed = seed;
    const size_t v = graph.node_count();
    spec.nodes.resize(v);

    // SCM-level 50/50 coin between uniform and exponential noise for the
    // linear non-Gaussian family.
    NoiseKind lng_noise = rng.bernoulli(0.5) ? NoiseKind::Uniform : NoiseKind::Exponential;
    int family_variant = rng.bernoulli(0.5) ? 0 : 1;

    for (size_t j = 0; j < v; ++j) {
        NodeMechanism& node = spec.nodes[j];
        const size_t arity = graph.in_degree(j);
        node.noise = NoiseKind::Gaussian;
        node.noise_scale = detail::sample_sigma(rng);
        node.sub_variant = family_variant;

        switch (family) {
            case ScmFamily::LinearGaussian:
            case ScmFamily::LinearNonGaussian:
                node.weights.resize(arity);
                for (double& w : node.weights) w = detail::sample_weight(rng);
                if (family == ScmFamily::LinearNonGaussian) node.noise = lng_noise;
                break;
            case ScmFamily::NonlinearAnm:
                if (family_variant == 0) {
                    node.f = RandomFunction::sample(arity, detail::kRffFeatures, rng);
                } else {
                    node.additive.resize(arity);
                    for (auto& g : node.additive)
                        g = RandomFunction::sample(1, detail::kRffFeatures, rng);
                }
                break;
            case ScmFamily::PostNonlinear:
                if (family_variant == 0) {
                    node.f = RandomFunction::sample(arity, detail::kRffFeatures, rng);
                    node.pnl_beta = rng.uniform(0.2, 0.9);
                    node.pnl_gamma = rng.uniform(0.5, 2.0);
                } else {
                    node.weights.resize(arity);
                    for (double& w : node.weights) w = detail::sample_weight(rng);
                    node.pnl_a1 = rng.uniform(0.5, 2.0);
                    node.pnl_a3 = rng.uniform(0.5, 2.0);
                }
                break;
            case ScmFamily::LocationScale:
                node.f = RandomFunction::sample(arity, detail::kRffFeatures, rng);
                node.scale_fn = RandomFunction::sample(arity, detail::kRffFeatures, rng);
                break;
        }
    }
    return spec;
}

namespace detail {

inline double draw_noise(const NodeMechanism& node, Rng& rng) {
    switch (node.noise) {
        case NoiseKind::Gaussian: return rng.normal(0.0, node.noise_scale);
        case NoiseKind::Uniform: {
            const double half = node.noise_scale * std::sqrt(3.0);
            return rng.uniform(-half, half);
        }
        case NoiseKind::Exponential: return rng.exponential(1.0 / node.noise_scale);
    }
    return 0.0;
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Evaluates node j's structural equation on one sample row.
inline double eval_mechanism(const ScmSpec& spec, size_t j, std::span<const double> parent_vals,
                             double noise) {
    const NodeMechanism& node = spec.nodes[j];
    if (parent_vals.empty()) return noise;  // zero parents: pure noise draw

    switch (spec.family) {
        case ScmFamily::LinearGaussian:
        case ScmFamily::LinearNonGaussian: {
            double acc = noise;
            for (size_t k = 0; k < parent_vals.size(); ++k)
                acc += node.weights[k] * parent_vals[k];
            return acc;
        }
        case ScmFamily::NonlinearAnm: {
            double acc = noise;
            if (node.sub_variant == 0) {
                acc += node.f.eval(parent_vals);
            } else {
                for (size_t k = 0; k < parent_vals.size(); ++k)
                    acc += node.additive[k].eval(parent_vals.subspan(k, 1));
            }
            return acc;
        }
        case ScmFamily::PostNonlinear: {
            if (node.sub_variant == 0) {
                const double u = node.f.eval(parent_vals) + noise;
                return u + node.pnl_beta * std::tanh(node.pnl_gamma * u);
            }
            double lin = 0.0;
            for (size_t k = 0; k < parent_vals.size(); ++k)
                lin += node.weights[k] * parent_vals[k];
            const double u = std::cbrt(lin) + noise;
            return node.pnl_a1 * u + node.pnl_a3 * u * u * u;
        }
        case ScmFamily::LocationScale: {
            const double loc = node.f.eval(parent_vals);
            const double scale = softplus(node.scale_fn.eval(parent_vals)) + 0.1;
            return loc + scale * noise;
        }
    }
    return noise;
}

}  // namespace detail

/// Ancestral sampling in topological order; rows are i.i.d. and the result
/// is a pure function of (spec, n, seed). Columns are z-scored before
/// return unless `standardize` is false (raw output is what closed-form
/// covariance checks compare against). Throws DivergenceError on
/// non-finite values so the caller can resample the SCM.
inline Dataset simulate_dataset(const ScmSpec& spec, size_t n, uint64_t seed,
                                bool standardize = true) {
    if (n < 1) throw DomainError("simulate_dataset: n must be >= 1");
    const auto order = spec.graph.topological_sort();
    if (!order) throw DomainError("simulate_dataset: graph has a cycle");
    const size_t v = spec.graph.node_count();

    std::vector<std::vector<size_t>> parent_idx(v);
    for (size_t j = 0; j < v; ++j) parent_idx[j] = spec.graph.parents(j);

    Dataset raw({n, v});
    Rng rng(derive_seed(seed, "simulate"));
    std::vector<double> pvals;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j : *order) {
            pvals.clear();
            for (size_t p : parent_idx[j]) pvals.push_back(raw(i, p));
            const double noise = detail::draw_noise(spec.nodes[j], rng);
            const double val = detail::eval_mechanism(spec, j, pvals, noise);
            if (!std::isfinite(val) || std::abs(val) > 1e12)
                throw DivergenceError("node " + std::to_string(j) + " produced " +
                                      std::to_string(val));
            raw(i, j) = val;
        }
    }
    return standardize ? zscore_columns(raw) : raw;
}

/// Ranges and mixture for the training-instance sampler.
struct ScmGenConfig {
    size_t v_min = 8, v_max = 12;
    size_t n_min = 600, n_max = 1200;
    size_t n_step = 100;  // quantized sample sizes for shape-bucketed batching
    double edge_p_min = 0.3, edge_p_max = 0.7;
    double mix_linear_non_gaussian = 0.11;
    double mix_linear_gaussian = 0.23;
    double mix_nonlinear = 0.66;

    void validate() const {
        const double sum = mix_linear_non_gaussian + mix_linear_gaussian + mix_nonlinear;
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError("scmgen mixture sums to " + std::to_string(sum) + ", expected 1");
        if (mix_linear_non_gaussian < 0 || mix_linear_gaussian < 0 || mix_nonlinear < 0)
            throw ConfigError("scmgen mixture weights must be nonnegative");
        if (v_min < 2 || v_max < v_min) throw ConfigError("scmgen node range invalid");
        if (n_min < 1 || n_max < n_min) throw ConfigError("scmgen sample range invalid");
        if (n_step < 1) throw ConfigError("scmgen n_step must be >= 1");
        if (edge_p_min < 0 || edge_p_max > 1 || edge_p_max < edge_p_min)
            throw ConfigError("scmgen edge probability range invalid");
    }
};

struct TrainingInstance {
    ScmSpec spec;
    Dataset data;
    size_t n = 0;
    AssumptionClass assumption = AssumptionClass::LinearGaussian;
};

namespace detail {

inline ScmFamily sample_family(const ScmGenConfig& cfg, Rng& rng) {
    const double u = rng.uniform(0.0, 1.0);
    if (u < cfg.mix_linear_non_gaussian) return ScmFamily::LinearNonGaussian;
    if (u < cfg.mix_linear_non_gaussian + cfg.mix_linear_gaussian) return ScmFamily::LinearGaussian;
    // Nonlinear sub-families equiprobable.
    const double w = rng.uniform(0.0, 3.0);
    if (w < 1.0) return ScmFamily::NonlinearAnm;
    if (w < 2.0) return ScmFamily::PostNonlinear;
    return ScmFamily::LocationScale;
}

}  // namespace detail

struct InstanceDescriptor {
    ScmFamily family;
    size_t v;
    size_t n;
    double edge_p;
};

/// The cheap part of instance sampling: family from the mixture, V and n
/// from their ranges (n quantized to n_step), edge probability uniform.
inline InstanceDescriptor sample_instance_descriptor(const ScmGenConfig& cfg, Rng& rng) {
    InstanceDescriptor d;
    d.family = detail::sample_family(cfg, rng);
    d.v = static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(cfg.v_min), static_cast<int64_t>(cfg.v_max)));
    const size_t steps = (cfg.n_max - cfg.n_min) / cfg.n_step;
    d.n = cfg.n_min +
          cfg.n_step * static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(steps)));
    d.edge_p = rng.uniform(cfg.edge_p_min, cfg.edge_p_max);
    return d;
}

/// Draws one (spec, dataset) pair: descriptor, Erdos-Renyi graph, then
/// ancestral simulation. SCMs whose simulation diverges are redrawn with a
/// fresh derived seed.
inline TrainingInstance sample_training_instance(const ScmGenConfig& cfg, uint64_t seed) {
    cfg.validate();
    for (uint64_t attempt = 0; attempt < 20; ++attempt) {
        const uint64_t s = derive_seed(seed, "instance", attempt);
        Rng rng(s);
        const InstanceDescriptor d = sample_instance_descriptor(cfg, rng);
        const DagGraph graph = sample_erdos_renyi_dag(d.v, d.edge_p, rng);
        const ScmSpec spec = sample_scm(graph, d.family, derive_seed(s, "params"));
        try {
            TrainingInstance inst;
            inst.data = simulate_dataset(spec, d.n, derive_seed(s, "data"));
            inst.spec = spec;
            inst.n = d.n;
            inst.assumption = assumption_label(spec.family);
            return inst;
        } catch (const DivergenceError&) {
            continue;  // resample the offending SCM
        }
    }
    throw DivergenceError("instance sampling diverged 20 times in a row");
}

}  // namespace camp
