#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "camp/discovery.hpp"
#include "camp/errors.hpp"
#include "camp/pipeline.hpp"
#include "camp/scm.hpp"

namespace camp {

// ---------------------------------------------------------------------------
// Selection metrics.
// ---------------------------------------------------------------------------

/// Probability-weighted score sum p_i * s_i; p must lie in the simplex.
inline double weighted_score(const std::vector<double>& probabilities,
                             const std::vector<double>& scores) {
    if (probabilities.size() != scores.size()) throw ShapeError("weighted_score: length mismatch");
    double total = 0.0, mass = 0.0;
    for (size_t i = 0; i < probabilities.size(); ++i) {
        if (probabilities[i] < -1e-12) throw ContractError("weighted_score: negative probability");
        total += probabilities[i] * scores[i];
        mass += probabilities[i];
    }
    if (std::abs(mass - 1.0) > 1e-9) throw ContractError("weighted_score: probabilities must sum to 1");
    return total;
}

/// Spearman rank correlation 1 - 6 sum d^2 / (K (K^2 - 1)) between two
/// rankings given as permutations of 0..K-1 (rank of each method).
inline double spearman(const std::vector<int>& rank_a, const std::vector<int>& rank_b) {
    const size_t k = rank_a.size();
    if (rank_b.size() != k || k < 2) throw ContractError("spearman: rankings must share K >= 2");
    auto check_perm = [k](const std::vector<int>& r) {
        std::vector<bool> seen(k, false);
        for (int v : r) {
            if (v < 0 || static_cast<size_t>(v) >= k || seen[static_cast<size_t>(v)])
                throw ContractError("spearman: input is not a permutation");
            seen[static_cast<size_t>(v)] = true;
        }
    };
    check_perm(rank_a);
    check_perm(rank_b);
    double d2 = 0.0;
    for (size_t i = 0; i < k; ++i) {
        const double d = static_cast<double>(rank_a[i]) - static_cast<double>(rank_b[i]);
        d2 += d * d;
    }
    const double kk = static_cast<double>(k);
    return 1.0 - 6.0 * d2 / (kk * (kk * kk - 1.0));
}

/// Ranking from a score vector: rank[i] is the rank of method i (0 = best),
/// ties broken by the smaller registry index.
inline std::vector<int> ranking_from_scores(const std::vector<double>& scores) {
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    std::vector<int> rank(scores.size());
    for (size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = static_cast<int>(pos);
    return rank;
}

// ---------------------------------------------------------------------------
// Selectors and oracles.
// ---------------------------------------------------------------------------

enum class SelectorKind { OracleBest, OracleClass3, OracleClass2, FixedMethod, Random, Camp };

/// A method-selection strategy. Class oracles carry a per-class best-method
/// table fitted from a reference scorecard split.
struct OracleSpec {
    SelectorKind kind = SelectorKind::OracleBest;
    std::string name;
    int fixed_index = 0;                       // FixedMethod
    uint64_t seed = 0;                         // Random
    size_t random_draws = 1000;                // Random: draws averaged per dataset
    std::map<AssumptionClass, int> class_table;  // class oracles
    const Checkpoint* checkpoint = nullptr;    // Camp
};

/// Pools LG and LNG into "linear" for the 2-class oracle.
inline AssumptionClass pool_linear(AssumptionClass a) {
    return a == AssumptionClass::Nonlinear ? AssumptionClass::Nonlinear
                                           : AssumptionClass::LinearGaussian;
}

/// Per class, the method with the highest mean F1 on the reference split
/// (ties to the smaller index). Throws FitError naming any missing class.
inline OracleSpec fit_class_oracle(const std::vector<Scorecard>& reference, bool three_way) {
    std::map<AssumptionClass, std::vector<double>> sums;
    std::map<AssumptionClass, size_t> counts;
    size_t k = 0;
    for (const Scorecard& c : reference) {
        const AssumptionClass cls = three_way ? c.assumption : pool_linear(c.assumption);
        if (sums[cls].empty()) sums[cls].assign(c.scores.size(), 0.0);
        for (size_t i = 0; i < c.scores.size(); ++i) sums[cls][i] += c.scores[i];
        counts[cls]++;
        k = c.scores.size();
    }
    std::vector<AssumptionClass> required =
        three_way ? std::vector<AssumptionClass>{AssumptionClass::LinearGaussian,
                                                 AssumptionClass::LinearNonGaussian,
                                                 AssumptionClass::Nonlinear}
                  : std::vector<AssumptionClass>{AssumptionClass::LinearGaussian,
                                                 AssumptionClass::Nonlinear};
    OracleSpec spec;
    spec.kind = three_way ? SelectorKind::OracleClass3 : SelectorKind::OracleClass2;
    spec.name = three_way ? "oracle_lg_ng_nl" : "oracle_l_nl";
    for (AssumptionClass cls : required) {
        if (counts[cls] == 0)
            throw FitError(std::string("no reference datasets in class ") +
                           (three_way ? assumption_name(cls)
                                      : (cls == AssumptionClass::Nonlinear ? "nonlinear" : "linear")));
        int best = 0;
        for (size_t i = 1; i < k; ++i)
            if (sums[cls][i] > sums[cls][best]) best = static_cast<int>(i);
        spec.class_table[cls] = best;
    }
    return spec;
}

inline OracleSpec oracle_best() {
    OracleSpec s;
    s.kind = SelectorKind::OracleBest;
    s.name = "oracle_best";
    return s;
}

inline OracleSpec fixed_method(int index, const std::string& method_name) {
    OracleSpec s;
    s.kind = SelectorKind::FixedMethod;
    s.fixed_index = index;
    s.name = "fixed_" + method_name;
    return s;
}

inline OracleSpec random_selector(uint64_t seed, size_t draws = 1000) {
    OracleSpec s;
    s.kind = SelectorKind::Random;
    s.seed = seed;
    s.random_draws = draws;
    s.name = "random";
    return s;
}

inline OracleSpec camp_selector(const Checkpoint& ckpt, const std::string& name) {
    OracleSpec s;
    s.kind = SelectorKind::Camp;
    s.checkpoint = &ckpt;
    s.name = name;
    return s;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

struct SelectorResult {
    std::string name;
    double mean = 0.0;
    double ci95 = 0.0;  // half-width, normal approximation
    size_t count = 0;
};

struct ExternalMetrics {
    std::vector<double> true_mean_f1;  // per method, averaged over repeats
    std::vector<int> true_ranking;     // rank of each method
    std::vector<int> predicted_ranking;
    std::vector<double> probabilities;
    double oracle_top1 = 0.0;     // realized best mean F1
    double camp_top1 = 0.0;       // mean F1 of CAMP's first pick
    double weighted_f1 = 0.0;     // sum p_i s_i
    double average_score = 0.0;   // equal-weight baseline
    double spearman_rho = 0.0;
};

struct EvalGroup {
    std::string name;
    std::vector<SelectorResult> rows;
    bool degraded = false;  // CAMP mean < class-oracle mean on this group
};

struct EvalReport {
    std::vector<EvalGroup> groups;
    std::optional<ExternalMetrics> external;
    std::vector<std::string> method_names;
};

namespace detail {

inline SelectorResult summarize(const std::string& name, const std::vector<double>& values) {
    SelectorResult r;
    r.name = name;
    r.count = values.size();
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - r.mean) * (v - r.mean);
    if (values.size() > 1) var /= static_cast<double>(values.size() - 1);
    r.ci95 = 1.96 * std::sqrt(var / static_cast<double>(values.size()));
    return r;
}

}  // namespace detail

/// Loader from dataset id to the stored dataset (CAMP selectors replay the
/// encoder on each dataset; oracles and fixed methods only need scores).
using DatasetLoader = std::function<Dataset(const std::string& id)>;

/// Mean selected-F1 with a 95% CI for every selector over the scorecards.
inline EvalGroup evaluate_selectors(const std::vector<Scorecard>& scorecards,
                                    const std::vector<OracleSpec>& selectors,
                                    const DatasetLoader& loader, size_t workers = 2,
                                    const std::string& group_name = "iid") {
    if (scorecards.empty()) throw ConfigError("evaluate_selectors: no scorecards");
    const size_t k = scorecards[0].scores.size();
    EvalGroup group;
    group.name = group_name;

    for (const OracleSpec& sel : selectors) {
        std::vector<double> values(scorecards.size(), 0.0);
        switch (sel.kind) {
            case SelectorKind::OracleBest:
                for (size_t i = 0; i < scorecards.size(); ++i)
                    values[i] = *std::max_element(scorecards[i].scores.begin(),
                                                  scorecards[i].scores.end());
                break;
            case SelectorKind::FixedMethod:
                if (sel.fixed_index < 0 || static_cast<size_t>(sel.fixed_index) >= k)
                    throw ConfigError("selector '" + sel.name + "' references method " +
                                      std::to_string(sel.fixed_index) + " outside the registry");
                for (size_t i = 0; i < scorecards.size(); ++i)
                    values[i] = scorecards[i].scores[static_cast<size_t>(sel.fixed_index)];
                break;
            case SelectorKind::OracleClass3:
            case SelectorKind::OracleClass2:
                for (size_t i = 0; i < scorecards.size(); ++i) {
                    const AssumptionClass cls = sel.kind == SelectorKind::OracleClass3
                                                    ? scorecards[i].assumption
                                                    : pool_linear(scorecards[i].assumption);
                    auto it = sel.class_table.find(cls);
                    if (it == sel.class_table.end())
                        throw ConfigError("class oracle has no entry for a test class");
                    if (it->second < 0 || static_cast<size_t>(it->second) >= k)
                        throw ConfigError("selector '" + sel.name + "' references a method outside the registry");
                    values[i] = scorecards[i].scores[static_cast<size_t>(it->second)];
                }
                break;
            case SelectorKind::Random:
                for (size_t i = 0; i < scorecards.size(); ++i) {
                    Rng rng(derive_seed(sel.seed, "random_selector", i));
                    double acc = 0.0;
                    for (size_t d = 0; d < sel.random_draws; ++d)
                        acc += scorecards[i]
                                   .scores[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(k) - 1))];
                    values[i] = acc / static_cast<double>(sel.random_draws);
                }
                break;
            case SelectorKind::Camp: {
                if (!sel.checkpoint) throw ConfigError("camp selector without checkpoint");
                detail::parallel_for(scorecards.size(), workers, [&](size_t i) {
                    const Dataset data = loader(scorecards[i].dataset_id);
                    Prediction p = predict(*sel.checkpoint, data);
                    values[i] = scorecards[i].scores[static_cast<size_t>(p.ranking[0])];
                });
                break;
            }
        }
        group.rows.push_back(detail::summarize(sel.name, values));
    }
    return group;
}

// ---------------------------------------------------------------------------
// OOD suites.
// ---------------------------------------------------------------------------

struct OodGroupConfig {
    std::string name;
    bool scale_free = false;
    size_t scale_free_attachment = 2;
    size_t v_min = 14, v_max = 14;
    size_t dataset_count = 100;
};

/// Generates an OOD group (same SCM families, different graph prior or
/// node count), labels it with the registry, and evaluates CAMP against
/// the oracles and baselines. Class oracles are fitted on the suite's own
/// scorecards: they are the "best per class on this distribution"
/// reference the degradation flag is defined against.
inline EvalReport run_ood_suite(const Checkpoint& ckpt, const std::vector<OodGroupConfig>& groups,
                                const ScmGenConfig& base_gen, const MethodRegistry& registry,
                                uint64_t seed, size_t workers = 2) {
    EvalReport report;
    report.method_names = registry.fingerprint();
    for (const OodGroupConfig& gc : groups) {
        ScmGenConfig gen = base_gen;
        gen.v_min = gc.v_min;
        gen.v_max = gc.v_max;
        std::vector<Scorecard> cards(gc.dataset_count);
        std::vector<Dataset> datasets(gc.dataset_count);
        detail::parallel_for(gc.dataset_count, workers, [&](size_t i) {
            const uint64_t s = derive_seed(seed, gc.name, i);
            TrainingInstance inst;
            if (gc.scale_free) {
                // same SCM families, only the graph prior changes
                for (uint64_t attempt = 0;; ++attempt) {
                    const uint64_t si = derive_seed(s, "sf", attempt);
                    Rng rng(si);
                    const InstanceDescriptor d = sample_instance_descriptor(gen, rng);
                    const DagGraph graph = sample_scale_free_dag(d.v, gc.scale_free_attachment, rng);
                    const ScmSpec spec = sample_scm(graph, d.family, derive_seed(si, "params"));
                    try {
                        inst.data = simulate_dataset(spec, d.n, derive_seed(si, "data"));
                        inst.spec = spec;
                        inst.assumption = assumption_label(spec.family);
                        break;
                    } catch (const DivergenceError&) {
                        continue;
                    }
                }
            } else {
                inst = sample_training_instance(gen, s);
            }
            const std::string id = gc.name + "_" + std::to_string(i);
            cards[i] = label_dataset(inst.data, inst.spec.graph, registry, derive_seed(s, "label"),
                                     id, inst.assumption);
            datasets[i] = std::move(inst.data);
        });

        std::map<std::string, size_t> index_by_id;
        for (size_t i = 0; i < cards.size(); ++i) index_by_id[cards[i].dataset_id] = i;
        DatasetLoader loader = [&](const std::string& id) { return datasets[index_by_id.at(id)]; };

        std::vector<OracleSpec> selectors;
        selectors.push_back(oracle_best());
        selectors.push_back(fit_class_oracle(cards, true));
        selectors.push_back(fit_class_oracle(cards, false));
        for (size_t m = 0; m < registry.size(); ++m)
            selectors.push_back(fixed_method(static_cast<int>(m), registry.at(m).name));
        selectors.push_back(random_selector(derive_seed(seed, "random", 0)));
        selectors.push_back(camp_selector(ckpt, "camp"));

        EvalGroup group = evaluate_selectors(cards, selectors, loader, workers, gc.name);
        double camp_mean = 0.0, class3_mean = 0.0;
        for (const auto& row : group.rows) {
            if (row.name == "camp") camp_mean = row.mean;
            if (row.name == "oracle_lg_ng_nl") class3_mean = row.mean;
        }
        group.degraded = camp_mean < class3_mean;
        report.groups.push_back(std::move(group));
    }
    return report;
}

// ---------------------------------------------------------------------------
// External-benchmark protocol.
// ---------------------------------------------------------------------------

/// Runs every registry method `repeats` times on a user-supplied dataset,
/// averages per-method F1 against the supplied ground-truth adjacency to
/// form the true ranking, and compares it with the CAMP ranking.
inline ExternalMetrics evaluate_external(const Checkpoint& ckpt, const Dataset& data,
                                         const DagGraph& truth, size_t repeats,
                                         const MethodRegistry& registry, uint64_t seed,
                                         const std::string& dataset_id = "external",
                                         size_t workers = 2) {
    if (truth.node_count() != data.cols())
        throw ParseError("ground truth has " + std::to_string(truth.node_count()) +
                         " nodes, dataset has " + std::to_string(data.cols()) + " variables");
    if (!truth.is_acyclic()) throw ParseError("ground-truth adjacency is cyclic");
    if (repeats == 0) throw ConfigError("repeats must be >= 1");

    const size_t k = registry.size();
    std::vector<double> sums(k, 0.0);
    std::vector<std::pair<size_t, size_t>> tasks;
    for (size_t m = 0; m < k; ++m)
        for (size_t r = 0; r < repeats; ++r) tasks.push_back({m, r});
    std::vector<double> task_scores(tasks.size(), 0.0);
    detail::parallel_for(tasks.size(), workers, [&](size_t t) {
        const auto [m, r] = tasks[t];
        double score = 0.0;
        try {
            const EstimatedGraph est =
                registry.run(m, data, derive_seed(seed, "method", m, r));
            score = f1_score(est, truth);
        } catch (const std::exception&) {
            score = 0.0;  // failure policy mirrors labeling
        }
        task_scores[t] = score;
    });
    for (size_t t = 0; t < tasks.size(); ++t) sums[tasks[t].first] += task_scores[t];

    ExternalMetrics out;
    for (size_t m = 0; m < k; ++m) out.true_mean_f1.push_back(sums[m] / static_cast<double>(repeats));
    out.true_ranking = ranking_from_scores(out.true_mean_f1);

    Prediction pred = predict(ckpt, data);
    out.probabilities = pred.head.probabilities;
    out.predicted_ranking.resize(k);
    for (size_t pos = 0; pos < k; ++pos)
        out.predicted_ranking[static_cast<size_t>(pred.ranking[pos])] = static_cast<int>(pos);

    out.oracle_top1 = *std::max_element(out.true_mean_f1.begin(), out.true_mean_f1.end());
    out.camp_top1 = out.true_mean_f1[static_cast<size_t>(pred.ranking[0])];
    out.weighted_f1 = weighted_score(out.probabilities, out.true_mean_f1);
    out.average_score = 0.0;
    for (double s : out.true_mean_f1) out.average_score += s;
    out.average_score /= static_cast<double>(k);
    out.spearman_rho = spearman(out.true_ranking, out.predicted_ranking);
    (void)dataset_id;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["method_names"] = report.method_names;
    std::vector<nlohmann::json> groups;
    for (const auto& g : report.groups) {
        nlohmann::json gj;
        gj["name"] = g.name;
        gj["degraded"] = g.degraded;
        std::vector<nlohmann::json> rows;
        for (const auto& r : g.rows)
            rows.push_back({{"selector", r.name}, {"mean", r.mean}, {"ci95", r.ci95}, {"n", r.count}});
        gj["selectors"] = rows;
        groups.push_back(gj);
    }
    j["groups"] = groups;
    if (report.external) {
        const ExternalMetrics& e = *report.external;
        j["external"] = {{"true_mean_f1", e.true_mean_f1},
                         {"true_ranking", e.true_ranking},
                         {"predicted_ranking", e.predicted_ranking},
                         {"probabilities", e.probabilities},
                         {"top1", {{"oracle", e.oracle_top1}, {"camp", e.camp_top1}}},
                         {"weighted_f1", {{"camp", e.weighted_f1}, {"average_score", e.average_score}}},
                         {"spearman", e.spearman_rho}};
    }
    return j;
}

/// Plain-text table: per group one row per selector; for external
/// benchmarks, three metric blocks (top-1 F1, weighted F1, Spearman).
inline std::string render_report_text(const EvalReport& report) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(3);
    for (const auto& g : report.groups) {
        out << "== " << g.name << " ==\n";
        for (const auto& r : g.rows)
            out << "  " << r.name << std::string(r.name.size() < 22 ? 22 - r.name.size() : 1, ' ')
                << r.mean << " +/- " << r.ci95 << "  (n=" << r.count << ")\n";
        if (g.degraded) out << "  [degraded: camp mean below oracle_lg_ng_nl]\n";
        out << "\n";
    }
    if (report.external) {
        const ExternalMetrics& e = *report.external;
        out << "== external benchmark ==\n";
        out << "a) Top-1 F1-score\n";
        out << "  oracle                " << e.oracle_top1 << "\n";
        out << "  camp                  " << e.camp_top1 << "\n";
        out << "b) Weighted F1-score\n";
        out << "  camp                  " << e.weighted_f1 << "\n";
        out << "  average_score         " << e.average_score << "\n";
        out << "c) Spearman's correlation coefficient\n";
        out << "  camp                  " << e.spearman_rho << "\n";
        out << "per-method mean F1 (over repeats):\n";
        for (size_t m = 0; m < e.true_mean_f1.size(); ++m) {
            const std::string& name =
                m < report.method_names.size() ? report.method_names[m] : std::to_string(m);
            out << "  " << name << std::string(name.size() < 22 ? 22 - name.size() : 1, ' ')
                << e.true_mean_f1[m] << "  (true rank " << e.true_ranking[m] << ", predicted rank "
                << e.predicted_ranking[m] << ")\n";
        }
    }
    return out.str();
}

}  // namespace camp
