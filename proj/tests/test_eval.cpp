#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "camp/evalharness.hpp"

using namespace camp;

namespace {

/// Independent Spearman oracle: Pearson correlation of the rank vectors.
double spearman_pearson_oracle(const std::vector<int>& a, const std::vector<int>& b) {
    const double k = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= k;
    mb /= k;
    double num = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return num / std::sqrt(va * vb);
}

std::vector<Scorecard> synthetic_scorecards(size_t count, uint64_t seed) {
    // Three-class world with distinct per-class winners:
    // LG -> method 0, LNG -> method 1, NL -> method 2; method 3 mediocre.
    std::vector<Scorecard> cards;
    Rng rng(seed);
    for (size_t i = 0; i < count; ++i) {
        Scorecard c;
        c.dataset_id = "syn" + std::to_string(i);
        const int cls = static_cast<int>(rng.uniform_int(0, 2));
        c.assumption = static_cast<AssumptionClass>(cls);
        c.scores.assign(4, 0.0);
        for (size_t m = 0; m < 4; ++m) c.scores[m] = rng.uniform(0.1, 0.4);
        c.scores[static_cast<size_t>(cls)] = rng.uniform(0.6, 0.95);
        c.scores[3] = rng.uniform(0.3, 0.5);
        c.label = argmax_smallest_index(c.scores);
        c.n = 300;
        c.v = 6;
        cards.push_back(std::move(c));
    }
    return cards;
}

}  // namespace

TEST_CASE("weighted score") {
    std::vector<double> scores{0.2, 0.4, 0.9, 0.1};
    REQUIRE(weighted_score({0.25, 0.25, 0.25, 0.25}, scores) == Catch::Approx(0.4));
    REQUIRE(weighted_score({0, 0, 1, 0}, scores) == 0.9);
    REQUIRE(weighted_score({0.5, 0.5, 0, 0}, scores) == Catch::Approx(0.3));
    REQUIRE_THROWS_AS(weighted_score({0.5, 0.5}, scores), ShapeError);
    REQUIRE_THROWS_AS(weighted_score({0.7, 0.1, 0.1, 0.0}, scores), ContractError);

    // p in the simplex -> weighted <= max(s)
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> p(4), s(4);
        double total = 0;
        for (auto& x : p) {
            x = rng.uniform(0, 1);
            total += x;
        }
        for (auto& x : p) x /= total;
        for (auto& x : s) x = rng.uniform(0, 1);
        REQUIRE(weighted_score(p, s) <= *std::max_element(s.begin(), s.end()) + 1e-12);
    }
}

TEST_CASE("spearman formula and properties") {
    REQUIRE(spearman({0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}) == 1.0);
    REQUIRE(spearman({0, 1, 2, 3, 4, 5}, {5, 4, 3, 2, 1, 0}) == -1.0);
    // true [1..6], predicted swaps the top two: 1 - 6*2/210
    REQUIRE(spearman({0, 1, 2, 3, 4, 5}, {1, 0, 2, 3, 4, 5}) ==
            Catch::Approx(1.0 - 12.0 / 210.0));
    REQUIRE_THROWS_AS(spearman({0, 1, 2}, {0, 1, 1}), ContractError);
    REQUIRE_THROWS_AS(spearman({0, 1}, {0, 1, 2}), ContractError);

    // brute force over all ranking pairs at K <= 4 against the Pearson oracle
    for (size_t k : {2, 3, 4}) {
        std::vector<int> a(k);
        std::iota(a.begin(), a.end(), 0);
        std::vector<int> b = a;
        std::sort(a.begin(), a.end());
        do {
            std::sort(b.begin(), b.end());
            do {
                REQUIRE(spearman(a, b) ==
                        Catch::Approx(spearman_pearson_oracle(a, b)).margin(1e-12));
            } while (std::next_permutation(b.begin(), b.end()));
        } while (std::next_permutation(a.begin(), a.end()));
    }

    // every permutation: rho(r, r) = 1 and rho(r, reverse-rank(r)) = -1
    std::vector<int> r{2, 0, 3, 1};
    std::vector<int> rev(4);
    for (size_t i = 0; i < 4; ++i) rev[i] = 3 - r[i];
    REQUIRE(spearman(r, r) == 1.0);
    REQUIRE(spearman(r, rev) == -1.0);
}

TEST_CASE("ranking from scores breaks ties by index") {
    auto rank = ranking_from_scores({0.5, 0.9, 0.5, 0.1});
    REQUIRE(rank == std::vector<int>{1, 0, 2, 3});
}

TEST_CASE("selector evaluation on synthetic scorecards") {
    auto cards = synthetic_scorecards(400, 9);
    DatasetLoader no_loader = [](const std::string&) -> Dataset {
        throw std::runtime_error("no datasets needed");
    };

    OracleSpec class3 = fit_class_oracle(cards, true);
    OracleSpec class2 = fit_class_oracle(cards, false);
    // per-class winners are by construction methods 0/1/2
    REQUIRE(class3.class_table[AssumptionClass::LinearGaussian] == 0);
    REQUIRE(class3.class_table[AssumptionClass::LinearNonGaussian] == 1);
    REQUIRE(class3.class_table[AssumptionClass::Nonlinear] == 2);
    // pooled linear class maps to one of the linear winners
    REQUIRE((class2.class_table[AssumptionClass::LinearGaussian] == 0 ||
             class2.class_table[AssumptionClass::LinearGaussian] == 1));

    std::vector<OracleSpec> selectors{oracle_best(), class3, class2, fixed_method(0, "m0"),
                                      fixed_method(1, "m1"), fixed_method(2, "m2"),
                                      fixed_method(3, "m3"), random_selector(3, 10000)};
    EvalGroup g = evaluate_selectors(cards, selectors, no_loader);

    auto row = [&](const std::string& name) -> const SelectorResult& {
        for (const auto& r : g.rows)
            if (r.name == name) return r;
        throw std::runtime_error("missing row " + name);
    };

    // Oracle(Best) dominates everyone
    for (const auto& r : g.rows) REQUIRE(row("oracle_best").mean >= r.mean - 1e-12);

    // FixedMethod(k) mean equals the column mean
    double col0 = 0;
    for (const auto& c : cards) col0 += c.scores[0];
    col0 /= cards.size();
    REQUIRE(row("fixed_m0").mean == Catch::Approx(col0));

    // Random converges to the average of column means
    double all = 0;
    for (const auto& c : cards)
        for (double s : c.scores) all += s;
    all /= (cards.size() * 4.0);
    REQUIRE(std::abs(row("random").mean - all) < 0.01);

    // class-oracle monotonicity on the fitted split
    REQUIRE(row("oracle_lg_ng_nl").mean >= row("oracle_l_nl").mean - 1e-12);
    double best_fixed = 0;
    for (int m = 0; m < 4; ++m)
        best_fixed = std::max(best_fixed, row("fixed_m" + std::to_string(m)).mean);
    REQUIRE(row("oracle_l_nl").mean >= best_fixed - 1e-12);

    // selector referencing a method outside the registry
    REQUIRE_THROWS_AS(evaluate_selectors(cards, {fixed_method(7, "nope")}, no_loader),
                      ConfigError);
}

TEST_CASE("class oracle requires every class") {
    auto cards = synthetic_scorecards(50, 11);
    for (auto& c : cards) c.assumption = AssumptionClass::LinearGaussian;
    REQUIRE_THROWS_AS(fit_class_oracle(cards, true), FitError);
}

TEST_CASE("external evaluation contract") {
    // Tiny real run: two cheap methods, small data, initialized model.
    MethodRegistry reg;
    reg.add_builtin(BuiltinMethod::DirectLingam);
    reg.add_builtin(BuiltinMethod::GreedyBic);

    ScmGenConfig gen;
    gen.v_min = 4;
    gen.v_max = 4;
    gen.n_min = 200;
    gen.n_max = 200;
    gen.mix_linear_gaussian = 0;
    gen.mix_linear_non_gaussian = 1;
    gen.mix_nonlinear = 0;
    TrainingInstance inst = sample_training_instance(gen, 21);

    EncoderConfig enc;
    enc.layers = 1;
    enc.embed_dim = 8;
    enc.heads = 2;
    enc.ffn_hidden = 16;
    enc.head_hidden = 8;
    std::vector<LabeledInstance> li(2);
    li[0].id = "a";
    li[0].data = inst.data;
    li[0].label = 0;
    li[0].scores = {1.0, 0.0};
    li[1] = li[0];
    li[1].id = "b";
    TrainConfig tc;
    tc.labeled_count = 2;
    tc.max_steps = 0;
    tc.val_fraction = 0.5;
    TrainResult tr = train_supervised(tc, enc, reg.fingerprint(), li);

    ExternalMetrics m = evaluate_external(tr.checkpoint, inst.data, inst.spec.graph, 3, reg, 77);
    REQUIRE(m.true_mean_f1.size() == 2);
    for (double s : m.true_mean_f1) {
        REQUIRE(s >= 0.0);
        REQUIRE(s <= 1.0);
    }
    REQUIRE(m.oracle_top1 == *std::max_element(m.true_mean_f1.begin(), m.true_mean_f1.end()));
    REQUIRE(m.spearman_rho >= -1.0);
    REQUIRE(m.spearman_rho <= 1.0);
    REQUIRE(m.camp_top1 <= m.oracle_top1 + 1e-12);

    // deterministic given seeds and repeats
    ExternalMetrics m2 = evaluate_external(tr.checkpoint, inst.data, inst.spec.graph, 3, reg, 77);
    REQUIRE(m.true_mean_f1 == m2.true_mean_f1);
    REQUIRE(m.probabilities == m2.probabilities);

    // shape and validity errors
    DagGraph small(3);
    REQUIRE_THROWS_AS(evaluate_external(tr.checkpoint, inst.data, small, 1, reg, 1), ParseError);
    DagGraph cyclic(4);
    cyclic.set_edge(0, 1, true);
    cyclic.set_edge(1, 0, true);
    REQUIRE_THROWS_AS(evaluate_external(tr.checkpoint, inst.data, cyclic, 1, reg, 1), ParseError);
}

TEST_CASE("report serialization round trip") {
    EvalReport report;
    report.method_names = {"m0", "m1"};
    EvalGroup g;
    g.name = "iid";
    g.rows.push_back({"oracle_best", 0.8, 0.02, 100});
    g.rows.push_back({"camp", 0.75, 0.03, 100});
    report.groups.push_back(g);
    ExternalMetrics e;
    e.true_mean_f1 = {0.4, 0.6};
    e.true_ranking = {1, 0};
    e.predicted_ranking = {0, 1};
    e.probabilities = {0.7, 0.3};
    e.oracle_top1 = 0.6;
    e.camp_top1 = 0.4;
    e.weighted_f1 = 0.46;
    e.average_score = 0.5;
    e.spearman_rho = -1.0;
    report.external = e;

    nlohmann::json j = report_to_json(report);
    REQUIRE(j["groups"][0]["selectors"][1]["selector"] == "camp");
    REQUIRE(j["external"]["spearman"] == -1.0);

    const std::string text = render_report_text(report);
    REQUIRE(text.find("Top-1 F1-score") != std::string::npos);
    REQUIRE(text.find("Weighted F1-score") != std::string::npos);
    REQUIRE(text.find("Spearman") != std::string::npos);
}
