#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <sstream>

#include "camp/graph.hpp"

using namespace camp;

TEST_CASE("erdos-renyi edge cases") {
    Rng rng(1);
    REQUIRE(sample_erdos_renyi_dag(5, 0.0, rng).edge_count() == 0);
    REQUIRE(sample_erdos_renyi_dag(3, 1.0, rng).edge_count() == 3);
    REQUIRE_THROWS_AS(sample_erdos_renyi_dag(1, 0.5, rng), DomainError);
    REQUIRE_THROWS_AS(sample_erdos_renyi_dag(4, 1.5, rng), DomainError);
}

TEST_CASE("erdos-renyi mean edge count matches closed form") {
    // p * V(V-1)/2 = 22.5 at V=10, p=0.5
    Rng rng(1234);
    const int draws = 10000;
    double total = 0.0;
    for (int i = 0; i < draws; ++i) total += static_cast<double>(sample_erdos_renyi_dag(10, 0.5, rng).edge_count());
    const double mean = total / draws;
    REQUIRE(std::abs(mean - 22.5) / 22.5 < 0.01);
}

TEST_CASE("every sampled graph is acyclic") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const size_t v = 2 + static_cast<size_t>(rng.uniform_int(0, 10));
        const double p = rng.uniform(0.0, 1.0);
        REQUIRE(sample_erdos_renyi_dag(v, p, rng).is_acyclic());
    }
    for (int i = 0; i < 200; ++i) {
        const size_t v = 2 + static_cast<size_t>(rng.uniform_int(0, 10));
        const size_t m = 1 + static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(v) - 2));
        REQUIRE(sample_scale_free_dag(v, m, rng).is_acyclic());
    }
}

TEST_CASE("scale-free basics") {
    Rng rng(3);
    DagGraph tiny = sample_scale_free_dag(2, 1, rng);
    REQUIRE(tiny.edge_count() == 1);
    REQUIRE_THROWS_AS(sample_scale_free_dag(5, 0, rng), DomainError);
    REQUIRE_THROWS_AS(sample_scale_free_dag(5, 5, rng), DomainError);

    // growth rule: C(m,2) seed clique + m edges per new node
    DagGraph g = sample_scale_free_dag(20, 2, rng);
    REQUIRE(g.edge_count() == 1 + 2 * 18);
}

TEST_CASE("scale-free degrees are heavier-tailed than erdos-renyi at matched density") {
    // Compare max total degree across 1000 draws at V=20 and equal edge count.
    Rng rng(99);
    const size_t v = 20, m = 2;
    const size_t edges = 1 + m * (v - m);  // 37
    const double p_match = static_cast<double>(edges) / (static_cast<double>(v) * (v - 1) / 2.0);
    std::vector<double> sf_max, er_max;
    for (int rep = 0; rep < 1000; ++rep) {
        DagGraph sf = sample_scale_free_dag(v, m, rng);
        DagGraph er = sample_erdos_renyi_dag(v, p_match, rng);
        auto max_deg = [](const DagGraph& g) {
            size_t best = 0;
            for (size_t i = 0; i < g.node_count(); ++i)
                best = std::max(best, g.in_degree(i) + g.out_degree(i));
            return static_cast<double>(best);
        };
        sf_max.push_back(max_deg(sf));
        er_max.push_back(max_deg(er));
    }
    // Kolmogorov-Smirnov distance between the two max-degree samples, plus a
    // directional check that the scale-free tail dominates.
    std::sort(sf_max.begin(), sf_max.end());
    std::sort(er_max.begin(), er_max.end());
    double ks = 0.0;
    size_t i = 0, j = 0;
    while (i < sf_max.size() && j < er_max.size()) {
        if (sf_max[i] <= er_max[j]) ++i;
        else ++j;
        ks = std::max(ks, std::abs(static_cast<double>(i) / sf_max.size() -
                                   static_cast<double>(j) / er_max.size()));
    }
    const double sf_mean = std::accumulate(sf_max.begin(), sf_max.end(), 0.0) / sf_max.size();
    const double er_mean = std::accumulate(er_max.begin(), er_max.end(), 0.0) / er_max.size();
    REQUIRE(ks > 0.1);
    REQUIRE(sf_mean > er_mean);
}

TEST_CASE("topological sort detects cycles") {
    DagGraph g(3);
    g.set_edge(0, 1, true);
    g.set_edge(1, 2, true);
    REQUIRE(g.is_acyclic());
    g.set_edge(2, 0, true);
    REQUIRE_FALSE(g.is_acyclic());
}

TEST_CASE("adjacency csv round trip and validation") {
    DagGraph g(4);
    g.set_edge(0, 2, true);
    g.set_edge(1, 3, true);
    g.set_edge(2, 3, true);
    const std::string path = "adj_roundtrip_test.csv";
    write_adjacency_csv(g, path);
    DagGraph back = read_adjacency_csv(path);
    REQUIRE(back == g);
    std::remove(path.c_str());

    std::stringstream bad("0,1\n2,0\n");
    REQUIRE_THROWS_AS(parse_adjacency_csv(bad, "bad"), ParseError);
    std::stringstream ragged("0,1\n0\n");
    REQUIRE_THROWS_AS(parse_adjacency_csv(ragged, "ragged"), ParseError);
}
