#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <signal.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "camp/bic_search.hpp"
#include "camp/dataset.hpp"
#include "camp/errors.hpp"
#include "camp/estimate.hpp"
#include "camp/graph.hpp"
#include "camp/lingam.hpp"
#include "camp/notears.hpp"
#include "camp/rng.hpp"
#include "camp/scm.hpp"

namespace camp {

/// F1 over ordered node pairs (i, j), i != j, between binary adjacencies.
/// Defined as 0 whenever precision or recall is undefined.
inline double f1_score(const DagGraph& estimated, const DagGraph& truth) {
    if (estimated.node_count() != truth.node_count())
        throw ShapeError("f1_score: node counts differ");
    const size_t v = truth.node_count();
    size_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < v; ++i) {
        for (size_t j = 0; j < v; ++j) {
            if (i == j) continue;
            const bool e = estimated.edge(i, j), t = truth.edge(i, j);
            if (e && t) ++tp;
            else if (e && !t) ++fp;
            else if (!e && t) ++fn;
        }
    }
    if (tp + fp == 0 || tp + fn == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

inline double f1_score(const EstimatedGraph& estimated, const DagGraph& truth) {
    return f1_score(estimated.adjacency, truth);
}

// ---------------------------------------------------------------------------
// Plugin protocol: command template with {input}/{output} placeholders,
// dataset CSV in, V x V 0/1 adjacency CSV out, exit code 0, wall-clock
// timeout.
// ---------------------------------------------------------------------------

struct PluginDescriptor {
    std::string name;
    std::string command;       // e.g. "mymethod --in {input} --out {output}"
    double timeout_sec = 600;  // wall clock
};

namespace detail {

inline std::string substitute_placeholder(std::string s, const std::string& key,
                                          const std::string& value) {
    size_t pos;
    while ((pos = s.find(key)) != std::string::npos) s.replace(pos, key.size(), value);
    return s;
}

}  // namespace detail

inline EstimatedGraph run_plugin(const PluginDescriptor& desc, const Dataset& data,
                                 double timeout_sec) {
    namespace fs = std::filesystem;
    static std::atomic<uint64_t> counter{0};
    const fs::path dir = fs::temp_directory_path() /
                         ("camp_plugin_" + std::to_string(::getpid()) + "_" +
                          std::to_string(counter.fetch_add(1)));
    fs::create_directories(dir);
    const std::string input = (dir / "input.csv").string();
    const std::string output = (dir / "output.csv").string();
    struct Cleanup {
        fs::path dir;
        ~Cleanup() {
            std::error_code ec;
            fs::remove_all(dir, ec);
        }
    } cleanup{dir};

    write_dataset_csv(data, input);
    std::string cmd = detail::substitute_placeholder(desc.command, "{input}", input);
    cmd = detail::substitute_placeholder(cmd, "{output}", output);

    const pid_t pid = ::fork();
    if (pid < 0) throw PluginError(desc.name, "fork failed");
    if (pid == 0) {
        ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }

    const auto deadline = std::chrono::steady_clock::now() +
                          std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(timeout_sec));
    int status = 0;
    while (true) {
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0) throw PluginError(desc.name, "waitpid failed");
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            throw PluginError(desc.name, "timeout after " + std::to_string(timeout_sec) + "s");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw PluginError(desc.name, "nonzero exit status " +
                                         std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));

    DagGraph g(0);
    try {
        std::ifstream in(output, std::ios::binary);
        if (!in) throw ParseError("missing output file");
        // parse_adjacency_csv rejects non-binary entries and self-loops.
        g = parse_adjacency_csv(in, desc.name + " output");
    } catch (const ParseError& e) {
        throw PluginError(desc.name, e.what());
    }
    if (g.node_count() != data.cols())
        throw PluginError(desc.name, "output is " + std::to_string(g.node_count()) + "x" +
                                         std::to_string(g.node_count()) + ", expected V = " +
                                         std::to_string(data.cols()));
    if (!g.is_acyclic()) throw PluginError(desc.name, "output graph is cyclic");
    EstimatedGraph out;
    out.adjacency = g;
    return out;
}

// ---------------------------------------------------------------------------
// Method registry: ordered candidate set with stable indices.
// ---------------------------------------------------------------------------

enum class BuiltinMethod { DirectLingam, NotearsLinear, NotearsMlp, GreedyBic };

inline const char* builtin_name(BuiltinMethod m) {
    switch (m) {
        case BuiltinMethod::DirectLingam: return "direct_lingam";
        case BuiltinMethod::NotearsLinear: return "notears_linear";
        case BuiltinMethod::NotearsMlp: return "notears_mlp";
        case BuiltinMethod::GreedyBic: return "greedy_bic";
    }
    return "?";
}

inline BuiltinMethod builtin_from_name(const std::string& s) {
    if (s == "direct_lingam") return BuiltinMethod::DirectLingam;
    if (s == "notears_linear") return BuiltinMethod::NotearsLinear;
    if (s == "notears_mlp") return BuiltinMethod::NotearsMlp;
    if (s == "greedy_bic") return BuiltinMethod::GreedyBic;
    throw ConfigError("unknown builtin method '" + s + "'");
}

struct MethodDescriptor {
    enum class Kind { Builtin, Plugin };
    std::string name;
    Kind kind = Kind::Builtin;
    BuiltinMethod builtin = BuiltinMethod::DirectLingam;
    PluginDescriptor plugin;
};

/// Ordered list of K candidate methods; indices are stable for the life of
/// a trained model and are recorded in checkpoints as the fingerprint.
class MethodRegistry {
public:
    DirectLingamConfig lingam_config;
    NotearsLinearConfig notears_linear_config;
    NotearsMlpConfig notears_mlp_config;
    GreedyBicConfig greedy_bic_config;

    /// Default desk-scale registry covering the LG / LNG / NL regimes.
    static MethodRegistry default_registry() {
        MethodRegistry r;
        for (BuiltinMethod m : {BuiltinMethod::DirectLingam, BuiltinMethod::NotearsLinear,
                                BuiltinMethod::NotearsMlp, BuiltinMethod::GreedyBic})
            r.add_builtin(m);
        return r;
    }

    void add_builtin(BuiltinMethod m) {
        MethodDescriptor d;
        d.name = builtin_name(m);
        d.kind = MethodDescriptor::Kind::Builtin;
        d.builtin = m;
        methods_.push_back(std::move(d));
    }

    void add_plugin(PluginDescriptor p) {
        MethodDescriptor d;
        d.name = p.name;
        d.kind = MethodDescriptor::Kind::Plugin;
        d.plugin = std::move(p);
        methods_.push_back(std::move(d));
    }

    size_t size() const { return methods_.size(); }
    const MethodDescriptor& at(size_t i) const { return methods_.at(i); }

    std::vector<std::string> fingerprint() const {
        std::vector<std::string> names;
        for (const auto& m : methods_) names.push_back(m.name);
        return names;
    }

    int index_of(const std::string& name) const {
        for (size_t i = 0; i < methods_.size(); ++i)
            if (methods_[i].name == name) return static_cast<int>(i);
        return -1;
    }

    EstimatedGraph run(size_t index, const Dataset& data, uint64_t seed) const {
        const MethodDescriptor& m = methods_.at(index);
        if (m.kind == MethodDescriptor::Kind::Plugin)
            return run_plugin(m.plugin, data, m.plugin.timeout_sec);
        switch (m.builtin) {
            case BuiltinMethod::DirectLingam: return direct_lingam(data, lingam_config);
            case BuiltinMethod::NotearsLinear: return notears_linear(data, notears_linear_config);
            case BuiltinMethod::NotearsMlp: return notears_mlp(data, notears_mlp_config, seed);
            case BuiltinMethod::GreedyBic: return greedy_bic(data, greedy_bic_config);
        }
        throw ConfigError("unreachable builtin kind");
    }

private:
    std::vector<MethodDescriptor> methods_;
};

// ---------------------------------------------------------------------------
// Scorecards.
// ---------------------------------------------------------------------------

/// Per-dataset record of every candidate method's F1 and the argmax label.
struct Scorecard {
    std::string dataset_id;
    std::vector<double> scores;          // per-method F1, in registry order
    int label = 0;                       // smallest index among maximizers
    AssumptionClass assumption = AssumptionClass::LinearGaussian;
    uint64_t seed = 0;
    size_t n = 0, v = 0;
    std::vector<double> wall_clock_sec;  // only populated when timing is enabled
    std::vector<std::string> method_errors;  // "" per method when it succeeded
};

inline int argmax_smallest_index(const std::vector<double>& scores) {
    int best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = static_cast<int>(i);
    return best;
}

/// Runs every registry method on the dataset and scores it against the
/// true graph. Failed methods score 0 (with the error recorded) rather
/// than aborting; if every method fails the dataset is unlabelable.
inline Scorecard label_dataset(const Dataset& data, const DagGraph& truth,
                               const MethodRegistry& registry, uint64_t seed,
                               const std::string& dataset_id = "",
                               AssumptionClass assumption = AssumptionClass::LinearGaussian,
                               bool collect_timing = false) {
    if (registry.size() < 2) throw ConfigError("registry must hold at least 2 methods");
    Scorecard card;
    card.dataset_id = dataset_id;
    card.assumption = assumption;
    card.seed = seed;
    card.n = data.rows();
    card.v = data.cols();
    size_t failures = 0;
    for (size_t i = 0; i < registry.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        double score = 0.0;
        std::string error;
        try {
            const EstimatedGraph est = registry.run(i, data, derive_seed(seed, "method", i, 0));
            score = f1_score(est, truth);
        } catch (const std::exception& e) {
            error = e.what();
            ++failures;
        }
        card.scores.push_back(score);
        card.method_errors.push_back(error);
        if (collect_timing) {
            const auto stop = std::chrono::steady_clock::now();
            card.wall_clock_sec.push_back(std::chrono::duration<double>(stop - start).count());
        }
    }
    if (failures == registry.size())
        throw LabelError("all " + std::to_string(failures) + " methods failed on dataset " +
                         dataset_id);
    card.label = argmax_smallest_index(card.scores);
    return card;
}

// -- JSON-lines persistence ---------------------------------------------------

inline nlohmann::json scorecard_to_json(const Scorecard& c) {
    nlohmann::json j;
    j["assumption"] = assumption_name(c.assumption);
    j["dataset_id"] = c.dataset_id;
    j["label"] = c.label;
    j["n"] = c.n;
    j["scores"] = c.scores;
    j["seed"] = c.seed;
    j["v"] = c.v;
    bool any_error = false;
    for (const auto& e : c.method_errors) any_error = any_error || !e.empty();
    if (any_error) j["errors"] = c.method_errors;
    if (!c.wall_clock_sec.empty()) j["wall_clock_sec"] = c.wall_clock_sec;
    return j;
}

inline Scorecard scorecard_from_json(const nlohmann::json& j) {
    Scorecard c;
    c.assumption = assumption_from_name(j.at("assumption").get<std::string>());
    c.dataset_id = j.at("dataset_id").get<std::string>();
    c.label = j.at("label").get<int>();
    c.n = j.at("n").get<size_t>();
    c.scores = j.at("scores").get<std::vector<double>>();
    c.seed = j.at("seed").get<uint64_t>();
    c.v = j.at("v").get<size_t>();
    if (j.contains("errors")) c.method_errors = j.at("errors").get<std::vector<std::string>>();
    if (j.contains("wall_clock_sec"))
        c.wall_clock_sec = j.at("wall_clock_sec").get<std::vector<double>>();
    return c;
}

inline void write_scorecards_jsonl(const std::vector<Scorecard>& cards, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open for write: " + path);
    for (const auto& c : cards) out << scorecard_to_json(c).dump() << '\n';
}

inline std::vector<Scorecard> read_scorecards_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open: " + path);
    std::vector<Scorecard> cards;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            cards.push_back(scorecard_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cards;
}

}  // namespace camp
