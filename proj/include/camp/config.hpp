#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "camp/discovery.hpp"
#include "camp/encoder.hpp"
#include "camp/errors.hpp"
#include "camp/pipeline.hpp"
#include "camp/scm.hpp"

namespace camp {

struct EvalConfig {
    size_t test_count = 300;
    size_t random_draws = 1000;
    size_t repeats = 10;  // external-benchmark method repeats
    std::vector<size_t> ood_nodes = {14, 18, 24};
    size_t ood_count = 100;
    size_t scalefree_attachment = 2;
    size_t scalefree_count = 100;
    std::vector<size_t> budgets = {250, 500, 1000};
};

struct RunSection {
    std::string out_dir = "out";
    uint64_t master_seed = 7;
    size_t workers = 2;
    bool timings = false;  // opt-in wall-clock capture in scorecards
};

/// The whole experiment configuration: one JSON file with a section per
/// module. Unknown keys are hard errors so typos cannot silently corrupt
/// an experiment.
struct RunConfig {
    ScmGenConfig scmgen;
    EncoderConfig encoder;
    TrainConfig train;
    EvalConfig eval;
    RunSection run;
    std::vector<std::string> registry_builtins = {"direct_lingam", "notears_linear",
                                                  "notears_mlp", "greedy_bic"};
    std::vector<PluginDescriptor> registry_plugins;

    MethodRegistry build_registry() const {
        MethodRegistry reg;
        for (const std::string& name : registry_builtins) reg.add_builtin(builtin_from_name(name));
        for (const PluginDescriptor& p : registry_plugins) reg.add_plugin(p);
        if (reg.size() < 2) throw ConfigError("registry: need at least 2 methods");
        return reg;
    }

    void validate() const {
        scmgen.validate();
        encoder.validate();
        train.validate();
        build_registry();
        if (eval.test_count == 0) throw ConfigError("eval.test_count must be positive");
        if (eval.repeats == 0) throw ConfigError("eval.repeats must be positive");
        if (run.workers == 0) throw ConfigError("run.workers must be positive");
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                                const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key()))
            throw ConfigError("unknown key '" + (path.empty() ? it.key() : path + "." + it.key()) +
                              "'");
    }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    detail::reject_unknown_keys(j, {"scmgen", "registry", "encoder", "train", "eval", "run"}, "");
    RunConfig cfg;

    if (j.contains("scmgen")) {
        const auto& s = j.at("scmgen");
        detail::reject_unknown_keys(s,
                                    {"v_min", "v_max", "n_min", "n_max", "n_step", "edge_p_min",
                                     "edge_p_max", "mixture"},
                                    "scmgen");
        detail::read_field(s, "v_min", cfg.scmgen.v_min);
        detail::read_field(s, "v_max", cfg.scmgen.v_max);
        detail::read_field(s, "n_min", cfg.scmgen.n_min);
        detail::read_field(s, "n_max", cfg.scmgen.n_max);
        detail::read_field(s, "n_step", cfg.scmgen.n_step);
        detail::read_field(s, "edge_p_min", cfg.scmgen.edge_p_min);
        detail::read_field(s, "edge_p_max", cfg.scmgen.edge_p_max);
        if (s.contains("mixture")) {
            const auto& m = s.at("mixture");
            detail::reject_unknown_keys(
                m, {"linear_non_gaussian", "linear_gaussian", "nonlinear"}, "scmgen.mixture");
            detail::read_field(m, "linear_non_gaussian", cfg.scmgen.mix_linear_non_gaussian);
            detail::read_field(m, "linear_gaussian", cfg.scmgen.mix_linear_gaussian);
            detail::read_field(m, "nonlinear", cfg.scmgen.mix_nonlinear);
        }
    }

    if (j.contains("registry")) {
        const auto& r = j.at("registry");
        detail::reject_unknown_keys(r, {"builtins", "plugins"}, "registry");
        detail::read_field(r, "builtins", cfg.registry_builtins);
        if (r.contains("plugins")) {
            for (const auto& p : r.at("plugins")) {
                detail::reject_unknown_keys(p, {"name", "command", "timeout_sec"},
                                            "registry.plugins[]");
                PluginDescriptor desc;
                if (!p.contains("name") || !p.contains("command"))
                    throw ConfigError("registry.plugins[]: 'name' and 'command' are required");
                desc.name = p.at("name").get<std::string>();
                desc.command = p.at("command").get<std::string>();
                detail::read_field(p, "timeout_sec", desc.timeout_sec);
                cfg.registry_plugins.push_back(std::move(desc));
            }
        }
    }

    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        detail::reject_unknown_keys(
            e, {"layers", "embed_dim", "heads", "ffn_hidden", "head_hidden", "dropout"},
            "encoder");
        detail::read_field(e, "layers", cfg.encoder.layers);
        detail::read_field(e, "embed_dim", cfg.encoder.embed_dim);
        detail::read_field(e, "heads", cfg.encoder.heads);
        detail::read_field(e, "ffn_hidden", cfg.encoder.ffn_hidden);
        detail::read_field(e, "head_hidden", cfg.encoder.head_hidden);
        detail::read_field(e, "dropout", cfg.encoder.dropout);
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::reject_unknown_keys(
            t,
            {"labeled_count", "pretrain_count", "batch_size", "learning_rate", "weight_decay",
             "cosine_decay", "max_steps", "eval_every", "patience", "val_fraction"},
            "train");
        detail::read_field(t, "labeled_count", cfg.train.labeled_count);
        detail::read_field(t, "pretrain_count", cfg.train.pretrain_count);
        detail::read_field(t, "batch_size", cfg.train.batch_size);
        detail::read_field(t, "learning_rate", cfg.train.learning_rate);
        detail::read_field(t, "weight_decay", cfg.train.weight_decay);
        detail::read_field(t, "cosine_decay", cfg.train.cosine_decay);
        detail::read_field(t, "max_steps", cfg.train.max_steps);
        detail::read_field(t, "eval_every", cfg.train.eval_every);
        detail::read_field(t, "patience", cfg.train.patience);
        detail::read_field(t, "val_fraction", cfg.train.val_fraction);
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown_keys(e,
                                    {"test_count", "random_draws", "repeats", "ood_nodes",
                                     "ood_count", "scalefree_attachment", "scalefree_count",
                                     "budgets"},
                                    "eval");
        detail::read_field(e, "test_count", cfg.eval.test_count);
        detail::read_field(e, "random_draws", cfg.eval.random_draws);
        detail::read_field(e, "repeats", cfg.eval.repeats);
        detail::read_field(e, "ood_nodes", cfg.eval.ood_nodes);
        detail::read_field(e, "ood_count", cfg.eval.ood_count);
        detail::read_field(e, "scalefree_attachment", cfg.eval.scalefree_attachment);
        detail::read_field(e, "scalefree_count", cfg.eval.scalefree_count);
        detail::read_field(e, "budgets", cfg.eval.budgets);
    }

    if (j.contains("run")) {
        const auto& r = j.at("run");
        detail::reject_unknown_keys(r, {"out_dir", "master_seed", "workers", "timings"}, "run");
        detail::read_field(r, "out_dir", cfg.run.out_dir);
        detail::read_field(r, "master_seed", cfg.run.master_seed);
        detail::read_field(r, "workers", cfg.run.workers);
        detail::read_field(r, "timings", cfg.run.timings);
    }

    cfg.train.master_seed = cfg.run.master_seed;
    cfg.train.workers = cfg.run.workers;
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_run_config(j);
}

}  // namespace camp
