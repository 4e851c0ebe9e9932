#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "camp/autodiff.hpp"
#include "camp/dataset.hpp"
#include "camp/errors.hpp"
#include "camp/rng.hpp"
#include "camp/tensor.hpp"

namespace camp {

/// Architecture knobs for the dataset encoder and decoder heads.
struct EncoderConfig {
    size_t layers = 4;       // L
    size_t embed_dim = 32;   // Z
    size_t heads = 4;        // H
    size_t ffn_hidden = 64;  // FFN width inside attention blocks (2Z)
    size_t head_hidden = 32; // decoder FFN hidden width
    double dropout = 0.0;

    void validate() const {
        if (layers < 1) throw ConfigError("encoder.layers must be >= 1");
        if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
            throw ConfigError("encoder.embed_dim must be a positive multiple of heads");
        if (ffn_hidden == 0 || head_hidden == 0) throw ConfigError("encoder FFN widths must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder.dropout must be in [0, 1)");
    }

    bool operator==(const EncoderConfig& o) const {
        return layers == o.layers && embed_dim == o.embed_dim && heads == o.heads &&
               ffn_hidden == o.ffn_hidden && head_hidden == o.head_hidden && dropout == o.dropout;
    }
};

/// Named parameters in a fixed, documented order: the order is the
/// checkpoint tensor-block order and the optimizer slot order.
class ParamSet {
public:
    void add(std::string name, Tensor t) { items_.emplace_back(std::move(name), std::move(t)); }

    size_t size() const { return items_.size(); }
    const std::string& name(size_t i) const { return items_[i].first; }
    Tensor& tensor(size_t i) { return items_[i].second; }
    const Tensor& tensor(size_t i) const { return items_[i].second; }

    Tensor& at(const std::string& name) {
        for (auto& [n, t] : items_)
            if (n == name) return t;
        throw ConfigError("no parameter named '" + name + "'");
    }

    const Tensor& at(const std::string& name) const {
        for (const auto& [n, t] : items_)
            if (n == name) return t;
        throw ConfigError("no parameter named '" + name + "'");
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for (auto& [n, t] : items_) out.push_back(&t);
        return out;
    }

    size_t scalar_count() const {
        size_t total = 0;
        for (const auto& [n, t] : items_) total += t.size();
        return total;
    }

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

enum class HeadKind { Method, Assumption };

/// Permutation-invariant dataset encoder (alternating axis attention with
/// a dual-axis max-pool) plus one FFN decoder head. Parameters are plain
/// tensors; every forward pass binds them as leaves on a caller-owned tape.
struct EncoderModel {
    EncoderConfig config;
    size_t head_outputs = 0;
    ParamSet params;

    static EncoderModel init(const EncoderConfig& cfg, size_t head_outputs, uint64_t seed) {
        cfg.validate();
        if (head_outputs < 2) throw ConfigError("head must have at least 2 outputs");
        EncoderModel m;
        m.config = cfg;
        m.head_outputs = head_outputs;
        const size_t z = cfg.embed_dim, f = cfg.ffn_hidden, hh = cfg.head_hidden;

        m.params.add("embed.w", Tensor({z}));
        m.params.add("embed.b", Tensor({z}));
        for (size_t l = 0; l < cfg.layers; ++l) {
            for (const char* axis : {"var", "sample"}) {
                const std::string p = "layer" + std::to_string(l) + "." + axis + ".";
                m.params.add(p + "ln1.g", Tensor::full({z}, 1.0));
                m.params.add(p + "ln1.b", Tensor({z}));
                m.params.add(p + "wq", Tensor({z, z}));
                m.params.add(p + "bq", Tensor({z}));
                m.params.add(p + "wk", Tensor({z, z}));
                m.params.add(p + "bk", Tensor({z}));
                m.params.add(p + "wv", Tensor({z, z}));
                m.params.add(p + "bv", Tensor({z}));
                m.params.add(p + "wo", Tensor({z, z}));
                m.params.add(p + "bo", Tensor({z}));
                m.params.add(p + "ln2.g", Tensor::full({z}, 1.0));
                m.params.add(p + "ln2.b", Tensor({z}));
                m.params.add(p + "ffn.w1", Tensor({z, f}));
                m.params.add(p + "ffn.b1", Tensor({f}));
                m.params.add(p + "ffn.w2", Tensor({f, z}));
                m.params.add(p + "ffn.b2", Tensor({z}));
            }
        }
        m.params.add("head.w1", Tensor({z, hh}));
        m.params.add("head.b1", Tensor({hh}));
        m.params.add("head.w2", Tensor({hh, hh}));
        m.params.add("head.b2", Tensor({hh}));
        m.params.add("head.w3", Tensor({hh, head_outputs}));
        m.params.add("head.b3", Tensor({head_outputs}));

        m.randomize_weights(seed, "");
        return m;
    }

    /// Xavier-uniform init for weight matrices; the embed vector is treated
    /// as fan-in 1. `scope` restricts re-initialization (used by swap_head).
    void randomize_weights(uint64_t seed, const std::string& scope) {
        for (size_t i = 0; i < params.size(); ++i) {
            const std::string& name = params.name(i);
            if (!scope.empty() && name.rfind(scope, 0) != 0) continue;
            Tensor& t = params.tensor(i);
            Rng rng(derive_seed(seed, "init", i));
            if (t.ndim() == 2) {
                const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
                for (size_t k = 0; k < t.size(); ++k) t[k] = rng.uniform(-bound, bound);
            } else if (name == "embed.w") {
                const double bound = std::sqrt(6.0 / (1.0 + static_cast<double>(t.size())));
                for (size_t k = 0; k < t.size(); ++k) t[k] = rng.uniform(-bound, bound);
            }
            // biases stay zero, layer-norm gains stay one
        }
    }
};

/// Retains the encoder bit-exact and freshly initializes a head of the
/// given width from `seed`.
inline EncoderModel swap_head(const EncoderModel& src, size_t new_head_outputs, uint64_t seed) {
    if (new_head_outputs < 2) throw ConfigError("head must have at least 2 outputs");
    EncoderModel out = EncoderModel::init(src.config, new_head_outputs, 0);
    for (size_t i = 0; i < out.params.size(); ++i) {
        const std::string& name = out.params.name(i);
        if (name.rfind("head.", 0) == 0) continue;
        out.params.tensor(i) = src.params.at(name);
    }
    out.randomize_weights(seed, "head.");
    return out;
}

/// Per-head output: raw logits and the softmax probabilities.
struct HeadOutput {
    std::vector<double> logits;
    std::vector<double> probabilities;
};

/// One forward-pass binding of an EncoderModel onto a tape. Training mode
/// enables dropout (when configured) and gradient tracking.
class BoundEncoder {
public:
    BoundEncoder(Tape& tape, const EncoderModel& model, bool training, Rng* dropout_rng = nullptr)
        : tape_(tape), model_(model), training_(training), dropout_rng_(dropout_rng) {
        for (size_t i = 0; i < model.params.size(); ++i)
            leaves_.push_back(tape_.leaf(model.params.tensor(i), training));
        if (training_ && model_.config.dropout > 0.0 && dropout_rng_ == nullptr)
            throw ConfigError("dropout requires an rng in training mode");
    }

    /// embed_scalars -> L axis-attention layers -> max over both axes.
    /// Exactly invariant to row and column permutations by construction
    /// (attention is equivariant, the final max-pool commutes with any
    /// reordering of positions).
    Var encode(const Dataset& data) {
        if (!data.all_finite()) throw DomainError("encode: non-finite input");
        const size_t n = data.rows(), v = data.cols();
        const Dataset z = zscore_columns(data);

        Var h = tape_.scalar_embed(z, leaf("embed.w"), leaf("embed.b"));
        for (size_t l = 0; l < model_.config.layers; ++l) {
            const std::string lp = "layer" + std::to_string(l) + ".";
            // attend across the V axis, n as batch
            h = attention_block(h, lp + "var.", n, v);
            // attend across the n axis, V as batch
            h = tape_.swap_axes(h, n, v);
            h = attention_block(h, lp + "sample.", v, n);
            h = tape_.swap_axes(h, v, n);
        }
        return tape_.column_max(h);
    }

    /// 2-hidden-layer ReLU FFN head on the embedding; returns (1, K) logits.
    Var decode_logits(Var embedding) {
        const size_t z = model_.config.embed_dim;
        if (embedding->value.size() != z) throw ShapeError("decode: embedding length != Z");
        Var e = tape_.reshape(embedding, {1, z});
        Var h1 = tape_.relu(tape_.affine(e, leaf("head.w1"), leaf("head.b1")));
        Var h2 = tape_.relu(tape_.affine(h1, leaf("head.w2"), leaf("head.b2")));
        return tape_.affine(h2, leaf("head.w3"), leaf("head.b3"));
    }

    Var probabilities(Var logits) { return tape_.softmax_rows(logits); }

    Var leaf(const std::string& name) {
        for (size_t i = 0; i < model_.params.size(); ++i)
            if (model_.params.name(i) == name) return leaves_[i];
        throw ConfigError("no parameter named '" + name + "'");
    }

    const std::vector<Var>& leaves() const { return leaves_; }

    /// Gradients in parameter order after backward().
    std::vector<Tensor> collect_gradients() {
        std::vector<Tensor> out;
        for (Var l : leaves_) {
            l->ensure_grad();
            out.push_back(l->grad);
        }
        return out;
    }

private:
    Var attention_block(Var h, const std::string& p, size_t batch, size_t seq) {
        Var ln = tape_.layer_norm(h, leaf(p + "ln1.g"), leaf(p + "ln1.b"));
        Var q = tape_.affine(ln, leaf(p + "wq"), leaf(p + "bq"));
        Var k = tape_.affine(ln, leaf(p + "wk"), leaf(p + "bk"));
        Var v = tape_.affine(ln, leaf(p + "wv"), leaf(p + "bv"));
        Var att = tape_.attention(q, k, v, batch, seq, model_.config.heads);
        Var proj = tape_.affine(att, leaf(p + "wo"), leaf(p + "bo"));
        proj = maybe_dropout(proj);
        h = tape_.add(h, proj);
        Var ln2 = tape_.layer_norm(h, leaf(p + "ln2.g"), leaf(p + "ln2.b"));
        Var f = tape_.affine(tape_.relu(tape_.affine(ln2, leaf(p + "ffn.w1"), leaf(p + "ffn.b1"))),
                             leaf(p + "ffn.w2"), leaf(p + "ffn.b2"));
        f = maybe_dropout(f);
        return tape_.add(h, f);
    }

    Var maybe_dropout(Var x) {
        if (!training_ || model_.config.dropout <= 0.0) return x;
        return tape_.dropout(x, model_.config.dropout, *dropout_rng_);
    }

    Tape& tape_;
    const EncoderModel& model_;
    bool training_;
    Rng* dropout_rng_;
    std::vector<Var> leaves_;
};

/// Single inference pass: embedding, logits and probabilities.
inline HeadOutput forward_head(const EncoderModel& model, const Dataset& data) {
    Tape tape;
    BoundEncoder bound(tape, model, /*training=*/false);
    Var emb = bound.encode(data);
    Var logits = bound.decode_logits(emb);
    Var probs = bound.probabilities(logits);
    HeadOutput out;
    for (size_t i = 0; i < model.head_outputs; ++i) {
        out.logits.push_back(logits->value[i]);
        out.probabilities.push_back(probs->value[i]);
    }
    return out;
}

inline std::vector<double> encode_embedding(const EncoderModel& model, const Dataset& data) {
    Tape tape;
    BoundEncoder bound(tape, model, /*training=*/false);
    Var emb = bound.encode(data);
    return std::vector<double>(emb->value.data(), emb->value.data() + emb->value.size());
}

}  // namespace camp
