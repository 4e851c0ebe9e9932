#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "camp/encoder.hpp"

using namespace camp;

namespace {

Dataset random_dataset(size_t n, size_t v, Rng& rng) {
    Dataset x({n, v});
    for (size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    return x;
}

Dataset permute_rows(const Dataset& x, const std::vector<size_t>& perm) {
    Dataset out({x.rows(), x.cols()});
    for (size_t i = 0; i < x.rows(); ++i)
        for (size_t j = 0; j < x.cols(); ++j) out(perm[i], j) = x(i, j);
    return out;
}

Dataset permute_cols(const Dataset& x, const std::vector<size_t>& perm) {
    Dataset out({x.rows(), x.cols()});
    for (size_t i = 0; i < x.rows(); ++i)
        for (size_t j = 0; j < x.cols(); ++j) out(i, perm[j]) = x(i, j);
    return out;
}

std::vector<size_t> random_perm(size_t n, Rng& rng) {
    std::vector<size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (size_t i = n; i-- > 1;)
        std::swap(p[i], p[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);
    return p;
}

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.layers = 1;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.ffn_hidden = 16;
    cfg.head_hidden = 8;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    EncoderConfig bad = tiny_config();
    bad.embed_dim = 10;
    bad.heads = 4;  // 10 % 4 != 0
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config();
    bad.layers = 0;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("embedding is invariant to row and column permutations") {
    Rng rng(404);
    EncoderModel model = EncoderModel::init(tiny_config(), 4, 11);
    for (int rep = 0; rep < 12; ++rep) {
        const size_t n = 2 + static_cast<size_t>(rng.uniform_int(0, 30));
        const size_t v = 2 + static_cast<size_t>(rng.uniform_int(0, 6));
        Dataset x = random_dataset(n, v, rng);
        auto base = encode_embedding(model, x);
        auto rowp = encode_embedding(model, permute_rows(x, random_perm(n, rng)));
        auto colp = encode_embedding(model, permute_cols(x, random_perm(v, rng)));
        for (size_t i = 0; i < base.size(); ++i) {
            REQUIRE(std::abs(base[i] - rowp[i]) <= 1e-9);
            REQUIRE(std::abs(base[i] - colp[i]) <= 1e-9);
        }
    }
}

TEST_CASE("embedding length follows the configured Z") {
    EncoderConfig paper;  // defaults: L=4, Z=32
    EncoderModel model = EncoderModel::init(paper, 4, 3);
    Rng rng(2);
    auto emb = encode_embedding(model, random_dataset(20, 5, rng));
    REQUIRE(emb.size() == 32);
}

TEST_CASE("encoder handles any shape without re-parameterization") {
    EncoderModel model = EncoderModel::init(tiny_config(), 4, 7);
    Rng rng(3);
    for (auto [n, v] : std::vector<std::pair<size_t, size_t>>{{1, 2}, {2, 2}, {50, 12}, {7, 3}}) {
        auto emb = encode_embedding(model, random_dataset(n, v, rng));
        REQUIRE(emb.size() == tiny_config().embed_dim);
        for (double e : emb) REQUIRE(std::isfinite(e));
    }
}

TEST_CASE("attention layer handles the 1x1 degenerate input") {
    Tape tape;
    Rng rng(4);
    Tensor q({1, 4}), k({1, 4}), v({1, 4});
    for (size_t i = 0; i < 4; ++i) {
        q[i] = rng.normal();
        k[i] = rng.normal();
        v[i] = rng.normal();
    }
    Var att = tape.attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), 1, 1, 2);
    // softmax over a single position is 1, so attention passes the value through
    for (size_t i = 0; i < 4; ++i) REQUIRE(att->value[i] == Catch::Approx(v[i]).margin(1e-15));
}

TEST_CASE("attention layer is equivariant to sequence permutation") {
    Rng rng(5);
    const size_t batch = 2, seq = 5, z = 8, heads = 2;
    Tensor q({batch * seq, z}), k({batch * seq, z}), vv({batch * seq, z});
    for (size_t i = 0; i < q.size(); ++i) {
        q[i] = rng.normal();
        k[i] = rng.normal();
        vv[i] = rng.normal();
    }
    auto perm = random_perm(seq, rng);
    auto permute_seq = [&](const Tensor& t) {
        Tensor out({batch * seq, z});
        for (size_t b = 0; b < batch; ++b)
            for (size_t s = 0; s < seq; ++s)
                for (size_t c = 0; c < z; ++c) out((b * seq + perm[s]), c) = t(b * seq + s, c);
        return out;
    };
    Tape t1;
    Var a1 = t1.attention(t1.leaf(q), t1.leaf(k), t1.leaf(vv), batch, seq, heads);
    Tensor permuted_out = permute_seq(a1->value);
    Tape t2;
    Var a2 = t2.attention(t2.leaf(permute_seq(q)), t2.leaf(permute_seq(k)),
                          t2.leaf(permute_seq(vv)), batch, seq, heads);
    REQUIRE(max_abs_diff(permuted_out, a2->value) < 1e-10);
}

TEST_CASE("scalar embed carries the bias for zero datasets") {
    Tape tape;
    Tensor w({3}, {1.0, 2.0, 3.0});
    Tensor b({3}, {0.5, -0.5, 0.25});
    Var h = tape.scalar_embed(Tensor::zeros({4}), tape.leaf(w), tape.leaf(b));
    for (size_t r = 0; r < 4; ++r)
        for (size_t c = 0; c < 3; ++c) REQUIRE(h->value(r, c) == b[c]);
}

TEST_CASE("affinely rescaled columns give the same embedding") {
    EncoderModel model = EncoderModel::init(tiny_config(), 4, 13);
    Rng rng(6);
    Dataset x = random_dataset(40, 4, rng);
    Dataset scaled({40, 4});
    for (size_t i = 0; i < 40; ++i)
        for (size_t j = 0; j < 4; ++j) scaled(i, j) = 3.25 * x(i, j) + 7.0 * (j + 1);
    auto a = encode_embedding(model, x);
    auto b = encode_embedding(model, scaled);
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= 1e-9);
}

TEST_CASE("decode head output shape and softmax properties") {
    EncoderModel model = EncoderModel::init(tiny_config(), 4, 17);
    Rng rng(7);
    HeadOutput out = forward_head(model, random_dataset(15, 3, rng));
    REQUIRE(out.probabilities.size() == 4);
    double total = 0.0;
    for (double p : out.probabilities) {
        REQUIRE(p >= 0.0);
        total += p;
    }
    REQUIRE(std::abs(total - 1.0) <= 1e-9);

    // shift invariance of softmax
    Tape tape;
    Tensor logits({1, 4}, {0.3, -1.2, 2.0, 0.0});
    Tensor shifted({1, 4}, {0.3 + 5.0, -1.2 + 5.0, 2.0 + 5.0, 0.0 + 5.0});
    Var p1 = tape.softmax_rows(tape.constant(logits));
    Var p2 = tape.softmax_rows(tape.constant(shifted));
    for (size_t i = 0; i < 4; ++i)
        REQUIRE(std::abs(p1->value[i] - p2->value[i]) <= 1e-12);
}

TEST_CASE("non-finite input rejected") {
    EncoderModel model = EncoderModel::init(tiny_config(), 4, 19);
    Dataset bad({3, 2});
    bad(1, 1) = std::nan("");
    Tape tape;
    BoundEncoder bound(tape, model, false);
    REQUIRE_THROWS_AS(bound.encode(bad), DomainError);
}

TEST_CASE("swap_head keeps the encoder bit-exact") {
    EncoderModel model = EncoderModel::init(tiny_config(), 4, 23);
    Rng rng(8);
    Dataset x = random_dataset(25, 4, rng);
    auto before = encode_embedding(model, x);

    EncoderModel swapped = swap_head(model, 3, 99);
    REQUIRE(swapped.head_outputs == 3);
    for (size_t i = 0; i < model.params.size(); ++i) {
        const std::string& name = model.params.name(i);
        if (name.rfind("head.", 0) == 0) continue;
        REQUIRE(max_abs_diff(model.params.tensor(i), swapped.params.at(name)) == 0.0);
    }
    auto after = encode_embedding(swapped, x);
    for (size_t i = 0; i < before.size(); ++i) REQUIRE(before[i] == after[i]);

    // same seed -> identical head init
    EncoderModel swapped2 = swap_head(model, 3, 99);
    for (size_t i = 0; i < swapped.params.size(); ++i)
        REQUIRE(max_abs_diff(swapped.params.tensor(i), swapped2.params.tensor(i)) == 0.0);

    // different seed -> different head
    EncoderModel swapped3 = swap_head(model, 3, 100);
    REQUIRE(max_abs_diff(swapped.params.at("head.w1"), swapped3.params.at("head.w1")) > 0.0);
}

TEST_CASE("full forward gradients match finite differences on a tiny config") {
    // L=1, Z=8, n=6, V=3 with a cross-entropy head loss.
    EncoderConfig cfg = tiny_config();
    EncoderModel model = EncoderModel::init(cfg, 3, 31);
    Rng rng(9);
    Dataset x = random_dataset(6, 3, rng);
    Tensor onehot({1, 3}, {0, 1, 0});

    auto loss_value = [&](const EncoderModel& m) {
        Tape tape;
        BoundEncoder bound(tape, m, false);
        Var emb = bound.encode(x);
        Var probs = bound.probabilities(bound.decode_logits(emb));
        return tape.cross_entropy(probs, onehot)->value[0];
    };

    Tape tape;
    BoundEncoder bound(tape, model, true);
    Var emb = bound.encode(x);
    Var probs = bound.probabilities(bound.decode_logits(emb));
    Var loss = tape.cross_entropy(probs, onehot);
    tape.backward(loss);
    auto grads = bound.collect_gradients();

    const double h = 1e-5;
    double worst = 0.0;
    EncoderModel probe = model;
    for (size_t pi = 0; pi < probe.params.size(); ++pi) {
        Tensor& t = probe.params.tensor(pi);
        // probe a deterministic subset of each tensor to keep runtime low
        const size_t stride = std::max<size_t>(1, t.size() / 5);
        for (size_t k = 0; k < t.size(); k += stride) {
            const double orig = t[k];
            t[k] = orig + h;
            const double up = loss_value(probe);
            t[k] = orig - h;
            const double dn = loss_value(probe);
            t[k] = orig;
            const double fd = (up - dn) / (2.0 * h);
            worst = std::max(worst, std::abs(grads[pi][k] - fd) / std::max(std::abs(fd), 1e-3));
        }
    }
    REQUIRE(worst < 1e-4);
}

TEST_CASE("prediction is deterministic across identical forward passes") {
    EncoderModel model = EncoderModel::init(tiny_config(), 4, 37);
    Rng rng(10);
    Dataset x = random_dataset(30, 5, rng);
    HeadOutput a = forward_head(model, x);
    HeadOutput b = forward_head(model, x);
    REQUIRE(a.probabilities == b.probabilities);
    REQUIRE(a.logits == b.logits);
}
