#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <random>
#include <type_traits>
#include <span>
#include <vector>

#include "camp/errors.hpp"
#include "camp/rng.hpp"
#include "camp/tensor.hpp"

namespace camp {

/// One node of the reverse-mode tape: a value, a lazily allocated gradient
/// of the same shape, parent links, and the backward rule that pushes this
/// node's gradient into its parents.
struct AdNode {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    bool is_leaf = false;
    std::vector<AdNode*> parents;
    std::function<void(AdNode&)> backward_fn;

    void ensure_grad() {
        if (!grad_ready) {
            grad = Tensor::zeros(value.shape());
            grad_ready = true;
        }
    }

    void accumulate(const Tensor& g) {
        ensure_grad();
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
};

using Var = AdNode*;

namespace detail {

/// Workspace for one (slice, head) of multi-head attention. Q/K/V rows are
/// packed contiguous, and scores live in row tiles sized to stay in cache,
/// so the full seq x seq matrix is never materialized in memory. The head
/// dimension is a template parameter for the common sizes so the inner
/// dot/axpy loops unroll; StaticHd == 0 is the runtime fallback.
template <size_t StaticHd>
class AttentionScratch {
public:
    AttentionScratch(size_t seq, size_t hd)
        : seq_(seq),
          hd_(hd),
          tile_(std::min<size_t>(64, seq)),
          qp_(seq * hd),
          kp_(seq * hd),
          vp_(seq * hd),
          op_(seq * hd),
          gop_(seq * hd),
          gq_(seq * hd),
          gk_(seq * hd),
          gv_(seq * hd),
          s_(tile_ * seq),
          ds_(tile_ * seq) {}

    // Compile-time head dim when instantiated for a common size.
    size_t hdim() const { return StaticHd != 0 ? StaticHd : hd_; }

    void pack(const double* q, const double* k, const double* v, size_t stride) {
        for (size_t i = 0; i < seq_; ++i)
            for (size_t d = 0; d < hdim(); ++d) {
                qp_[i * hdim() + d] = q[i * stride + d];
                kp_[i * hdim() + d] = k[i * stride + d];
                vp_[i * hdim() + d] = v[i * stride + d];
            }
    }

    void pack_grad_out(const double* go, size_t stride) {
        for (size_t i = 0; i < seq_; ++i)
            for (size_t d = 0; d < hdim(); ++d) gop_[i * hdim() + d] = go[i * stride + d];
        std::fill(gq_.begin(), gq_.end(), 0.0);
        std::fill(gk_.begin(), gk_.end(), 0.0);
        std::fill(gv_.begin(), gv_.end(), 0.0);
    }

    void forward(double scale) {
        for (size_t r0 = 0; r0 < seq_; r0 += tile_) {
            const size_t rows = std::min(tile_, seq_ - r0);
            scores_tile(r0, rows, scale, s_.data());
            for (size_t i = 0; i < rows; ++i) {
                const double* srow = s_.data() + i * seq_;
                double* orow = op_.data() + (r0 + i) * hdim();
                std::fill_n(orow, hdim(), 0.0);
                for (size_t j = 0; j < seq_; ++j) {
                    const double c = srow[j];
                    const double* vrow = vp_.data() + j * hdim();
                    for (size_t d = 0; d < hdim(); ++d) orow[d] += c * vrow[d];
                }
            }
        }
    }

    void backward(double scale) {
        for (size_t r0 = 0; r0 < seq_; r0 += tile_) {
            const size_t rows = std::min(tile_, seq_ - r0);
            scores_tile(r0, rows, scale, s_.data());
            for (size_t i = 0; i < rows; ++i) {
                const double* srow = s_.data() + i * seq_;
                const double* gorow = gop_.data() + (r0 + i) * hdim();
                double* dsrow = ds_.data() + i * seq_;
                // gV += A^T dO (rank-1 per row); dA = dO V^T
                for (size_t j = 0; j < seq_; ++j) {
                    const double c = srow[j];
                    const double* vrow = vp_.data() + j * hdim();
                    double* gvrow = gv_.data() + j * hdim();
                    double dot = 0.0;
                    for (size_t d = 0; d < hdim(); ++d) {
                        gvrow[d] += c * gorow[d];
                        dot += gorow[d] * vrow[d];
                    }
                    dsrow[j] = dot;
                }
                // dS = A o (dA - rowsum(dA o A))
                double mix = 0.0;
                for (size_t j = 0; j < seq_; ++j) mix += srow[j] * dsrow[j];
                for (size_t j = 0; j < seq_; ++j) dsrow[j] = srow[j] * (dsrow[j] - mix);
                // gQ_row += scale * dS K; gK += scale * dS^T Q_row
                const double* qrow = qp_.data() + (r0 + i) * hdim();
                double* gqrow = gq_.data() + (r0 + i) * hdim();
                for (size_t j = 0; j < seq_; ++j) {
                    const double c = dsrow[j] * scale;
                    const double* krow = kp_.data() + j * hdim();
                    double* gkrow = gk_.data() + j * hdim();
                    for (size_t d = 0; d < hdim(); ++d) {
                        gqrow[d] += c * krow[d];
                        gkrow[d] += c * qrow[d];
                    }
                }
            }
        }
    }

    void unpack_output(double* dst, size_t stride) const {
        for (size_t i = 0; i < seq_; ++i)
            for (size_t d = 0; d < hdim(); ++d) dst[i * stride + d] = op_[i * hdim() + d];
    }

    void unpack_grads(double* gq, double* gk, double* gv, size_t stride) const {
        for (size_t i = 0; i < seq_; ++i)
            for (size_t d = 0; d < hdim(); ++d) {
                gq[i * stride + d] += gq_[i * hdim() + d];
                gk[i * stride + d] += gk_[i * hdim() + d];
                gv[i * stride + d] += gv_[i * hdim() + d];
            }
    }

private:
    /// Scaled scores for rows [r0, r0+rows), softmaxed in place.
    void scores_tile(size_t r0, size_t rows, double scale, double* s) {
        for (size_t i = 0; i < rows; ++i) {
            const double* qrow = qp_.data() + (r0 + i) * hdim();
            double* srow = s + i * seq_;
            double mx = -std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < seq_; ++j) {
                const double* krow = kp_.data() + j * hdim();
                double dot = 0.0;
                for (size_t d = 0; d < hdim(); ++d) dot += qrow[d] * krow[d];
                dot *= scale;
                srow[j] = dot;
                mx = std::max(mx, dot);
            }
            for (size_t j = 0; j < seq_; ++j) srow[j] = std::max(srow[j] - mx, -700.0);
            for (size_t j = 0; j < seq_; ++j) srow[j] = fast_exp_core(srow[j]);
            double sum = 0.0;
            for (size_t j = 0; j < seq_; ++j) sum += srow[j];
            const double inv = 1.0 / sum;
            for (size_t j = 0; j < seq_; ++j) srow[j] *= inv;
        }
    }

    size_t seq_, hd_, tile_;
    std::vector<double> qp_, kp_, vp_, op_, gop_, gq_, gk_, gv_, s_, ds_;
};

/// Instantiates the attention kernels for the common head dims.
template <typename Fn>
void dispatch_head_dim(size_t hd, Fn&& fn) {
    switch (hd) {
        case 2: fn(std::integral_constant<size_t, 2>{}); return;
        case 4: fn(std::integral_constant<size_t, 4>{}); return;
        case 8: fn(std::integral_constant<size_t, 8>{}); return;
        case 16: fn(std::integral_constant<size_t, 16>{}); return;
        default: fn(std::integral_constant<size_t, 0>{}); return;
    }
}

}  // namespace detail

/// Dynamic-graph tape, rebuilt per step. Creation order is a topological
/// order, so backward() is a single reverse sweep that visits each node
/// exactly once. Intermediate buffers are released as the sweep passes them
/// to bound peak memory on large activations.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    size_t node_count() const { return nodes_.size(); }

    Var leaf(Tensor value, bool requires_grad = true) {
        Var n = fresh();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->is_leaf = true;
        return n;
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // -- arithmetic ---------------------------------------------------------

    Var add(Var a, Var b) {
        if (!a->value.same_shape(b->value)) throw ShapeError("add: shapes differ");
        Var n = make(a->value + b->value, {a, b});
        n->backward_fn = [a, b](AdNode& self) {
            if (a->requires_grad) a->accumulate(self.grad);
            if (b->requires_grad) b->accumulate(self.grad);
        };
        return n;
    }

    Var sub(Var a, Var b) {
        if (!a->value.same_shape(b->value)) throw ShapeError("sub: shapes differ");
        Var n = make(a->value - b->value, {a, b});
        n->backward_fn = [a, b](AdNode& self) {
            if (a->requires_grad) a->accumulate(self.grad);
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] -= self.grad[i];
            }
        };
        return n;
    }

    Var scale(Var a, double s) {
        Var n = make(a->value * s, {a});
        n->backward_fn = [a, s](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += s * self.grad[i];
        };
        return n;
    }

    Var hadamard_mul(Var a, Var b) {
        if (!a->value.same_shape(b->value)) throw ShapeError("hadamard: shapes differ");
        Var n = make(hadamard(a->value, b->value), {a, b});
        n->backward_fn = [a, b](AdNode& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += b->value[i] * self.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += a->value[i] * self.grad[i];
            }
        };
        return n;
    }

    Var matmul(Var a, Var b) {
        Var n = make(camp::matmul(a->value, b->value), {a, b});
        n->backward_fn = [a, b](AdNode& self) { matmul_backward(self, a, b); };
        return n;
    }

    /// x(R,K) * w(K,C) + bias(C) broadcast across rows.
    Var affine(Var x, Var w, Var bias) {
        if (x->value.cols() != w->value.rows()) throw ShapeError("affine: inner dims");
        if (bias->value.size() != w->value.cols()) throw ShapeError("affine: bias length");
        Tensor out = camp::matmul(x->value, w->value);
        const size_t r = out.rows(), c = out.cols();
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) out(i, j) += bias->value[j];
        Var n = make(std::move(out), {x, w, bias});
        n->backward_fn = [x, w, bias](AdNode& self) {
            matmul_backward(self, x, w);
            if (bias->requires_grad) {
                bias->ensure_grad();
                const size_t r = self.grad.rows(), c = self.grad.cols();
                for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < c; ++j) bias->grad[j] += self.grad(i, j);
            }
        };
        return n;
    }

    // -- nonlinearities ------------------------------------------------------

    Var relu(Var a) {
        Tensor out = a->value;
        for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
        Var n = make(std::move(out), {a});
        n->backward_fn = [a](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (a->value[i] > 0.0) a->grad[i] += self.grad[i];
        };
        return n;
    }

    Var sigmoid(Var a) {
        Tensor out = a->value;
        for (size_t i = 0; i < out.size(); ++i) out[i] = detail::fast_sigmoid(out[i]);
        Var n = make(std::move(out), {a});
        n->backward_fn = [a](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.value[i];
                a->grad[i] += self.grad[i] * y * (1.0 - y);
            }
        };
        return n;
    }

    Var tanh_op(Var a) {
        Tensor out = a->value;
        for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        Var n = make(std::move(out), {a});
        n->backward_fn = [a](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.value[i];
                a->grad[i] += self.grad[i] * (1.0 - y * y);
            }
        };
        return n;
    }

    // -- reductions ----------------------------------------------------------

    Var sum_all(Var a) {
        double s = 0.0;
        for (double v : a->value.values()) s += v;
        Var n = make(Tensor::scalar(s), {a});
        n->backward_fn = [a](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            const double g = self.grad[0];
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
        };
        return n;
    }

    Var sum_squares(Var a) {
        double s = 0.0;
        for (double v : a->value.values()) s += v * v;
        Var n = make(Tensor::scalar(s), {a});
        n->backward_fn = [a](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            const double g = self.grad[0];
            for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += 2.0 * a->value[i] * g;
        };
        return n;
    }

    Var l1_norm(Var a) {
        double s = 0.0;
        for (double v : a->value.values()) s += std::abs(v);
        Var n = make(Tensor::scalar(s), {a});
        n->backward_fn = [a](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            const double g = self.grad[0];
            for (size_t i = 0; i < a->grad.size(); ++i) {
                const double v = a->value[i];
                a->grad[i] += g * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
            }
        };
        return n;
    }

    /// Elementwise max over the row axis of (R,C) -> (C); ties take the
    /// first row, and the backward routes each column's gradient there.
    Var column_max(Var a) {
        const size_t r = a->value.rows(), c = a->value.cols();
        Tensor out({c});
        auto argmax = std::make_shared<std::vector<size_t>>(c, 0);
        for (size_t j = 0; j < c; ++j) {
            double best = a->value(0, j);
            size_t row = 0;
            for (size_t i = 1; i < r; ++i) {
                if (a->value(i, j) > best) {
                    best = a->value(i, j);
                    row = i;
                }
            }
            out[j] = best;
            (*argmax)[j] = row;
        }
        Var n = make(std::move(out), {a});
        n->backward_fn = [a, argmax, c](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (size_t j = 0; j < c; ++j) a->grad((*argmax)[j], j) += self.grad[j];
        };
        return n;
    }

    // -- normalization and attention ------------------------------------------

    /// Pre-norm transformer layer norm over the last axis of (R,C), with
    /// learned gain/offset.
    Var layer_norm(Var x, Var gain, Var offset, double eps = 1e-5) {
        const size_t r = x->value.rows(), c = x->value.cols();
        if (gain->value.size() != c || offset->value.size() != c)
            throw ShapeError("layer_norm: gain/offset length");
        Tensor out({r, c});
        auto rstd = std::make_shared<std::vector<double>>(r);
        auto mean = std::make_shared<std::vector<double>>(r);
        for (size_t i = 0; i < r; ++i) {
            double mu = 0.0;
            for (size_t j = 0; j < c; ++j) mu += x->value(i, j);
            mu /= static_cast<double>(c);
            double var = 0.0;
            for (size_t j = 0; j < c; ++j) {
                const double d = x->value(i, j) - mu;
                var += d * d;
            }
            var /= static_cast<double>(c);
            const double rs = 1.0 / std::sqrt(var + eps);
            (*mean)[i] = mu;
            (*rstd)[i] = rs;
            for (size_t j = 0; j < c; ++j)
                out(i, j) = (x->value(i, j) - mu) * rs * gain->value[j] + offset->value[j];
        }
        Var n = make(std::move(out), {x, gain, offset});
        n->backward_fn = [x, gain, offset, mean, rstd, r, c](AdNode& self) {
            std::vector<double> xhat(c);
            for (size_t i = 0; i < r; ++i) {
                const double mu = (*mean)[i], rs = (*rstd)[i];
                double sum_g = 0.0, sum_gx = 0.0;
                for (size_t j = 0; j < c; ++j) {
                    xhat[j] = (x->value(i, j) - mu) * rs;
                    const double gy = self.grad(i, j) * gain->value[j];
                    sum_g += gy;
                    sum_gx += gy * xhat[j];
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    const double inv_c = 1.0 / static_cast<double>(c);
                    for (size_t j = 0; j < c; ++j) {
                        const double gy = self.grad(i, j) * gain->value[j];
                        x->grad(i, j) += rs * (gy - inv_c * sum_g - xhat[j] * inv_c * sum_gx);
                    }
                }
                if (gain->requires_grad) {
                    gain->ensure_grad();
                    for (size_t j = 0; j < c; ++j) gain->grad[j] += self.grad(i, j) * xhat[j];
                }
                if (offset->requires_grad) {
                    offset->ensure_grad();
                    for (size_t j = 0; j < c; ++j) offset->grad[j] += self.grad(i, j);
                }
            }
        };
        return n;
    }

    /// Multi-head scaled dot-product attention applied independently to
    /// `batch` contiguous slices of `seq` rows. q, k, v are (batch*seq, Z).
    /// Each (slice, head) is processed in row tiles with packed buffers so
    /// the seq x seq score matrix never leaves cache; the backward pass
    /// recomputes tile probabilities instead of storing them.
    Var attention(Var q, Var k, Var v, size_t batch, size_t seq, size_t heads) {
        const size_t z = q->value.cols();
        if (z % heads != 0) throw ShapeError("attention: embed dim not divisible by heads");
        if (q->value.rows() != batch * seq || !q->value.same_shape(k->value) ||
            !q->value.same_shape(v->value))
            throw ShapeError("attention: q/k/v shape mismatch");
        const size_t hd = z / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

        Tensor out({batch * seq, z});
        detail::dispatch_head_dim(hd, [&](auto tag) {
            detail::AttentionScratch<decltype(tag)::value> scratch(seq, hd);
            for (size_t b = 0; b < batch; ++b)
                for (size_t h = 0; h < heads; ++h) {
                    const size_t off = b * seq * z + h * hd;
                    scratch.pack(q->value.data() + off, k->value.data() + off,
                                 v->value.data() + off, z);
                    scratch.forward(inv_sqrt);
                    scratch.unpack_output(out.data() + off, z);
                }
        });

        Var n = make(std::move(out), {q, k, v});
        n->backward_fn = [q, k, v, batch, seq, heads, hd, z, inv_sqrt](AdNode& self) {
            q->ensure_grad();
            k->ensure_grad();
            v->ensure_grad();
            detail::dispatch_head_dim(hd, [&](auto tag) {
                detail::AttentionScratch<decltype(tag)::value> scratch(seq, hd);
                for (size_t b = 0; b < batch; ++b)
                    for (size_t h = 0; h < heads; ++h) {
                        const size_t off = b * seq * z + h * hd;
                        scratch.pack(q->value.data() + off, k->value.data() + off,
                                     v->value.data() + off, z);
                        scratch.pack_grad_out(self.grad.data() + off, z);
                        scratch.backward(inv_sqrt);
                        scratch.unpack_grads(q->grad.data() + off, k->grad.data() + off,
                                             v->grad.data() + off, z);
                    }
            });
        };
        return n;
    }

    /// Reorders (a*b, Z) sample-major rows into (b*a, Z) so the same
    /// attention kernel can attend over either axis. Exact permutation.
    Var swap_axes(Var x, size_t a, size_t b) {
        const size_t z = x->value.cols();
        if (x->value.rows() != a * b) throw ShapeError("swap_axes: row count mismatch");
        Tensor out({b * a, z});
        for (size_t i = 0; i < a; ++i)
            for (size_t j = 0; j < b; ++j)
                std::copy_n(x->value.data() + (i * b + j) * z, z, out.data() + (j * a + i) * z);
        Var n = make(std::move(out), {x});
        n->backward_fn = [x, a, b, z](AdNode& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < a; ++i)
                for (size_t j = 0; j < b; ++j) {
                    const double* src = self.grad.data() + (j * a + i) * z;
                    double* dst = x->grad.data() + (i * b + j) * z;
                    for (size_t t = 0; t < z; ++t) dst[t] += src[t];
                }
        };
        return n;
    }

    Var reshape(Var a, std::vector<size_t> shape) {
        if (Tensor::count(shape) != a->value.size()) throw ShapeError("reshape: size mismatch");
        Tensor out(shape, std::vector<double>(a->value.data(), a->value.data() + a->value.size()));
        Var n = make(std::move(out), {a});
        n->backward_fn = [a](AdNode& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        };
        return n;
    }

    /// Shared affine featurization of a raw dataset: out[r, :] = x[r]*w + b.
    Var scalar_embed(const Tensor& x, Var w, Var b) {
        if (!x.all_finite()) throw DomainError("scalar_embed: non-finite input");
        const size_t r = x.size(), z = w->value.size();
        if (b->value.size() != z) throw ShapeError("scalar_embed: bias length");
        Tensor out({r, z});
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < z; ++j) out(i, j) = x[i] * w->value[j] + b->value[j];
        auto xcopy = std::make_shared<Tensor>(x);
        Var n = make(std::move(out), {w, b});
        n->backward_fn = [w, b, xcopy, r, z](AdNode& self) {
            if (w->requires_grad) {
                w->ensure_grad();
                for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < z; ++j) w->grad[j] += (*xcopy)[i] * self.grad(i, j);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < z; ++j) b->grad[j] += self.grad(i, j);
            }
        };
        return n;
    }

    Var softmax_rows(Var x) {
        Tensor out = x->value;
        const size_t r = out.rows(), c = out.cols();
        softmax_rows_inplace(out.data(), r, c);
        Var n = make(std::move(out), {x});
        n->backward_fn = [x, r, c](AdNode& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (size_t j = 0; j < c; ++j) dot += self.grad(i, j) * self.value(i, j);
                for (size_t j = 0; j < c; ++j)
                    x->grad(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
            }
        };
        return n;
    }

    /// -sum_i L_i log p_i per row, averaged over rows; probabilities are
    /// clamped below at 1e-12 before the log. Labels must be one-hot.
    Var cross_entropy(Var probs, const Tensor& onehot) {
        constexpr double kClamp = 1e-12;
        if (!probs->value.same_shape(onehot)) throw ShapeError("cross_entropy: shape mismatch");
        const bool batched = probs->value.ndim() == 2;
        const size_t rows = batched ? probs->value.rows() : 1;
        const size_t cols = batched ? probs->value.cols() : probs->value.size();
        auto labels = std::make_shared<std::vector<size_t>>(rows);
        double total = 0.0;
        for (size_t i = 0; i < rows; ++i) {
            size_t hot = cols;
            double row_sum = 0.0;
            for (size_t j = 0; j < cols; ++j) {
                const double l = onehot[i * cols + j];
                if (l != 0.0 && l != 1.0) throw ContractError("cross_entropy: label not one-hot");
                row_sum += l;
                if (l == 1.0) hot = j;
            }
            if (row_sum != 1.0 || hot == cols) throw ContractError("cross_entropy: label not one-hot");
            (*labels)[i] = hot;
            total += -std::log(std::max(probs->value[i * cols + hot], kClamp));
        }
        Var n = make(Tensor::scalar(total / static_cast<double>(rows)), {probs});
        n->backward_fn = [probs, labels, rows, cols](AdNode& self) {
            if (!probs->requires_grad) return;
            probs->ensure_grad();
            const double g = self.grad[0] / static_cast<double>(rows);
            for (size_t i = 0; i < rows; ++i) {
                const size_t hot = (*labels)[i];
                const double p = probs->value[i * cols + hot];
                if (p > kClamp) probs->grad[i * cols + hot] -= g / p;
            }
        };
        return n;
    }

    // -- acyclicity penalties --------------------------------------------------

    /// h(W) = tr(e^{W o W}) - d; zero exactly when W is supported on a DAG.
    Var acyclicity(Var w) {
        const size_t d = w->value.rows();
        if (w->value.ndim() != 2 || w->value.cols() != d) throw ShapeError("acyclicity: square matrix");
        Tensor m({d, d});
        for (size_t i = 0; i < d * d; ++i) m[i] = w->value[i] * w->value[i];
        auto expm = std::make_shared<Tensor>(matrix_exp(m));
        double tr = 0.0;
        for (size_t i = 0; i < d; ++i) tr += (*expm)(i, i);
        Var n = make(Tensor::scalar(tr - static_cast<double>(d)), {w});
        n->backward_fn = [w, expm, d](AdNode& self) {
            if (!w->requires_grad) return;
            w->ensure_grad();
            const double g = self.grad[0];
            for (size_t i = 0; i < d; ++i)
                for (size_t j = 0; j < d; ++j)
                    w->grad(i, j) += g * 2.0 * w->value(i, j) * (*expm)(j, i);
        };
        return n;
    }

    /// Grouped variant for per-node first layers: given V matrices W1_j of
    /// shape (V, hidden), forms S[k, j] = sum_h W1_j(k, h)^2 and returns
    /// tr(e^S) - V.
    Var acyclicity_grouped(const std::vector<Var>& first_layers, size_t v, size_t hidden) {
        if (first_layers.size() != v) throw ShapeError("acyclicity_grouped: need V matrices");
        Tensor s({v, v});
        for (size_t j = 0; j < v; ++j) {
            const Tensor& w1 = first_layers[j]->value;
            if (w1.rows() != v || w1.cols() != hidden)
                throw ShapeError("acyclicity_grouped: first layer shape");
            for (size_t k = 0; k < v; ++k) {
                double acc = 0.0;
                for (size_t h = 0; h < hidden; ++h) acc += w1(k, h) * w1(k, h);
                s(k, j) = acc;
            }
        }
        auto expm = std::make_shared<Tensor>(matrix_exp(s));
        double tr = 0.0;
        for (size_t i = 0; i < v; ++i) tr += (*expm)(i, i);
        Var n = make(Tensor::scalar(tr - static_cast<double>(v)), first_layers);
        n->backward_fn = [first_layers, expm, v, hidden](AdNode& self) {
            const double g = self.grad[0];
            for (size_t j = 0; j < v; ++j) {
                Var w1 = first_layers[j];
                if (!w1->requires_grad) continue;
                w1->ensure_grad();
                for (size_t k = 0; k < v; ++k) {
                    const double factor = g * 2.0 * (*expm)(j, k);
                    for (size_t h = 0; h < hidden; ++h)
                        w1->grad(k, h) += factor * w1->value(k, h);
                }
            }
        };
        return n;
    }

    /// Inverted dropout; identity when rate == 0.
    Var dropout(Var x, double rate, Rng& rng) {
        if (rate <= 0.0) return x;
        if (rate >= 1.0) throw DomainError("dropout: rate must be < 1");
        auto mask = std::make_shared<std::vector<double>>(x->value.size());
        const double keep = 1.0 - rate;
        Tensor out = x->value;
        for (size_t i = 0; i < out.size(); ++i) {
            (*mask)[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
            out[i] *= (*mask)[i];
        }
        Var n = make(std::move(out), {x});
        n->backward_fn = [x, mask](AdNode& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += (*mask)[i] * self.grad[i];
        };
        return n;
    }

    /// Reverse sweep from a scalar loss. Each leaf with requires_grad ends
    /// up with grad = d loss / d leaf; intermediate buffers are freed as
    /// the sweep passes them.
    void backward(Var loss) {
        if (loss->value.size() != 1) throw ContractError("backward: loss must be scalar");
        loss->ensure_grad();
        loss->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            AdNode& n = **it;
            if (n.grad_ready && n.backward_fn) n.backward_fn(n);
            if (!n.is_leaf) {
                n.value.release();
                n.grad.release();
                n.grad_ready = false;
                n.backward_fn = nullptr;
            }
        }
    }

private:
    Var fresh() {
        nodes_.push_back(std::make_unique<AdNode>());
        return nodes_.back().get();
    }

    Var make(Tensor value, std::vector<Var> parents) {
        Var n = fresh();
        n->value = std::move(value);
        n->parents = std::move(parents);
        for (Var p : n->parents) {
            if (p->requires_grad) {
                n->requires_grad = true;
                break;
            }
        }
        return n;
    }

    static void softmax_rows_inplace(double* data, size_t rows, size_t cols) {
        for (size_t i = 0; i < rows; ++i) {
            double* row = data + i * cols;
            double mx = row[0];
            for (size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (size_t j = 0; j < cols; ++j) {
                row[j] = detail::fast_exp(row[j] - mx);
                sum += row[j];
            }
            const double inv = 1.0 / sum;
            for (size_t j = 0; j < cols; ++j) row[j] *= inv;
        }
    }

    static void matmul_backward(AdNode& self, Var a, Var b) {
        const size_t m = self.grad.rows(), p = self.grad.cols(), k = a->value.cols();
        if (a->requires_grad) {
            a->ensure_grad();
            detail::gemm(false, true, m, k, p, 1.0, self.grad.data(), p, b->value.data(), p, 1.0,
                         a->grad.data(), k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::gemm(true, false, k, p, m, 1.0, a->value.data(), k, self.grad.data(), p, 1.0,
                         b->grad.data(), p);
        }
    }

    std::deque<std::unique_ptr<AdNode>> nodes_;
};

}  // namespace camp
