#pragma once

#include <cmath>
#include <vector>

#include "camp/errors.hpp"
#include "camp/tensor.hpp"

namespace camp {

/// Adam with bias correction. Moment accumulators mirror the parameter
/// shapes; the step counter advances before correction. Single-writer:
/// confined to the training thread.
class AdamState {
public:
    AdamState(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    size_t step_count() const { return step_; }

    void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size()) throw ShapeError("adam: param/grad count mismatch");
        if (first_.empty()) {
            for (const Tensor* p : params) {
                first_.push_back(Tensor::zeros(p->shape()));
                second_.push_back(Tensor::zeros(p->shape()));
            }
        }
        if (first_.size() != params.size()) throw ShapeError("adam: state size changed");
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            if (!p.same_shape(g)) throw ShapeError("adam: grad shape mismatch");
            Tensor& m = first_[i];
            Tensor& v = second_[i];
            for (size_t t = 0; t < p.size(); ++t) {
                m[t] = beta1_ * m[t] + (1.0 - beta1_) * g[t];
                v[t] = beta2_ * v[t] + (1.0 - beta2_) * g[t] * g[t];
                const double mhat = m[t] / bc1;
                const double vhat = v[t] / bc2;
                p[t] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    size_t step_ = 0;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
};

}  // namespace camp
