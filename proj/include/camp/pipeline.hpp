#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "camp/checkpoint.hpp"
#include "camp/discovery.hpp"
#include "camp/encoder.hpp"
#include "camp/errors.hpp"
#include "camp/optim.hpp"
#include "camp/rng.hpp"
#include "camp/scm.hpp"

namespace camp {

struct TrainConfig {
    size_t labeled_count = 6000;   // T
    size_t pretrain_count = 50000; // self-supervised stream size
    size_t batch_size = 8;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;    // decoupled, applied after the Adam step
    bool cosine_decay = true;      // anneal lr to ~0 across max_steps
    size_t max_steps = 3000;
    size_t eval_every = 50;
    size_t patience = 6;           // evaluations without improvement
    double val_fraction = 0.15;
    uint64_t master_seed = 0;
    size_t workers = 2;

    void validate() const {
        if (labeled_count == 0 || pretrain_count == 0) throw ConfigError("train counts must be positive");
        if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
        if (val_fraction <= 0.0 || val_fraction >= 1.0)
            throw ConfigError("train.val_fraction must be in (0, 1)");
        if (learning_rate <= 0.0) throw ConfigError("train.learning_rate must be positive");
        if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be nonnegative");
        if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
        if (workers == 0) throw ConfigError("train.workers must be positive");
    }
};

/// One labeled example: the dataset, the winning method index, and the
/// full score vector (used for the selected-F1 validation metric).
struct LabeledInstance {
    std::string id;
    Dataset data;
    int label = 0;
    std::vector<double> scores;
    AssumptionClass assumption = AssumptionClass::LinearGaussian;
};

struct TrainLogRow {
    size_t step;
    double loss;
    double val_metric;  // NaN between evaluations
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TrainLogRow> log;
    double best_val_metric = 0.0;
};

namespace detail {

/// Deterministic shape-bucketed batch schedule: datasets are grouped by
/// (n, V) so attention shapes agree within a batch; order is a pure
/// function of (seed, epoch).
inline std::vector<std::vector<size_t>> bucketed_batches(
    const std::vector<std::pair<size_t, size_t>>& shapes, const std::vector<size_t>& indices,
    size_t batch_size, uint64_t seed, uint64_t epoch) {
    std::vector<size_t> order = indices;
    Rng rng(derive_seed(seed, "batch_order", epoch));
    for (size_t i = order.size(); i-- > 1;)
        std::swap(order[i], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);

    std::map<std::pair<size_t, size_t>, std::vector<size_t>> buckets;
    std::vector<std::vector<size_t>> batches;
    for (size_t idx : order) {
        auto& bucket = buckets[shapes[idx]];
        bucket.push_back(idx);
        if (bucket.size() == batch_size) {
            batches.push_back(bucket);
            bucket.clear();
        }
    }
    for (auto& [shape, rest] : buckets)
        if (!rest.empty()) batches.push_back(rest);
    return batches;
}

/// Mean cross-entropy over a batch plus parameter gradients, computed with
/// a small thread pool; accumulation order is fixed by batch index, so the
/// result is independent of scheduling.
struct BatchGrad {
    double loss = 0.0;
    std::vector<Tensor> grads;
};

template <typename DataAt, typename LabelAt>
BatchGrad batch_gradient(const EncoderModel& model, const std::vector<size_t>& batch,
                         DataAt&& data_at, LabelAt&& label_at, size_t workers) {
    const size_t b = batch.size();
    std::vector<std::vector<Tensor>> grads(b);
    std::vector<double> losses(b, 0.0);
    std::vector<std::string> errors(b);

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t t = next.fetch_add(1);
            if (t >= b) return;
            try {
                const Dataset& data = data_at(batch[t]);
                const int label = label_at(batch[t]);
                Tape tape;
                BoundEncoder bound(tape, model, /*training=*/true);
                Var probs = bound.probabilities(bound.decode_logits(bound.encode(data)));
                Tensor onehot({1, model.head_outputs});
                onehot(0, static_cast<size_t>(label)) = 1.0;
                Var loss = tape.cross_entropy(probs, onehot);
                losses[t] = loss->value[0];
                tape.backward(loss);
                grads[t] = bound.collect_gradients();
            } catch (const std::exception& e) {
                errors[t] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (size_t w = 0; w + 1 < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (!e.empty()) throw TrainingError(e, 0);

    BatchGrad out;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (size_t t = 0; t < b; ++t) {
        out.loss += losses[t] * inv_b;
        if (out.grads.empty()) {
            out.grads = std::move(grads[t]);
            for (Tensor& g : out.grads)
                for (size_t i = 0; i < g.size(); ++i) g[i] *= inv_b;
        } else {
            for (size_t p = 0; p < out.grads.size(); ++p)
                for (size_t i = 0; i < out.grads[p].size(); ++i)
                    out.grads[p][i] += grads[t][p][i] * inv_b;
        }
    }
    return out;
}

/// Runs `fn(i)` for i in [0, count) on a small pool; outputs must be
/// written into caller-owned per-index slots.
template <typename Fn>
void parallel_for(size_t count, size_t workers, Fn&& fn) {
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mu;
    auto worker = [&]() {
        while (!failed.load()) {
            const size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (first_error.empty()) first_error = e.what();
                failed.store(true);
            }
        }
    };
    std::vector<std::thread> pool;
    for (size_t w = 0; w + 1 < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (failed.load()) throw std::runtime_error(first_error);
}

/// Generic early-stopped training loop shared by the pre-training and
/// supervised stages. `val_metric()` is higher-better.
template <typename DataAt, typename LabelAt, typename ValMetric>
TrainResult train_loop(EncoderModel model, const TrainConfig& cfg,
                       const std::vector<size_t>& train_indices,
                       const std::vector<std::pair<size_t, size_t>>& shapes, DataAt&& data_at,
                       LabelAt&& label_at, ValMetric&& val_metric, uint64_t loop_seed) {
    AdamState adam(cfg.learning_rate);
    TrainResult result;
    EncoderModel best = model;
    double best_metric = -std::numeric_limits<double>::infinity();
    size_t evals_since_best = 0;
    size_t step = 0;
    bool stop = false;

    for (uint64_t epoch = 0; !stop; ++epoch) {
        const auto batches =
            bucketed_batches(shapes, train_indices, cfg.batch_size, loop_seed, epoch);
        if (batches.empty()) break;
        for (const auto& batch : batches) {
            if (step >= cfg.max_steps) {
                stop = true;
                break;
            }
            for (size_t i = 1; i < batch.size(); ++i) {
                // shape-bucketing contract: uniform (n, V) within a batch
                if (shapes[batch[i]] != shapes[batch[0]])
                    throw ContractError("batch assembled with mixed shapes");
            }
            BatchGrad bg = batch_gradient(model, batch, data_at, label_at, cfg.workers);
            if (!std::isfinite(bg.loss)) throw TrainingError("non-finite loss", step);
            double lr = cfg.learning_rate;
            if (cfg.cosine_decay && cfg.max_steps > 1) {
                const double t = static_cast<double>(step) / static_cast<double>(cfg.max_steps);
                lr *= 0.5 * (1.0 + std::cos(M_PI * t));
            }
            adam.set_learning_rate(lr);
            std::vector<Tensor*> params = model.params.tensors();
            adam.step(params, bg.grads);
            if (cfg.weight_decay > 0.0) {
                const double decay = 1.0 - lr * cfg.weight_decay;
                for (size_t p = 0; p < params.size(); ++p) {
                    // layer-norm gains/offsets and biases are exempt
                    if (params[p]->ndim() != 2) continue;
                    for (size_t i = 0; i < params[p]->size(); ++i) (*params[p])[i] *= decay;
                }
            }
            ++step;

            const bool eval_now = (step % cfg.eval_every == 0) || step >= cfg.max_steps;
            double metric = std::numeric_limits<double>::quiet_NaN();
            if (eval_now) {
                metric = val_metric(model);
                if (metric > best_metric) {
                    best_metric = metric;
                    best = model;
                    evals_since_best = 0;
                } else {
                    ++evals_since_best;
                }
            }
            result.log.push_back({step, bg.loss, metric});
            if (eval_now && evals_since_best >= cfg.patience) {
                stop = true;
                break;
            }
        }
        if (step >= cfg.max_steps) stop = true;
    }

    if (best_metric == -std::numeric_limits<double>::infinity()) {
        best = model;  // zero-step run: keep the initialization
        best_metric = 0.0;
    }
    result.checkpoint.model = std::move(best);
    result.checkpoint.step_count = step;
    result.best_val_metric = best_metric;
    return result;
}

}  // namespace detail

/// Pre-training stage: streams (dataset, assumption-class) pairs from the
/// SCM sampler (labels cost nothing: no discovery method ever runs) and
/// trains encoder + 3-way assumption head with early stopping on
/// validation accuracy.
inline TrainResult pretrain(const ScmGenConfig& gen, const TrainConfig& cfg,
                            const EncoderConfig& enc) {
    cfg.validate();
    gen.validate();
    enc.validate();

    const size_t total = cfg.pretrain_count;
    const size_t val_count = std::max<size_t>(1, static_cast<size_t>(
                                                     std::ceil(cfg.val_fraction * total)));
    if (val_count >= total) throw ConfigError("pretrain: validation fraction leaves no train data");

    // Materialized stream; a pure function of the master seed.
    std::vector<Dataset> datasets(total);
    std::vector<int> labels(total);
    std::vector<std::pair<size_t, size_t>> shapes(total);
    detail::parallel_for(total, cfg.workers, [&](size_t i) {
        TrainingInstance inst =
            sample_training_instance(gen, derive_seed(cfg.master_seed, "pretrain_instance", i));
        labels[i] = static_cast<int>(inst.assumption);
        shapes[i] = {inst.data.rows(), inst.data.cols()};
        datasets[i] = std::move(inst.data);
    });

    std::vector<size_t> train_idx, val_idx;
    for (size_t i = 0; i < total; ++i) (i < val_count ? val_idx : train_idx).push_back(i);

    EncoderModel model =
        EncoderModel::init(enc, 3, derive_seed(cfg.master_seed, "pretrain_init"));

    auto val_accuracy = [&](const EncoderModel& m) {
        std::atomic<size_t> correct{0};
        detail::parallel_for(val_idx.size(), cfg.workers, [&](size_t i) {
            HeadOutput out = forward_head(m, datasets[val_idx[i]]);
            int arg = 0;
            for (size_t k = 1; k < out.probabilities.size(); ++k)
                if (out.probabilities[k] > out.probabilities[arg]) arg = static_cast<int>(k);
            if (arg == labels[val_idx[i]]) correct.fetch_add(1);
        });
        return static_cast<double>(correct.load()) / static_cast<double>(val_idx.size());
    };

    TrainResult result = detail::train_loop(
        std::move(model), cfg, train_idx, shapes, [&](size_t i) -> const Dataset& { return datasets[i]; },
        [&](size_t i) { return labels[i]; }, val_accuracy,
        derive_seed(cfg.master_seed, "pretrain_loop"));
    result.checkpoint.stage = TrainStage::Pretrained;
    result.checkpoint.master_seed = cfg.master_seed;
    result.checkpoint.init_seed = derive_seed(cfg.master_seed, "pretrain_init");
    return result;
}

/// Supervised stage (fresh init) or fine-tuning (from a pretrained
/// checkpoint; encoder weights carried over bit-exact, fresh method head).
/// All weights train; early stopping is on validation mean selected-F1 --
/// the deployment metric -- rather than validation loss.
inline TrainResult train_supervised(const TrainConfig& cfg, const EncoderConfig& enc,
                                    const std::vector<std::string>& registry_fingerprint,
                                    const std::vector<LabeledInstance>& instances,
                                    const Checkpoint* init = nullptr) {
    cfg.validate();
    enc.validate();
    const size_t k = registry_fingerprint.size();
    if (k < 2) throw ConfigError("registry must hold at least 2 methods");
    const size_t total = std::min(cfg.labeled_count, instances.size());
    if (total < 2) throw ConfigError("need at least 2 labeled instances");
    for (size_t i = 0; i < total; ++i) {
        if (instances[i].scores.size() != k)
            throw ConfigError("instance '" + instances[i].id + "' has " +
                              std::to_string(instances[i].scores.size()) + " scores, registry has " +
                              std::to_string(k));
        if (instances[i].label < 0 || static_cast<size_t>(instances[i].label) >= k)
            throw ConfigError("instance '" + instances[i].id + "' label out of range");
    }

    EncoderModel model;
    TrainStage stage;
    if (init) {
        if (init->stage != TrainStage::Pretrained)
            throw ConfigError("fine-tuning requires a pretrained checkpoint, got stage '" +
                              std::string(stage_name(init->stage)) + "'");
        if (!(init->model.config == enc))
            throw ConfigError("encoder config mismatch between checkpoint and train config");
        model = swap_head(init->model, k, derive_seed(cfg.master_seed, "finetune_head"));
        stage = TrainStage::Finetuned;
    } else {
        model = EncoderModel::init(enc, k, derive_seed(cfg.master_seed, "supervised_init"));
        stage = TrainStage::Supervised;
    }

    const size_t val_count =
        std::max<size_t>(1, static_cast<size_t>(std::ceil(cfg.val_fraction * total)));
    if (val_count >= total) throw ConfigError("train: validation fraction leaves no train data");

    // Deterministic validation split over the first `total` instances.
    std::vector<size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    {
        Rng rng(derive_seed(cfg.master_seed, "val_split"));
        for (size_t i = order.size(); i-- > 1;)
            std::swap(order[i],
                      order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);
    }
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(val_count));
    std::vector<size_t> train_idx(order.begin() + static_cast<long>(val_count), order.end());

    std::vector<std::pair<size_t, size_t>> shapes(total);
    for (size_t i = 0; i < total; ++i) shapes[i] = {instances[i].data.rows(), instances[i].data.cols()};

    // Validation metric: mean F1 of the method the model would select.
    auto val_selected_f1 = [&](const EncoderModel& m) {
        std::vector<double> scores(val_idx.size(), 0.0);
        detail::parallel_for(val_idx.size(), cfg.workers, [&](size_t i) {
            const LabeledInstance& inst = instances[val_idx[i]];
            HeadOutput out = forward_head(m, inst.data);
            int arg = 0;
            for (size_t c = 1; c < out.probabilities.size(); ++c)
                if (out.probabilities[c] > out.probabilities[arg]) arg = static_cast<int>(c);
            scores[i] = inst.scores[static_cast<size_t>(arg)];
        });
        double mean = 0.0;
        for (double s : scores) mean += s;
        return mean / static_cast<double>(scores.size());
    };

    TrainResult result = detail::train_loop(
        std::move(model), cfg, train_idx, shapes,
        [&](size_t i) -> const Dataset& { return instances[i].data; },
        [&](size_t i) { return instances[i].label; }, val_selected_f1,
        derive_seed(cfg.master_seed, "supervised_loop"));
    result.checkpoint.stage = stage;
    result.checkpoint.registry_fingerprint = registry_fingerprint;
    result.checkpoint.master_seed = cfg.master_seed;
    result.checkpoint.init_seed = init ? init->init_seed : derive_seed(cfg.master_seed, "supervised_init");
    return result;
}

/// Zero-shot prediction: one forward pass, methods ranked by descending
/// probability with ties broken by registry index.
struct Prediction {
    HeadOutput head;
    std::vector<int> ranking;  // method indices, best first
};

inline Prediction predict(const Checkpoint& ckpt, const Dataset& data) {
    if (ckpt.stage == TrainStage::Pretrained)
        throw ConfigError("predict requires a supervised or finetuned checkpoint");
    if (data.cols() < 2) throw DomainError("predict: dataset must have at least 2 variables");
    if (!data.all_finite()) throw DomainError("predict: non-finite input");
    Prediction out;
    out.head = forward_head(ckpt.model, data);
    out.ranking.resize(out.head.probabilities.size());
    std::iota(out.ranking.begin(), out.ranking.end(), 0);
    std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](int a, int b) {
        return out.head.probabilities[static_cast<size_t>(a)] >
               out.head.probabilities[static_cast<size_t>(b)];
    });
    return out;
}

}  // namespace camp
