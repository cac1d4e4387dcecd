// Optimization loop: Adam with exponential learning-rate decay, length-aware
// batch splitting, gradient clipping, per-epoch evaluation and best-dev
// tracking. Fully deterministic given (seed, config, dataset).
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eigencent/data.hpp"
#include "eigencent/model.hpp"
#include "eigencent/numerics.hpp"

namespace eigencent {

struct TrainConfig {
    // hyper-parameter table rows (snake_case)
    std::size_t embedding_size{300};
    std::size_t lstm_hidden_unit{300};
    std::size_t connectivity_hidden_units{50};
    double regularization_rate{1e-6};
    double initial_learning_rate{1e-4};
    double learning_rate_decay{0.9};
    std::size_t learning_rate_decay_steps{2000};
    std::size_t initial_batch_size{64};
    std::size_t batch_size_low_bound{32};
    double dropout_rate{0.6};

    // optimizer and loop
    double adam_beta1{0.9};
    double adam_beta2{0.999};
    double adam_epsilon{1e-8};
    double grad_clip_norm{5.0};          // <= 0 disables clipping
    std::size_t epochs{10};
    std::uint64_t seed{42};
    std::size_t batch_token_budget{4096};  // batches above max_len*size split in half
    std::size_t vocab_min_freq{1};

    // model choices
    AggregatorKind aggregator{AggregatorKind::eigen};
    FusionKind fusion{FusionKind::bidirectional_elman};
    std::size_t head_hidden{64};
    PowerConfig power;

    static TrainConfig classification_defaults() { return TrainConfig{}; }

    static TrainConfig nli_defaults() {
        TrainConfig c;
        c.connectivity_hidden_units = kNliConnectivityHidden;
        c.regularization_rate = 1e-20;
        c.initial_learning_rate = 1e-4;
        c.learning_rate_decay = 0.95;
        c.learning_rate_decay_steps = 20000;
        c.initial_batch_size = 128;
        c.batch_size_low_bound = 128;
        c.dropout_rate = 0.2;
        return c;
    }

    void validate() const {
        require(initial_learning_rate > 0.0, "TrainConfig: learning rate must be positive");
        require(learning_rate_decay > 0.0 && learning_rate_decay <= 1.0,
                "TrainConfig: decay factor in (0,1]");
        require(learning_rate_decay_steps >= 1, "TrainConfig: decay steps must be >= 1");
        require(initial_batch_size >= 1, "TrainConfig: batch size must be >= 1");
        require(batch_size_low_bound >= 1 && batch_size_low_bound <= initial_batch_size,
                "TrainConfig: batch size low bound must be in [1, initial_batch_size]");
        require(dropout_rate >= 0.0 && dropout_rate < 1.0, "TrainConfig: dropout in [0,1)");
        require(regularization_rate >= 0.0, "TrainConfig: regularization must be >= 0");
        power.validate();
    }

    double effective_lr(std::size_t step) const {
        const double exponent =
            static_cast<double>(step) / static_cast<double>(learning_rate_decay_steps);
        return initial_learning_rate * std::pow(learning_rate_decay, exponent);
    }

    ModelConfig model_config(TaskKind task, std::size_t vocab_size,
                             std::size_t n_classes) const {
        ModelConfig mc;
        mc.task = task == TaskKind::synthetic ? TaskKind::sentence : task;
        mc.aggregator = aggregator;
        mc.fusion = fusion;
        mc.vocab_size = vocab_size;
        mc.n_classes = n_classes;
        mc.embedding_dim = embedding_size;
        mc.fusion_hidden = lstm_hidden_unit;
        mc.connectivity_hidden = connectivity_hidden_units;
        mc.head_hidden = head_hidden;
        mc.dropout_rate = dropout_rate;
        mc.power = power;
        return mc;
    }
};

/// One bias-corrected Adam update over every registered parameter, with the
/// L2 regularization term added to the gradient and the decayed learning
/// rate. step is 1-based.
inline void adam_step(ParamStore& ps, const TrainConfig& cfg, std::size_t step) {
    require(step >= 1, "adam_step: step is 1-based");
    const double lr = cfg.effective_lr(step);
    const double b1 = cfg.adam_beta1;
    const double b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (auto& e : ps.entries) {
        for (std::size_t i = 0; i < e.size; ++i) {
            const double g = e.grad[i] + cfg.regularization_rate * e.param[i];
            e.m[i] = b1 * e.m[i] + (1.0 - b1) * g;
            e.v[i] = b2 * e.v[i] + (1.0 - b2) * g * g;
            const double mhat = e.m[i] / bc1;
            const double vhat = e.v[i] / bc2;
            e.param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// forward/backward dispatch over tasks
// ---------------------------------------------------------------------------

struct ExampleRun {
    double loss{0.0};
    bool correct{false};
    double power_steps{0.0};  // mean power-method steps across aggregations
    std::size_t aggregations{0};
};

namespace detail {

inline void collect_power_steps(const EncodeCache& c, AggregatorKind agg, ExampleRun& run) {
    if (agg != AggregatorKind::eigen) return;
    run.power_steps += static_cast<double>(c.eig.steps_taken);
    run.aggregations += 1;
}

inline std::size_t argmax_index(const Vector& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace detail

/// Forward one example; when grads != nullptr also backpropagates with the
/// cotangent scaled by inv_batch.
inline ExampleRun run_example(const Model& model, const Example& ex, bool training, Rng* rng,
                              ModelGrads* grads, double inv_batch = 1.0) {
    ExampleRun run;
    Vector probs;
    const TaskKind task = model.cfg.task;
    if (task == TaskKind::document) {
        HierCache cache;
        probs = classify_hierarchical(model, ex.parts, training, rng, &cache);
        for (const auto& sc : cache.sentences)
            detail::collect_power_steps(sc.enc, model.cfg.aggregator, run);
        detail::collect_power_steps(cache.doc, model.cfg.aggregator, run);
        if (grads) {
            Vector dlogits = cross_entropy_grad_logits(probs, static_cast<std::size_t>(ex.label));
            scale(dlogits, inv_batch);
            classify_hierarchical_backward(model, cache, dlogits, *grads);
        }
    } else if (task == TaskKind::pair) {
        PairCache cache;
        probs = classify_pair(model, ex.parts.at(0), ex.parts.at(1), training, rng, &cache);
        detail::collect_power_steps(cache.premise.enc, model.cfg.aggregator, run);
        detail::collect_power_steps(cache.hypothesis.enc, model.cfg.aggregator, run);
        if (grads) {
            Vector dlogits = cross_entropy_grad_logits(probs, static_cast<std::size_t>(ex.label));
            scale(dlogits, inv_batch);
            classify_pair_backward(model, cache, dlogits, *grads);
        }
    } else {
        FlatCache cache;
        probs = classify_flat(model, ex.parts.at(0), training, rng, &cache);
        detail::collect_power_steps(cache.enc, model.cfg.aggregator, run);
        if (grads) {
            Vector dlogits = cross_entropy_grad_logits(probs, static_cast<std::size_t>(ex.label));
            scale(dlogits, inv_batch);
            classify_flat_backward(model, cache, dlogits, *grads);
        }
    }
    run.loss = cross_entropy(probs, static_cast<std::size_t>(ex.label));
    run.correct = detail::argmax_index(probs) == static_cast<std::size_t>(ex.label);
    if (run.aggregations > 0) run.power_steps /= static_cast<double>(run.aggregations);
    return run;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double accuracy{0.0};
    double mean_loss{0.0};
    double mean_power_steps{0.0};
    std::size_t correct{0};
    std::size_t total{0};
    std::vector<std::size_t> per_class_correct;
    std::vector<std::size_t> per_class_total;
};

/// Accuracy and per-class counts; dropout disabled, parameters untouched.
inline EvalResult evaluate(const Model& model, const Dataset& ds) {
    EvalResult res;
    res.per_class_correct.assign(ds.n_classes, 0);
    res.per_class_total.assign(ds.n_classes, 0);
    double steps_sum = 0.0;
    std::size_t steps_n = 0;
    for (const Example& ex : ds.examples) {
        const ExampleRun run = run_example(model, ex, /*training=*/false, nullptr, nullptr);
        res.total += 1;
        res.mean_loss += run.loss;
        const auto label = static_cast<std::size_t>(ex.label);
        res.per_class_total[label] += 1;
        if (run.correct) {
            res.correct += 1;
            res.per_class_correct[label] += 1;
        }
        if (run.aggregations > 0) {
            steps_sum += run.power_steps;
            steps_n += 1;
        }
    }
    if (res.total > 0) {
        res.accuracy = static_cast<double>(res.correct) / static_cast<double>(res.total);
        res.mean_loss /= static_cast<double>(res.total);
    }
    if (steps_n > 0) res.mean_power_steps = steps_sum / static_cast<double>(steps_n);
    return res;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    std::size_t epoch{0};
    double train_loss{0.0};
    double train_acc{0.0};
    double dev_acc{0.0};
    double lr{0.0};
    double mean_power_steps{0.0};
};

inline std::string to_json_line(const EpochLog& log) {
    nlohmann::json j;
    j["epoch"] = log.epoch;
    j["train_loss"] = log.train_loss;
    j["train_acc"] = log.train_acc;
    j["dev_acc"] = log.dev_acc;
    j["lr"] = log.lr;
    j["mean_power_steps"] = log.mean_power_steps;
    return j.dump();
}

/// Mutable loop state; serialized into checkpoints so training can resume
/// bit-for-bit.
struct TrainState {
    std::size_t step{0};
    std::size_t epoch{0};
    std::array<std::uint64_t, 4> rng_state{};
};

struct StoreSnapshot {
    std::vector<Vector> params, m, v;
    TrainState state;

    static StoreSnapshot take(const ParamStore& ps, const TrainState& st) {
        StoreSnapshot s;
        s.state = st;
        for (const auto& e : ps.entries) {
            s.params.emplace_back(e.param, e.param + e.size);
            s.m.push_back(e.m);
            s.v.push_back(e.v);
        }
        return s;
    }

    void restore(ParamStore& ps) const {
        for (std::size_t i = 0; i < ps.entries.size(); ++i) {
            auto& e = ps.entries[i];
            std::copy(params[i].begin(), params[i].end(), e.param);
            e.m = m[i];
            e.v = v[i];
        }
    }
};

struct TrainResult {
    std::vector<EpochLog> logs;
    std::size_t best_epoch{0};
    double best_dev_acc{0.0};
    double best_dev_loss{0.0};
    StoreSnapshot best;       // best-dev snapshot (params + moments + state)
    TrainState final_state;
};

namespace detail {

/// Contiguous slices of the shuffled order; any slice whose max length times
/// its size exceeds the token budget is halved, but never below the floor.
inline void split_batch(const Dataset& ds, const std::vector<std::size_t>& order,
                        std::size_t lo, std::size_t hi, const TrainConfig& cfg,
                        std::vector<std::pair<std::size_t, std::size_t>>& out) {
    const std::size_t size = hi - lo;
    std::size_t max_len = 0;
    for (std::size_t i = lo; i < hi; ++i)
        max_len = std::max(max_len, ds.examples[order[i]].max_part_len());
    if (size > cfg.batch_size_low_bound && max_len * size > cfg.batch_token_budget &&
        size >= 2) {
        const std::size_t mid = lo + size / 2;
        split_batch(ds, order, lo, mid, cfg, out);
        split_batch(ds, order, mid, hi, cfg, out);
    } else {
        out.emplace_back(lo, hi);
    }
}

}  // namespace detail

/// Trains from state.epoch up to cfg.epochs. grads must be the mirror the
/// ParamStore was built from. The sink receives one EpochLog per epoch.
/// Throws NumericalDivergence if the loss stops being finite.
inline TrainResult train_loop(Model& model, ModelGrads& grads, ParamStore& ps,
                              const Dataset& train, const Dataset& dev, const TrainConfig& cfg,
                              TrainState state,
                              const std::function<void(const EpochLog&)>& sink = nullptr) {
    cfg.validate();
    require(!train.examples.empty(), "train_loop: empty training set");

    Rng rng(cfg.seed);
    if (state.epoch > 0 || state.step > 0)
        rng.set_state(state.rng_state);

    TrainResult result;
    result.best_dev_acc = -1.0;
    result.best_dev_loss = 0.0;

    if (state.epoch >= cfg.epochs) {
        // zero epochs to run: return the initial snapshot untrained
        state.rng_state = rng.state();
        result.best = StoreSnapshot::take(ps, state);
        result.best_epoch = state.epoch;
        const EvalResult dev_res = dev.examples.empty() ? EvalResult{} : evaluate(model, dev);
        result.best_dev_acc = dev_res.accuracy;
        result.best_dev_loss = dev_res.mean_loss;
        result.final_state = state;
        return result;
    }

    std::vector<std::size_t> order(train.examples.size());

    for (std::size_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        // reshuffle from the identity so a resumed run sees the same order
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        std::vector<std::pair<std::size_t, std::size_t>> batches;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.initial_batch_size) {
            const std::size_t hi = std::min(order.size(), lo + cfg.initial_batch_size);
            detail::split_batch(train, order, lo, hi, cfg, batches);
        }

        double loss_sum = 0.0;
        std::size_t correct = 0;
        double steps_sum = 0.0;
        std::size_t steps_n = 0;
        for (const auto& [lo, hi] : batches) {
            ps.zero_grads();
            const double inv_batch = 1.0 / static_cast<double>(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                const Example& ex = train.examples[order[i]];
                const ExampleRun run =
                    run_example(model, ex, /*training=*/true, &rng, &grads, inv_batch);
                if (!std::isfinite(run.loss))
                    throw NumericalDivergence("train_loop: non-finite loss at epoch " +
                                              std::to_string(epoch));
                loss_sum += run.loss;
                if (run.correct) ++correct;
                if (run.aggregations > 0) {
                    steps_sum += run.power_steps;
                    steps_n += 1;
                }
            }
            if (cfg.grad_clip_norm > 0.0) {
                const double norm = ps.grad_norm();
                if (!std::isfinite(norm))
                    throw NumericalDivergence("train_loop: non-finite gradient norm");
                if (norm > cfg.grad_clip_norm) ps.scale_grads(cfg.grad_clip_norm / norm);
            }
            state.step += 1;
            adam_step(ps, cfg, state.step);
        }

        const EvalResult dev_res = dev.examples.empty() ? EvalResult{} : evaluate(model, dev);

        EpochLog log;
        log.epoch = epoch + 1;
        log.train_loss = loss_sum / static_cast<double>(train.examples.size());
        log.train_acc = static_cast<double>(correct) / static_cast<double>(train.examples.size());
        log.dev_acc = dev_res.accuracy;
        log.lr = cfg.effective_lr(state.step);
        log.mean_power_steps = steps_n > 0 ? steps_sum / static_cast<double>(steps_n) : 0.0;
        result.logs.push_back(log);
        if (sink) sink(log);

        state.epoch = epoch + 1;
        state.rng_state = rng.state();
        const bool better = dev_res.accuracy > result.best_dev_acc ||
                            (dev_res.accuracy == result.best_dev_acc &&
                             dev_res.mean_loss < result.best_dev_loss);
        if (better || result.best.params.empty()) {
            result.best = StoreSnapshot::take(ps, state);
            result.best_epoch = epoch + 1;
            result.best_dev_acc = dev_res.accuracy;
            result.best_dev_loss = dev_res.mean_loss;
        }
    }

    result.final_state = state;
    return result;
}

}  // namespace eigencent
