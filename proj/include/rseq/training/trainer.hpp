#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "rseq/model/metrics.hpp"
#include "rseq/model/model.hpp"
#include "rseq/training/optimizer.hpp"
#include "rseq/training/schedule.hpp"

namespace rseq {

enum class MetricKind { nll, bpc, ppl, accuracy };

inline const char* to_string(MetricKind k) {
    switch (k) {
        case MetricKind::nll: return "nll";
        case MetricKind::bpc: return "bpc";
        case MetricKind::ppl: return "ppl";
        case MetricKind::accuracy: return "accuracy";
    }
    return "?";
}

inline MetricKind parse_metric_kind(const std::string& s) {
    if (s == "nll") return MetricKind::nll;
    if (s == "bpc") return MetricKind::bpc;
    if (s == "ppl" || s == "perplexity") return MetricKind::ppl;
    if (s == "accuracy" || s == "acc") return MetricKind::accuracy;
    throw ConfigError("unknown metric '" + s + "' (expected nll, bpc, ppl or accuracy)");
}

struct EpochMetrics {
    std::uint64_t epoch = 0;
    double mean_loss = 0;
    std::size_t steps = 0;
    std::int64_t wall_ms = 0;
};

struct EvalResult {
    double loss = 0;    // mean NLL in nats per counted target
    double metric = 0;
    std::size_t count = 0;
};

inline std::size_t counted_targets(const Batch& b) {
    std::size_t n = 0;
    for (auto t : b.targets) n += t != kIgnoreTarget;
    return n;
}

/// forward -> loss -> backward -> clip -> update on one batch. Returns the
/// loss before the update.
template <typename S>
double train_step(const RTransformer<S>& model, const Batch& batch, TrainState<S>& state,
                  const OptimizerConfig& cfg) {
    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();
    const auto loss = cross_entropy_loss(model.forward(batch, true, state.rng), batch.targets);
    const double value = loss.item();
    backward(loss);
    if (cfg.clip_norm > 0) clip_gradients(params, cfg.clip_norm);
    optimizer_step(params, state, cfg);
    return value;
}

// Called after every step with (state, loss).
template <typename S>
using StepHook = std::function<void(const TrainState<S>&, double)>;

/// One pass over `batches` in order. A NumericFault propagates out of the
/// epoch; state.epoch only advances on completion.
template <typename S>
EpochMetrics train_epoch(const RTransformer<S>& model, const std::vector<Batch>& batches, TrainState<S>& state,
                         const OptimizerConfig& cfg, const std::type_identity_t<StepHook<S>>& hook = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochMetrics m;
    double total = 0;
    for (const auto& b : batches) {
        const double loss = train_step(model, b, state, cfg);
        total += loss;
        ++m.steps;
        if (hook) hook(state, loss);
    }
    ++state.epoch;
    m.epoch = state.epoch;
    m.mean_loss = m.steps ? total / double(m.steps) : 0.0;
    m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

/// Dropout-free pass over `batches`; loss is weighted by counted targets.
template <typename S>
EvalResult evaluate(const RTransformer<S>& model, const std::vector<Batch>& batches, MetricKind kind) {
    NoGradGuard no_grad;
    Rng unused(0);
    double nll = 0;
    AccuracyCount acc;
    EvalResult r;
    for (const auto& b : batches) {
        const auto logits = model.forward(b, false, unused);
        const auto n = counted_targets(b);
        nll += cross_entropy_loss(logits, b.targets).item() * double(n);
        r.count += n;
        const auto a = accuracy_count(logits, b.targets);
        acc.correct += a.correct;
        acc.total += a.total;
    }
    r.loss = r.count ? nll / double(r.count) : 0.0;
    switch (kind) {
        case MetricKind::nll: r.metric = r.loss; break;
        case MetricKind::bpc: r.metric = bits_per_symbol(r.loss); break;
        case MetricKind::ppl: r.metric = perplexity(r.loss); break;
        case MetricKind::accuracy: r.metric = acc.value(); break;
    }
    return r;
}

}  // namespace rseq
