#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "rseq/data/batch.hpp"
#include "rseq/numerics/ops.hpp"

namespace rseq {

// Mean over all non-ignored positions of -log softmax(logits)[target].
template <typename S>
Tensor<S> cross_entropy_loss(const Tensor<S>& logits, std::span<const std::int32_t> targets) {
    return softmax_cross_entropy(logits, targets, kIgnoreTarget);
}

inline double perplexity(double mean_nll_nats) { return std::exp(mean_nll_nats); }

inline double bits_per_symbol(double mean_nll_nats) { return mean_nll_nats / std::numbers::ln2; }

struct AccuracyCount {
    std::size_t correct = 0;
    std::size_t total = 0;
    double value() const { return total ? double(correct) / double(total) : 0.0; }
};

// Argmax hits over non-ignored targets; ties go to the lowest class index.
template <typename S>
AccuracyCount accuracy_count(const Tensor<S>& logits, std::span<const std::int32_t> targets) {
    const auto c = logits.cols();
    const auto m = logits.size() / c;
    if (targets.size() != m) throw DimensionError("accuracy: target count does not match logits rows");
    AccuracyCount acc;
    for (std::size_t r = 0; r < m; ++r) {
        if (targets[r] == kIgnoreTarget) continue;
        const auto row = logits.data().subspan(r * c, c);
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        acc.correct += static_cast<std::int32_t>(best) == targets[r];
        ++acc.total;
    }
    return acc;
}

template <typename S>
double accuracy(const Tensor<S>& logits, std::span<const std::int32_t> targets) {
    return accuracy_count(logits, targets).value();
}

}  // namespace rseq
