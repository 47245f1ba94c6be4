#pragma once

#include <cmath>
#include <vector>

#include "rseq/training/state.hpp"

namespace rseq {

/// Rescales all gradients jointly so their global L2 norm is at most
/// clip_norm. Returns the norm before clipping.
template <typename S>
double clip_gradients(std::vector<Tensor<S>>& params, double clip_norm) {
    if (!(clip_norm > 0)) throw ConfigError("clip_gradients: clip_norm must be positive");
    double sq = 0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (auto g : p.grad()) sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        const auto scale = static_cast<S>(clip_norm / norm);
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (auto& g : p.mutable_grad()) g *= scale;
        }
    }
    return norm;
}

/// One update with the current state.lr, then zeroes the gradients and
/// advances state.step.
template <typename S>
void optimizer_step(std::vector<Tensor<S>>& params, TrainState<S>& state, const OptimizerConfig& cfg) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) {
            throw UsageError("optimizer_step: parameter " + std::to_string(i) + " " + shape_str(params[i].shape()) +
                             " has no gradient");
        }
    }
    const auto lr = static_cast<S>(state.lr);
    if (cfg.kind == OptimizerKind::sgd) {
        for (auto& p : params) {
            auto w = p.mutable_data();
            const auto g = p.grad();
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
        }
    } else {
        if (state.m.empty()) {
            for (const auto& p : params) {
                state.m.push_back(Tensor<S>::zeros(p.shape()));
                state.v.push_back(Tensor<S>::zeros(p.shape()));
            }
        }
        if (state.m.size() != params.size()) throw UsageError("optimizer_step: moment count does not match parameters");
        const double t = double(state.step + 1);
        const auto b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
        const auto c1 = static_cast<S>(1.0 - std::pow(cfg.beta1, t));
        const auto c2 = static_cast<S>(1.0 - std::pow(cfg.beta2, t));
        const auto eps = static_cast<S>(cfg.eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto w = params[i].mutable_data();
            const auto g = params[i].grad();
            auto m = state.m[i].mutable_data();
            auto v = state.v[i].mutable_data();
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = b1 * m[j] + (S(1) - b1) * g[j];
                v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
                w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    ++state.step;
}

}  // namespace rseq
