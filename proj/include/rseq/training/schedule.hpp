#pragma once

#include "rseq/training/state.hpp"

namespace rseq {

// Anneals state.lr when the validation metric (lower is better) has not
// improved by improve_threshold for `patience` consecutive evaluations.
template <typename S>
double lr_on_plateau(TrainState<S>& state, double val_metric, const OptimizerConfig& cfg) {
    if (val_metric < state.best_val - cfg.improve_threshold) {
        state.best_val = val_metric;
        state.plateau_counter = 0;
    } else if (++state.plateau_counter >= cfg.patience) {
        state.lr *= cfg.anneal_factor;
        state.plateau_counter = 0;
    }
    return state.lr;
}

}  // namespace rseq
