#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "rseq/errors.hpp"
#include "rseq/kv_text.hpp"
#include "rseq/numerics/rng.hpp"
#include "rseq/numerics/tensor.hpp"

namespace rseq {

enum class OptimizerKind { sgd, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam" || s == "adaptive") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 5e-4;
    std::vector<double> lr_candidates;  // empty: no sweep declared
    double clip_norm = 0.5;             // 0 disables clipping
    double anneal_factor = 0.5;
    std::size_t patience = 1;
    double improve_threshold = 1e-4;
    std::size_t max_epochs = 10;
    // Training stops once lr falls below this fraction of its initial value.
    double min_lr_ratio = 1e-7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("optimizer: lr must be positive");
        if (!lr_candidates.empty() && std::find(lr_candidates.begin(), lr_candidates.end(), lr) == lr_candidates.end()) {
            throw ConfigError("optimizer: lr " + kv::fmt_double(lr) + " is not among lr_candidates " +
                              kv::fmt_doubles(lr_candidates));
        }
        if (clip_norm < 0) throw ConfigError("optimizer: clip_norm must be positive (or 0 to disable)");
        if (!(anneal_factor > 0 && anneal_factor < 1)) throw ConfigError("optimizer: anneal_factor must lie in (0, 1)");
        if (patience == 0) throw ConfigError("optimizer: patience must be at least 1");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) {
            throw ConfigError("optimizer: adam betas must lie in [0, 1) and eps must be positive");
        }
    }

    kv::Entries to_entries() const {
        return {{"optimizer", to_string(kind)},
                {"lr", kv::fmt_double(lr)},
                {"lr_candidates", kv::fmt_doubles(lr_candidates)},
                {"clip_norm", kv::fmt_double(clip_norm)},
                {"anneal_factor", kv::fmt_double(anneal_factor)},
                {"patience", std::to_string(patience)},
                {"improve_threshold", kv::fmt_double(improve_threshold)},
                {"max_epochs", std::to_string(max_epochs)},
                {"min_lr_ratio", kv::fmt_double(min_lr_ratio)},
                {"beta1", kv::fmt_double(beta1)},
                {"beta2", kv::fmt_double(beta2)},
                {"eps", kv::fmt_double(eps)}};
    }

    bool set(const std::string& key, const std::string& v) {
        if (key == "optimizer") kind = parse_optimizer_kind(v);
        else if (key == "lr") lr = kv::to_double(key, v);
        else if (key == "lr_candidates") lr_candidates = kv::to_doubles(key, v);
        else if (key == "clip_norm") clip_norm = kv::to_double(key, v);
        else if (key == "anneal_factor") anneal_factor = kv::to_double(key, v);
        else if (key == "patience") patience = kv::to_uint(key, v);
        else if (key == "improve_threshold") improve_threshold = kv::to_double(key, v);
        else if (key == "max_epochs") max_epochs = kv::to_uint(key, v);
        else if (key == "min_lr_ratio") min_lr_ratio = kv::to_double(key, v);
        else if (key == "beta1") beta1 = kv::to_double(key, v);
        else if (key == "beta2") beta2 = kv::to_double(key, v);
        else if (key == "eps") eps = kv::to_double(key, v);
        else return false;
        return true;
    }

    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Everything besides the parameters needed to continue a run exactly.
/// `m` and `v` are adam moments aligned with the model's parameter order,
/// empty until the first adam step. `rng` drives dropout and batch sampling.
template <typename S>
struct TrainState {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    double lr = 0;
    double initial_lr = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t plateau_counter = 0;
    std::vector<Tensor<S>> m, v;
    Rng rng;

    static TrainState start(const OptimizerConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        TrainState s;
        s.lr = s.initial_lr = cfg.lr;
        s.rng = Rng(seed);
        return s;
    }

    bool lr_exhausted(const OptimizerConfig& cfg) const { return lr < cfg.min_lr_ratio * initial_lr; }
};

}  // namespace rseq
