#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rseq/errors.hpp"

namespace rseq {

enum class TaskKind { next_step, seq_classify };

inline const char* to_string(TaskKind k) { return k == TaskKind::next_step ? "next_step" : "seq_classify"; }

inline TaskKind parse_task_kind(const std::string& s) {
    if (s == "next_step") return TaskKind::next_step;
    if (s == "seq_classify") return TaskKind::seq_classify;
    throw ConfigError("unknown task kind '" + s + "' (expected next_step or seq_classify)");
}

// Target id that contributes nothing to loss or accuracy.
inline constexpr std::int32_t kIgnoreTarget = -1;

/// B equal-length sequences. Inputs are token ids [B*T] when feature_dim is
/// 0, real features [B*T*feature_dim] otherwise. Targets are [B*T] for
/// next_step (aligned with inputs) and [B] for seq_classify.
struct Batch {
    TaskKind task = TaskKind::next_step;
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::size_t feature_dim = 0;
    std::vector<std::int32_t> tokens;
    std::vector<double> features;
    std::vector<std::int32_t> targets;

    bool token_inputs() const { return feature_dim == 0; }

    void validate() const {
        const auto n = batch_size * seq_len;
        if (n == 0) throw DataError("batch: empty batch");
        if (token_inputs() ? tokens.size() != n : features.size() != n * feature_dim) {
            throw DataError("batch: input size does not match B*T");
        }
        const auto want = task == TaskKind::next_step ? n : batch_size;
        if (targets.size() != want) {
            throw DataError("batch: expected " + std::to_string(want) + " targets for task " + to_string(task) +
                            ", got " + std::to_string(targets.size()));
        }
    }
};

}  // namespace rseq
