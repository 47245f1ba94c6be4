#pragma once

#include <cstdint>

#include "rseq/data/batch.hpp"
#include "rseq/numerics/rng.hpp"

namespace rseq {

// Copy-memory task. Each sequence is
//   payload (L symbols) | K blanks | trigger | L-1 blanks
// and the model must emit the payload, in order, from the trigger onwards.
// Only those L positions carry targets; the rest are kIgnoreTarget.
struct CopyTaskSpec {
    std::size_t num_symbols = 8;
    std::size_t payload_len = 10;
    std::size_t blank_len = 40;

    static constexpr std::int32_t kBlank = 0;
    static constexpr std::int32_t kTrigger = 1;

    std::size_t seq_len() const { return 2 * payload_len + blank_len; }
    std::size_t vocab_size() const { return num_symbols + 2; }
    // First position whose target is part of the recall span.
    std::size_t recall_start() const { return payload_len + blank_len; }
};

inline Batch gen_copy_task(Rng& rng, std::size_t batch_size, const CopyTaskSpec& spec) {
    if (spec.num_symbols < 2) throw ConfigError("copy task: need at least 2 payload symbols");
    if (spec.payload_len < 1) throw ConfigError("copy task: payload length must be positive");
    const auto T = spec.seq_len();
    Batch b;
    b.task = TaskKind::next_step;
    b.batch_size = batch_size;
    b.seq_len = T;
    b.tokens.assign(batch_size * T, CopyTaskSpec::kBlank);
    b.targets.assign(batch_size * T, kIgnoreTarget);
    for (std::size_t k = 0; k < batch_size; ++k) {
        auto* tok = b.tokens.data() + k * T;
        auto* tgt = b.targets.data() + k * T;
        for (std::size_t i = 0; i < spec.payload_len; ++i) {
            const auto sym = static_cast<std::int32_t>(2 + rng.uniform_int(spec.num_symbols));
            tok[i] = sym;
            tgt[spec.recall_start() + i] = sym;
        }
        tok[spec.recall_start()] = CopyTaskSpec::kTrigger;
    }
    return b;
}

inline Batch gen_copy_task(Rng& rng, std::size_t batch_size, std::size_t num_symbols, std::size_t payload_len,
                           std::size_t blank_len) {
    return gen_copy_task(rng, batch_size, CopyTaskSpec{num_symbols, payload_len, blank_len});
}

}  // namespace rseq
