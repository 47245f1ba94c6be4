#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rseq/data/batch.hpp"
#include "rseq/errors.hpp"

namespace rseq {

/// Cuts a token stream into B contiguous tracks of floor(len/B) tokens
/// (the remainder is dropped) and walks them T tokens at a time. Batch i
/// holds track positions [iT, iT+T) as inputs and [iT+1, iT+T+1) as
/// targets, so there are floor((len/B - 1)/T) batches.
inline std::vector<Batch> batchify(const std::vector<std::int32_t>& stream, std::size_t batch_size,
                                   std::size_t seq_len) {
    if (batch_size == 0 || seq_len == 0) throw DataError("batchify: batch size and length must be positive");
    if (stream.size() < batch_size * (seq_len + 1)) {
        throw DataError("batchify: stream of " + std::to_string(stream.size()) + " tokens is shorter than B*(T+1) = " +
                        std::to_string(batch_size * (seq_len + 1)));
    }
    const auto track = stream.size() / batch_size;
    const auto count = (track - 1) / seq_len;
    std::vector<Batch> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Batch b;
        b.task = TaskKind::next_step;
        b.batch_size = batch_size;
        b.seq_len = seq_len;
        b.tokens.resize(batch_size * seq_len);
        b.targets.resize(batch_size * seq_len);
        for (std::size_t k = 0; k < batch_size; ++k) {
            for (std::size_t t = 0; t < seq_len; ++t) {
                const auto src = k * track + i * seq_len + t;
                b.tokens[k * seq_len + t] = stream[src];
                b.targets[k * seq_len + t] = stream[src + 1];
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace rseq
