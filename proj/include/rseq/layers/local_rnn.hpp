#pragma once

#include <cstdint>
#include <vector>

#include "rseq/layers/rnn_cell.hpp"

namespace rseq {

// Prepends M-1 zero rows to a [T x d] sequence.
template <typename S>
Tensor<S> pad_left(const Tensor<S>& x, std::size_t window) {
    if (window < 1) throw ConfigError("pad_left: window size must be at least 1");
    detail::require_rank2(x, "pad_left");
    const auto T = x.dim(0);
    if (T < 1) throw DimensionError("pad_left: empty sequence");
    std::vector<std::int64_t> idx(T + window - 1, -1);
    for (std::size_t t = 0; t < T; ++t) idx[window - 1 + t] = static_cast<std::int64_t>(t);
    return gather_rows(x, std::move(idx));
}

/// LocalRNN over a batch laid out as [B*T x d]: for every position t the
/// shared cell runs from a zero state over the M positions ending at t
/// (zero rows standing in for positions before the start), and the last
/// hidden state becomes h_t.
///
/// All B*T windows advance together, one matrix step per window offset, so
/// the work is M batched cell steps rather than B*T sequential runs. The
/// input projection xW is computed once per position and gathered into
/// each window; a padding row gathers as zeros, which is exactly the
/// projection of a zero input.
template <typename S>
Tensor<S> local_rnn_forward(const RnnCellParams<S>& cell, std::size_t window, const Tensor<S>& x,
                            std::size_t seq_len) {
    cell.validate();
    if (window < 1) throw ConfigError("local_rnn: window size must be at least 1");
    detail::require_rank2(x, "local_rnn");
    const auto rows = x.dim(0);
    const auto T = seq_len;
    if (T < 1 || rows % T != 0) throw DimensionError("local_rnn: rows not a multiple of the sequence length");
    if (x.dim(1) != cell.d_in) throw DimensionError("local_rnn: input width " + shape_str(x.shape()) + " vs d_in");

    const auto xw = matmul(x, cell.W);
    auto h = Tensor<S>::zeros({rows, cell.d_h});
    auto c = cell.kind == CellKind::lstm ? Tensor<S>::zeros({rows, cell.d_h}) : Tensor<S>{};
    const auto M = static_cast<std::int64_t>(window);
    for (std::int64_t j = 0; j < M; ++j) {
        std::vector<std::int64_t> idx(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto t = static_cast<std::int64_t>(r % T);
            const auto src = t - (M - 1) + j;
            idx[r] = src < 0 ? -1 : static_cast<std::int64_t>(r) - (M - 1) + j;
        }
        auto next = detail::cell_step_projected(cell, gather_rows(xw, std::move(idx)), h, c);
        h = std::move(next.h);
        c = std::move(next.c);
    }
    return h;
}

template <typename S>
Tensor<S> local_rnn_forward(const LayerParams<S>& p, const Tensor<S>& x, std::size_t seq_len) {
    return local_rnn_forward(p.rnn, p.window, x, seq_len);
}

}  // namespace rseq
