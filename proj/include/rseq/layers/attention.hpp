#pragma once

#include <cmath>

#include "rseq/layers/params.hpp"
#include "rseq/numerics/ops.hpp"

namespace rseq {

// Single-query scaled dot-product attention.
// q [1 x d_k], keys [t x d_k], values [t x d_v] -> [1 x d_v]
template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& keys, const Tensor<S>& values) {
    detail::require_rank2(keys, "scaled_dot_attention");
    detail::require_rank2(values, "scaled_dot_attention");
    if (keys.dim(0) == 0) throw UsageError("scaled_dot_attention: no positions to attend to");
    if (values.dim(0) != keys.dim(0)) throw DimensionError("scaled_dot_attention: key/value counts differ");
    const auto factor = S(1) / std::sqrt(static_cast<S>(keys.dim(1)));
    const auto alpha = softmax_rows(scale(matmul_nt(q, keys), factor));
    return matmul(alpha, values);
}

/// Causal multi-head attention over [B*T x d_model]. Position t of each
/// sequence queries positions 1..t of the same sequence, itself included.
/// There are no position embeddings; heads are concatenated and projected
/// by W^o.
template <typename S>
Tensor<S> multi_head_attention(const AttentionParams<S>& p, const Tensor<S>& h, std::size_t seq_len) {
    detail::require_rank2(h, "multi_head_attention");
    if (seq_len < 1) throw DimensionError("multi_head_attention: empty sequence");
    const auto factor = S(1) / std::sqrt(static_cast<S>(p.d_head()));
    std::vector<Tensor<S>> heads;
    heads.reserve(p.heads());
    for (std::size_t i = 0; i < p.heads(); ++i) {
        const auto q = matmul(h, p.Wq[i]);
        const auto k = matmul(h, p.Wk[i]);
        const auto v = matmul(h, p.Wv[i]);
        const auto alpha = causal_softmax(causal_scores(q, k, seq_len, factor), seq_len);
        heads.push_back(causal_weighted_sum(alpha, v, seq_len));
    }
    return matmul(concat_cols(heads), p.Wo);
}

}  // namespace rseq
