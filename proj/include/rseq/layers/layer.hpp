#pragma once

#include "rseq/layers/attention.hpp"
#include "rseq/layers/local_rnn.hpp"
#include "rseq/layers/params.hpp"
#include "rseq/numerics/ops.hpp"

namespace rseq {

inline constexpr double kLayerNormEps = 1e-5;

// max(0, u W1 + b1) W2 + b2, row by row.
template <typename S>
Tensor<S> feed_forward(const FeedForwardParams<S>& p, const Tensor<S>& u) {
    return add_bias(matmul(relu(add_bias(matmul(u, p.W1), p.b1)), p.W2), p.b2);
}

template <typename S>
Tensor<S> feed_forward(const LayerParams<S>& p, const Tensor<S>& u) {
    return feed_forward(p.ffn, u);
}

/// One layer on [B*T x d_model]:
///   h  = LocalRNN(x)              hh = LayerNorm(h + x)
///   u  = MultiHeadAttention(hh)   uh = LayerNorm(u + hh)
///   m  = FeedForward(uh)          out = LayerNorm(m + uh)
/// In training mode each sub-layer output passes through dropout before its
/// residual addition.
template <typename S>
Tensor<S> layer_forward(const LayerParams<S>& p, const Tensor<S>& x, std::size_t seq_len, double dropout_rate,
                        bool training, Rng& rng) {
    const double rate = training ? dropout_rate : 0.0;
    const auto eps = static_cast<S>(kLayerNormEps);
    const auto h = dropout(local_rnn_forward(p, x, seq_len), rate, rng);
    const auto hh = layer_norm(add(h, x), p.ln_rnn.gain, p.ln_rnn.bias, eps);
    const auto u = dropout(multi_head_attention(p.attn, hh, seq_len), rate, rng);
    const auto uh = layer_norm(add(u, hh), p.ln_attn.gain, p.ln_attn.bias, eps);
    const auto m = dropout(feed_forward(p.ffn, uh), rate, rng);
    return layer_norm(add(m, uh), p.ln_ffn.gain, p.ln_ffn.bias, eps);
}

}  // namespace rseq
