#pragma once

#include <optional>
#include <type_traits>

#include "rseq/layers/params.hpp"
#include "rseq/numerics/ops.hpp"

namespace rseq {

template <typename S>
struct CellState {
    Tensor<S> h;
    Tensor<S> c;  // defined only for lstm
};

namespace detail {

// One step given the input already multiplied by W (bias not yet added).
// Rows are independent sequences.
//   vanilla: h' = tanh(xW + hU + b)
//   gru:     r = sig(xW_r + hU_r + b_r), z = sig(xW_z + hU_z + b_z)
//            n = tanh(xW_n + b_n + r * hU_n), h' = (1 - z) * n + z * h
//   lstm:    i, f, o = sig(.), g = tanh(.), c' = f * c + i * g, h' = o * tanh(c')
template <typename S>
CellState<S> cell_step_projected(const RnnCellParams<S>& p, const Tensor<S>& xw, const Tensor<S>& h,
                                 const Tensor<S>& c) {
    const auto d = p.d_h;
    const auto gx = add_bias(xw, p.b);
    const auto gh = matmul(h, p.U);
    switch (p.kind) {
        case CellKind::vanilla:
            return {rseq::tanh(add(gx, gh)), {}};
        case CellKind::gru: {
            const auto r = sigmoid(add(slice_cols(gx, 0, d), slice_cols(gh, 0, d)));
            const auto z = sigmoid(add(slice_cols(gx, d, d), slice_cols(gh, d, d)));
            const auto n = rseq::tanh(add(slice_cols(gx, 2 * d, d), mul(r, slice_cols(gh, 2 * d, d))));
            return {add(n, mul(z, sub(h, n))), {}};
        }
        case CellKind::lstm: {
            const auto pre = add(gx, gh);
            const auto i = sigmoid(slice_cols(pre, 0, d));
            const auto f = sigmoid(slice_cols(pre, d, d));
            const auto g = rseq::tanh(slice_cols(pre, 2 * d, d));
            const auto o = sigmoid(slice_cols(pre, 3 * d, d));
            auto c_next = add(mul(f, c), mul(i, g));
            return {mul(o, rseq::tanh(c_next)), c_next};
        }
    }
    throw UsageError("cell_step: unknown cell kind");
}

}  // namespace detail

/// One recurrence step of the configured cell. x is [n x d_in], h_prev and
/// c_prev are [n x d_h]; an lstm cell requires c_prev and the others reject it.
template <typename S>
CellState<S> rnn_cell_step(const RnnCellParams<S>& p, const Tensor<S>& x, const Tensor<S>& h_prev,
                           const std::optional<std::type_identity_t<Tensor<S>>>& c_prev = std::nullopt) {
    p.validate();
    if (p.kind == CellKind::lstm && !c_prev) throw UsageError("rnn_cell_step: lstm cell requires a cell state");
    if (p.kind != CellKind::lstm && c_prev) {
        throw UsageError(std::string("rnn_cell_step: ") + to_string(p.kind) + " cell takes no cell state");
    }
    if (x.rank() != 2 || x.dim(1) != p.d_in || h_prev.shape() != Shape{x.dim(0), p.d_h}) {
        throw DimensionError("rnn_cell_step: x " + shape_str(x.shape()) + " / h " + shape_str(h_prev.shape()) +
                             " do not conform to d_in=" + std::to_string(p.d_in) + ", d_h=" + std::to_string(p.d_h));
    }
    if (c_prev && c_prev->shape() != h_prev.shape()) throw DimensionError("rnn_cell_step: c/h shape mismatch");
    return detail::cell_step_projected(p, matmul(x, p.W), h_prev, c_prev ? *c_prev : Tensor<S>{});
}

}  // namespace rseq
