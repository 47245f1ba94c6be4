#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "rseq/errors.hpp"
#include "rseq/numerics/rng.hpp"
#include "rseq/numerics/tensor.hpp"

namespace rseq {

enum class CellKind { vanilla, gru, lstm };

inline const char* to_string(CellKind kind) {
    switch (kind) {
        case CellKind::vanilla: return "vanilla";
        case CellKind::gru: return "gru";
        case CellKind::lstm: return "lstm";
    }
    return "?";
}

inline CellKind parse_cell_kind(const std::string& s) {
    if (s == "vanilla" || s == "rnn") return CellKind::vanilla;
    if (s == "gru") return CellKind::gru;
    if (s == "lstm") return CellKind::lstm;
    throw ConfigError("unknown cell kind '" + s + "' (expected vanilla, gru or lstm)");
}

// Gate blocks stacked along the columns: vanilla [h], gru [r z n], lstm [i f g o].
inline std::size_t gate_count(CellKind kind) {
    switch (kind) {
        case CellKind::vanilla: return 1;
        case CellKind::gru: return 3;
        case CellKind::lstm: return 4;
    }
    return 0;
}

template <typename S>
using NamedTensor = std::pair<std::string, Tensor<S>>;

// Weight matrix with entries uniform in (-a, a), a = 1/sqrt(fan_in), where
// fan_in is the row count.
template <typename S>
Tensor<S> init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<S> w(fan_in * fan_out);
    for (auto& v : w) v = static_cast<S>(rng.uniform(-a, a));
    return Tensor<S>({fan_in, fan_out}, std::move(w), true);
}

template <typename S>
Tensor<S> init_const(std::size_t n, S value) {
    return Tensor<S>::full({n}, value, true);
}

template <typename S>
struct RnnCellParams {
    CellKind kind = CellKind::gru;
    std::size_t d_in = 0;
    std::size_t d_h = 0;
    Tensor<S> W;  // d_in x gates*d_h
    Tensor<S> U;  // d_h x gates*d_h
    Tensor<S> b;  // gates*d_h

    std::size_t gates() const { return gate_count(kind); }

    static RnnCellParams create(CellKind kind, std::size_t d_in, std::size_t d_h, Rng& rng) {
        RnnCellParams p;
        p.kind = kind;
        p.d_in = d_in;
        p.d_h = d_h;
        const auto g = gate_count(kind);
        p.W = init_weight<S>(d_in, g * d_h, rng);
        p.U = init_weight<S>(d_h, g * d_h, rng);
        p.b = init_const<S>(g * d_h, S(0));
        return p;
    }

    void validate() const {
        const auto g = gates();
        if (W.shape() != Shape{d_in, g * d_h} || U.shape() != Shape{d_h, g * d_h} || b.shape() != Shape{g * d_h}) {
            throw DimensionError(std::string("RnnCellParams: tensors do not conform to a ") + to_string(kind) +
                                 " cell with d_in=" + std::to_string(d_in) + ", d_h=" + std::to_string(d_h));
        }
    }
};

// Each head has its own query/key/value projections; the concatenated heads
// are mixed by a single output projection.
template <typename S>
struct AttentionParams {
    std::vector<Tensor<S>> Wq, Wk, Wv;  // per head, d_model x d_head
    Tensor<S> Wo;                       // heads*d_head x d_model

    std::size_t heads() const { return Wq.size(); }
    std::size_t d_head() const { return Wq.empty() ? 0 : Wq.front().dim(1); }

    static AttentionParams create(std::size_t d_model, std::size_t heads, Rng& rng) {
        if (heads == 0 || d_model % heads != 0) {
            throw ConfigError("attention: head count " + std::to_string(heads) + " does not divide d_model " +
                              std::to_string(d_model));
        }
        AttentionParams p;
        const auto dh = d_model / heads;
        for (std::size_t h = 0; h < heads; ++h) {
            p.Wq.push_back(init_weight<S>(d_model, dh, rng));
            p.Wk.push_back(init_weight<S>(d_model, dh, rng));
            p.Wv.push_back(init_weight<S>(d_model, dh, rng));
        }
        p.Wo = init_weight<S>(heads * dh, d_model, rng);
        return p;
    }
};

template <typename S>
struct FeedForwardParams {
    Tensor<S> W1, b1, W2, b2;

    static FeedForwardParams create(std::size_t d_model, std::size_t d_ff, Rng& rng) {
        FeedForwardParams p;
        p.W1 = init_weight<S>(d_model, d_ff, rng);
        p.b1 = init_const<S>(d_ff, S(0));
        p.W2 = init_weight<S>(d_ff, d_model, rng);
        p.b2 = init_const<S>(d_model, S(0));
        return p;
    }
};

template <typename S>
struct LayerNormParams {
    Tensor<S> gain, bias;

    static LayerNormParams create(std::size_t d) { return {init_const<S>(d, S(1)), init_const<S>(d, S(0))}; }
};

/// Learnable state of one layer: LocalRNN cell, attention, feed-forward and
/// the three normalizations that follow each residual connection.
template <typename S>
struct LayerParams {
    RnnCellParams<S> rnn;
    AttentionParams<S> attn;
    FeedForwardParams<S> ffn;
    LayerNormParams<S> ln_rnn, ln_attn, ln_ffn;
    std::size_t window = 1;

    std::size_t d_model() const { return rnn.d_h; }

    static LayerParams create(std::size_t d_model, std::size_t heads, std::size_t d_ff, std::size_t window,
                              CellKind cell, Rng& rng) {
        if (window < 1) throw ConfigError("window size M must be at least 1");
        LayerParams p;
        p.window = window;
        p.rnn = RnnCellParams<S>::create(cell, d_model, d_model, rng);
        p.attn = AttentionParams<S>::create(d_model, heads, rng);
        p.ffn = FeedForwardParams<S>::create(d_model, d_ff, rng);
        p.ln_rnn = LayerNormParams<S>::create(d_model);
        p.ln_attn = LayerNormParams<S>::create(d_model);
        p.ln_ffn = LayerNormParams<S>::create(d_model);
        return p;
    }

    // Fixed traversal order; checkpoints and optimizers rely on it.
    std::vector<NamedTensor<S>> named_parameters(const std::string& prefix = "") const {
        std::vector<NamedTensor<S>> out{
            {prefix + "rnn.W", rnn.W}, {prefix + "rnn.U", rnn.U}, {prefix + "rnn.b", rnn.b}};
        for (std::size_t h = 0; h < attn.heads(); ++h) {
            const auto i = std::to_string(h);
            out.emplace_back(prefix + "attn.Wq." + i, attn.Wq[h]);
            out.emplace_back(prefix + "attn.Wk." + i, attn.Wk[h]);
            out.emplace_back(prefix + "attn.Wv." + i, attn.Wv[h]);
        }
        out.emplace_back(prefix + "attn.Wo", attn.Wo);
        out.emplace_back(prefix + "ffn.W1", ffn.W1);
        out.emplace_back(prefix + "ffn.b1", ffn.b1);
        out.emplace_back(prefix + "ffn.W2", ffn.W2);
        out.emplace_back(prefix + "ffn.b2", ffn.b2);
        out.emplace_back(prefix + "ln_rnn.gain", ln_rnn.gain);
        out.emplace_back(prefix + "ln_rnn.bias", ln_rnn.bias);
        out.emplace_back(prefix + "ln_attn.gain", ln_attn.gain);
        out.emplace_back(prefix + "ln_attn.bias", ln_attn.bias);
        out.emplace_back(prefix + "ln_ffn.gain", ln_ffn.gain);
        out.emplace_back(prefix + "ln_ffn.bias", ln_ffn.bias);
        return out;
    }
};

// Parameter group of a named parameter: the name without its layer prefix
// and head index ("layers.1.attn.Wq.0" -> "attn.Wq").
inline std::string parameter_group(const std::string& name) {
    std::string g = name;
    if (g.rfind("layers.", 0) == 0) {
        const auto dot = g.find('.', 7);
        g = g.substr(dot + 1);
    }
    if (g.rfind("attn.W", 0) == 0 && g.size() > 7 && g[7] == '.') g = g.substr(0, 7);
    return g;
}

// The parameter groups of one layer, in traversal order.
inline const std::vector<std::string>& layer_parameter_groups() {
    static const std::vector<std::string> groups{
        "rnn.W",   "rnn.U",       "rnn.b",       "attn.Wq",      "attn.Wk",      "attn.Wv",     "attn.Wo",
        "ffn.W1",  "ffn.b1",      "ffn.W2",      "ffn.b2",       "ln_rnn.gain",  "ln_rnn.bias", "ln_attn.gain",
        "ln_attn.bias", "ln_ffn.gain", "ln_ffn.bias"};
    return groups;
}

}  // namespace rseq
