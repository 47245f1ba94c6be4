#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rseq/numerics/rng.hpp"
#include "rseq/numerics/tensor.hpp"

// Differentiable operations. Everything the layers compute is a composition
// of the functions in this header; each one records its own gradient rule.
// Matrix operations take rank-2 tensors in row-major order. Row-wise
// operations treat the last axis as the row.

namespace rseq {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ConstMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using MutMap = Eigen::Map<RowMat<S>>;

template <typename S>
void require_rank2(const Tensor<S>& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
    }
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

}  // namespace detail

// a [m x k] . b [k x n]
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents disagree, " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()));
    }
    std::vector<S> out(m * n);
    detail::MutMap<S>(out.data(), m, n).noalias() =
        detail::ConstMap<S>(a.data().data(), m, k) * detail::ConstMap<S>(b.data().data(), k, n);
    return detail::record<S>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](auto in) {
        return [=](std::span<const S> g) {
            detail::ConstMap<S> G(g.data(), m, n);
            if (auto ga = detail::grad_of(in[0]); !ga.empty()) {
                detail::MutMap<S>(ga.data(), m, k).noalias() +=
                    G * detail::ConstMap<S>(in[1]->data.data(), k, n).transpose();
            }
            if (auto gb = detail::grad_of(in[1]); !gb.empty()) {
                detail::MutMap<S>(gb.data(), k, n).noalias() +=
                    detail::ConstMap<S>(in[0]->data.data(), m, k).transpose() * G;
            }
        };
    });
}

// a [m x k] . b^T where b is [n x k]
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw DimensionError("matmul_nt: inner extents disagree, " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()) + "^T");
    }
    std::vector<S> out(m * n);
    detail::MutMap<S>(out.data(), m, n).noalias() =
        detail::ConstMap<S>(a.data().data(), m, k) * detail::ConstMap<S>(b.data().data(), n, k).transpose();
    return detail::record<S>("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](auto in) {
        return [=](std::span<const S> g) {
            detail::ConstMap<S> G(g.data(), m, n);
            if (auto ga = detail::grad_of(in[0]); !ga.empty()) {
                detail::MutMap<S>(ga.data(), m, k).noalias() += G * detail::ConstMap<S>(in[1]->data.data(), n, k);
            }
            if (auto gb = detail::grad_of(in[1]); !gb.empty()) {
                detail::MutMap<S>(gb.data(), n, k).noalias() +=
                    G.transpose() * detail::ConstMap<S>(in[0]->data.data(), m, k);
            }
        };
    });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::record<S>("add", a.shape(), std::move(out), {a, b}, [](auto in) {
        return [=](std::span<const S> g) {
            for (int j = 0; j < 2; ++j) {
                if (auto gx = detail::grad_of(in[j]); !gx.empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                }
            }
        };
    });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::record<S>("sub", a.shape(), std::move(out), {a, b}, [](auto in) {
        return [=](std::span<const S> g) {
            if (auto ga = detail::grad_of(in[0]); !ga.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (auto gb = detail::grad_of(in[1]); !gb.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        };
    });
}

// Elementwise product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return detail::record<S>("mul", a.shape(), std::move(out), {a, b}, [](auto in) {
        return [=](std::span<const S> g) {
            if (auto ga = detail::grad_of(in[0]); !ga.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * in[1]->data[i];
            }
            if (auto gb = detail::grad_of(in[1]); !gb.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * in[0]->data[i];
            }
        };
    });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return detail::record<S>("scale", a.shape(), std::move(out), {a}, [factor](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        };
    });
}

// Adds a vector to every row: a [.. x n] + bias [n].
template <typename S>
Tensor<S> add_bias(const Tensor<S>& a, const Tensor<S>& bias) {
    const auto n = a.cols();
    if (bias.rank() != 1 || bias.dim(0) != n) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                             shape_str(a.shape()));
    }
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + bias[i % n];
    return detail::record<S>("add_bias", a.shape(), std::move(out), {a, bias}, [n](auto in) {
        return [=](std::span<const S> g) {
            if (auto ga = detail::grad_of(in[0]); !ga.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (auto gb = detail::grad_of(in[1]); !gb.empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
            }
        };
    });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-a[i]));
    std::vector<S> y = out;
    return detail::record<S>("sigmoid", a.shape(), std::move(out), {a}, [y = std::move(y)](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
        };
    });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
    std::vector<S> y = out;
    return detail::record<S>("tanh", a.shape(), std::move(out), {a}, [y = std::move(y)](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (S(1) - y[i] * y[i]);
        };
    });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > S(0) ? a[i] : S(0);
    if (auto* digest = detail::kink_digest()) {
        for (std::size_t i = 0; i < out.size(); ++i) digest->mix(a[i] > S(0));
    }
    return detail::record<S>("relu", a.shape(), std::move(out), {a}, [](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (in[0]->data[i] > S(0)) ga[i] += g[i];
            }
        };
    });
}

// Softmax over the last axis, with the row maximum subtracted first.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
    const auto n = a.cols();
    if (a.rank() == 0 || n == 0) throw DimensionError("softmax_rows: empty row in " + shape_str(a.shape()));
    const auto m = a.size() / n;
    std::vector<S> out(a.size());
    for (std::size_t r = 0; r < m; ++r) {
        const S* x = a.data().data() + r * n;
        S* y = out.data() + r * n;
        const S mx = *std::max_element(x, x + n);
        S z = 0;
        for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    std::vector<S> y = out;
    return detail::record<S>("softmax_rows", a.shape(), std::move(out), {a}, [m, n, y = std::move(y)](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t r = 0; r < m; ++r) {
                S dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
                for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
            }
        };
    });
}

/// Per-row normalization over the last axis:
///   gain * (a - mean) / sqrt(var + eps) + bias
/// with the biased (population) variance.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& a, const Tensor<S>& gain, const Tensor<S>& bias, S eps = S(1e-5)) {
    const auto d = a.cols();
    if (a.rank() == 0 || d == 0) throw DimensionError("layer_norm: empty feature axis");
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                             " do not match feature width of " + shape_str(a.shape()));
    }
    if (!(eps > S(0))) throw UsageError("layer_norm: eps must be positive");
    const auto m = a.size() / d;
    std::vector<S> out(a.size()), xhat(a.size()), inv_std(m);
    for (std::size_t r = 0; r < m; ++r) {
        const S* x = a.data().data() + r * d;
        S mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += x[j];
        mean /= S(d);
        S var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= S(d);
        inv_std[r] = S(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (x[j] - mean) * inv_std[r];
            out[r * d + j] = gain[j] * xhat[r * d + j] + bias[j];
        }
    }
    return detail::record<S>(
        "layer_norm", a.shape(), std::move(out), {a, gain, bias},
        [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](auto in) {
            return [=](std::span<const S> g) {
                auto ga = detail::grad_of(in[0]);
                auto gg = detail::grad_of(in[1]);
                auto gb = detail::grad_of(in[2]);
                const auto& gain_v = in[1]->data;
                for (std::size_t r = 0; r < m; ++r) {
                    const S* gr = g.data() + r * d;
                    const S* xr = xhat.data() + r * d;
                    if (!gg.empty()) {
                        for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j];
                    }
                    if (!gb.empty()) {
                        for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
                    }
                    if (!ga.empty()) {
                        S sum_dy = 0, sum_dy_x = 0;
                        for (std::size_t j = 0; j < d; ++j) {
                            const S dy = gr[j] * gain_v[j];
                            sum_dy += dy;
                            sum_dy_x += dy * xr[j];
                        }
                        const S inv_d = S(1) / S(d);
                        for (std::size_t j = 0; j < d; ++j) {
                            const S dy = gr[j] * gain_v[j];
                            ga[r * d + j] += inv_std[r] * (dy - inv_d * sum_dy - xr[j] * inv_d * sum_dy_x);
                        }
                    }
                }
            };
        });
}

// Inverted dropout: zeroes each entry with probability `rate` and scales the
// survivors by 1/(1-rate). rate == 0 returns the input unchanged.
template <typename S>
Tensor<S> dropout(const Tensor<S>& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
    if (rate == 0.0) return a;
    const S keep_scale = S(1.0 / (1.0 - rate));
    std::vector<S> mask(a.size());
    for (auto& v : mask) v = rng.bernoulli(rate) ? S(0) : keep_scale;
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
    return detail::record<S>("dropout", a.shape(), std::move(out), {a}, [mask = std::move(mask)](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
        };
    });
}

// Columns [begin, begin + count) of a matrix.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, std::size_t begin, std::size_t count) {
    detail::require_rank2(a, "slice_cols");
    const auto m = a.dim(0), n = a.dim(1);
    if (begin + count > n) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") exceeds " + shape_str(a.shape()));
    }
    std::vector<S> out(m * count);
    for (std::size_t r = 0; r < m; ++r) {
        std::copy_n(a.data().data() + r * n + begin, count, out.data() + r * count);
    }
    return detail::record<S>("slice_cols", {m, count}, std::move(out), {a}, [m, n, begin, count](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t j = 0; j < count; ++j) ga[r * n + begin + j] += g[r * count + j];
            }
        };
    });
}

// Horizontal concatenation of matrices with equal row counts.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    if (parts.size() == 1) return parts.front();
    const auto m = parts.front().dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
        widths.push_back(p.dim(1));
        total += p.dim(1);
    }
    std::vector<S> out(m * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        for (std::size_t r = 0; r < m; ++r) {
            std::copy_n(parts[k].data().data() + r * widths[k], widths[k], out.data() + r * total + off);
        }
        off += widths[k];
    }
    // record() takes an initializer list, so concatenation wires its node by hand.
    if (!detail::all_finite<S>(out)) throw NumericFault("concat_cols");
    Tensor<S> result({m, total}, std::move(out));
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (!detail::grad_mode() || !any) return result;
    auto node = std::make_shared<detail::TapeNode<S>>();
    node->op = "concat_cols";
    node->seq = detail::tape_clock().fetch_add(1, std::memory_order_relaxed);
    std::vector<detail::TensorImpl<S>*> raw;
    for (const auto& p : parts) {
        node->inputs.push_back(p.impl());
        raw.push_back(p.impl().get());
    }
    node->backward = [=](std::span<const S> g) {
        std::size_t o = 0;
        for (std::size_t k = 0; k < raw.size(); ++k) {
            if (auto gp = detail::grad_of(raw[k]); !gp.empty()) {
                for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t j = 0; j < widths[k]; ++j) gp[r * widths[k] + j] += g[r * total + o + j];
                }
            }
            o += widths[k];
        }
    };
    result.impl()->node = std::move(node);
    result.set_requires_grad(true);
    return result;
}

// Row gather: out[i] = a[index[i]], or a zero row when index[i] < 0.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, std::vector<std::int64_t> index) {
    detail::require_rank2(a, "gather_rows");
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<S> out(index.size() * n, S(0));
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0) continue;
        if (static_cast<std::size_t>(index[i]) >= m) {
            throw DimensionError("gather_rows: row " + std::to_string(index[i]) + " out of range for " +
                                 shape_str(a.shape()));
        }
        std::copy_n(a.data().data() + index[i] * n, n, out.data() + i * n);
    }
    const auto rows = index.size();
    return detail::record<S>("gather_rows", {rows, n}, std::move(out), {a}, [n, index = std::move(index)](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t i = 0; i < index.size(); ++i) {
                if (index[i] < 0) continue;
                S* dst = ga.data() + index[i] * n;
                for (std::size_t j = 0; j < n; ++j) dst[j] += g[i * n + j];
            }
        };
    });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<S> out(a.data().begin(), a.data().end());
    return detail::record<S>("reshape", std::move(shape), std::move(out), {a}, [](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    S total = 0;
    for (auto v : a.data()) total += v;
    return detail::record<S>("sum", {}, {total}, {a}, [](auto in) {
        return [=](std::span<const S> g) {
            auto ga = detail::grad_of(in[0]);
            for (auto& v : ga) v += g[0];
        };
    });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
    if (a.size() == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(a), S(1) / S(a.size()));
}

/// Mean negative log-likelihood of integer targets under softmax(logits).
/// logits are [.. x C]; one target per row; targets equal to `ignore` are
/// skipped. Returns 0 when every target is ignored.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, std::span<const std::int32_t> targets,
                                std::int32_t ignore = -1) {
    const auto c = logits.cols();
    if (logits.rank() == 0 || c == 0) throw DimensionError("softmax_cross_entropy: empty class axis");
    const auto m = logits.size() / c;
    if (targets.size() != m) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(m) + " rows");
    }
    std::vector<S> prob(logits.size());
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::size_t counted = 0;
    double total = 0;
    for (std::size_t r = 0; r < m; ++r) {
        if (tgt[r] == ignore) continue;
        if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= c) {
            throw DataError("softmax_cross_entropy: target " + std::to_string(tgt[r]) + " at row " +
                            std::to_string(r) + " outside [0, " + std::to_string(c) + ")");
        }
        const S* x = logits.data().data() + r * c;
        S* p = prob.data() + r * c;
        const S mx = *std::max_element(x, x + c);
        S z = 0;
        for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < c; ++j) p[j] /= z;
        total += -(static_cast<double>(x[tgt[r]] - mx) - std::log(static_cast<double>(z)));
        ++counted;
    }
    const S loss = counted ? S(total / double(counted)) : S(0);
    return detail::record<S>(
        "softmax_cross_entropy", {}, {loss}, {logits},
        [m, c, counted, ignore, prob = std::move(prob), tgt = std::move(tgt)](auto in) {
            return [=](std::span<const S> g) {
                if (counted == 0) return;
                auto gl = detail::grad_of(in[0]);
                const S w = g[0] / S(counted);
                for (std::size_t r = 0; r < m; ++r) {
                    if (tgt[r] == ignore) continue;
                    for (std::size_t j = 0; j < c; ++j) gl[r * c + j] += w * prob[r * c + j];
                    gl[r * c + tgt[r]] -= w;
                }
            };
        });
}

// Causal attention primitives over a batch laid out as [B*T x d] with
// sequence b occupying rows b*T .. b*T+T-1. Row (b, t) only ever reads rows
// (b, j) with j <= t.

/// scores[(b,t), j] = factor * <q_(b,t), k_(b,j)> for j <= t, 0 above the
/// diagonal.
template <typename S>
Tensor<S> causal_scores(const Tensor<S>& q, const Tensor<S>& k, std::size_t seq_len, S factor) {
    detail::require_rank2(q, "causal_scores");
    detail::require_same_shape(q, k, "causal_scores");
    const auto rows = q.dim(0), d = q.dim(1), T = seq_len;
    if (T == 0 || rows % T != 0) throw DimensionError("causal_scores: rows not a multiple of the sequence length");
    std::vector<S> out(rows * T, S(0));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto base = r - r % T;
        const auto t = r % T;
        const S* qr = q.data().data() + r * d;
        for (std::size_t j = 0; j <= t; ++j) {
            const S* kr = k.data().data() + (base + j) * d;
            S acc = 0;
            for (std::size_t e = 0; e < d; ++e) acc += qr[e] * kr[e];
            out[r * T + j] = acc * factor;
        }
    }
    return detail::record<S>("causal_scores", {rows, T}, std::move(out), {q, k}, [rows, d, T, factor](auto in) {
        return [=](std::span<const S> g) {
            auto gq = detail::grad_of(in[0]);
            auto gk = detail::grad_of(in[1]);
            const auto& qd = in[0]->data;
            const auto& kd = in[1]->data;
            for (std::size_t r = 0; r < rows; ++r) {
                const auto base = r - r % T;
                const auto t = r % T;
                for (std::size_t j = 0; j <= t; ++j) {
                    const S w = g[r * T + j] * factor;
                    const auto kr = (base + j) * d;
                    if (!gq.empty()) {
                        for (std::size_t e = 0; e < d; ++e) gq[r * d + e] += w * kd[kr + e];
                    }
                    if (!gk.empty()) {
                        for (std::size_t e = 0; e < d; ++e) gk[kr + e] += w * qd[r * d + e];
                    }
                }
            }
        };
    });
}

// Softmax of row (b,t) over columns 0..t; columns above t come out as 0.
template <typename S>
Tensor<S> causal_softmax(const Tensor<S>& scores, std::size_t seq_len) {
    detail::require_rank2(scores, "causal_softmax");
    const auto rows = scores.dim(0), T = seq_len;
    if (scores.dim(1) != T || rows % T != 0) {
        throw DimensionError("causal_softmax: scores " + shape_str(scores.shape()) + " do not match length " +
                             std::to_string(T));
    }
    std::vector<S> out(rows * T, S(0));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto t = r % T;
        const S* x = scores.data().data() + r * T;
        S* y = out.data() + r * T;
        const S mx = *std::max_element(x, x + t + 1);
        S z = 0;
        for (std::size_t j = 0; j <= t; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j <= t; ++j) y[j] /= z;
    }
    std::vector<S> y = out;
    return detail::record<S>("causal_softmax", {rows, T}, std::move(out), {scores}, [rows, T, y = std::move(y)](auto in) {
        return [=](std::span<const S> g) {
            auto gs = detail::grad_of(in[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto t = r % T;
                S dot = 0;
                for (std::size_t j = 0; j <= t; ++j) dot += g[r * T + j] * y[r * T + j];
                for (std::size_t j = 0; j <= t; ++j) gs[r * T + j] += y[r * T + j] * (g[r * T + j] - dot);
            }
        };
    });
}

// out[(b,t)] = sum_{j<=t} weights[(b,t), j] * v_(b,j)
template <typename S>
Tensor<S> causal_weighted_sum(const Tensor<S>& weights, const Tensor<S>& v, std::size_t seq_len) {
    detail::require_rank2(weights, "causal_weighted_sum");
    detail::require_rank2(v, "causal_weighted_sum");
    const auto rows = v.dim(0), d = v.dim(1), T = seq_len;
    if (weights.dim(0) != rows || weights.dim(1) != T || rows % T != 0) {
        throw DimensionError("causal_weighted_sum: weights " + shape_str(weights.shape()) + " vs values " +
                             shape_str(v.shape()));
    }
    std::vector<S> out(rows * d, S(0));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto base = r - r % T;
        const auto t = r % T;
        S* o = out.data() + r * d;
        for (std::size_t j = 0; j <= t; ++j) {
            const S w = weights.data()[r * T + j];
            const S* vr = v.data().data() + (base + j) * d;
            for (std::size_t e = 0; e < d; ++e) o[e] += w * vr[e];
        }
    }
    return detail::record<S>("causal_weighted_sum", {rows, d}, std::move(out), {weights, v}, [rows, d, T](auto in) {
        return [=](std::span<const S> g) {
            auto gw = detail::grad_of(in[0]);
            auto gv = detail::grad_of(in[1]);
            const auto& wd = in[0]->data;
            const auto& vd = in[1]->data;
            for (std::size_t r = 0; r < rows; ++r) {
                const auto base = r - r % T;
                const auto t = r % T;
                const S* gr = g.data() + r * d;
                for (std::size_t j = 0; j <= t; ++j) {
                    const auto vr = (base + j) * d;
                    if (!gw.empty()) {
                        S acc = 0;
                        for (std::size_t e = 0; e < d; ++e) acc += gr[e] * vd[vr + e];
                        gw[r * T + j] += acc;
                    }
                    if (!gv.empty()) {
                        const S w = wd[r * T + j];
                        for (std::size_t e = 0; e < d; ++e) gv[vr + e] += w * gr[e];
                    }
                }
            }
        };
    });
}

}  // namespace rseq
