#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rseq/numerics/rng.hpp"
#include "rseq/numerics/tensor.hpp"

namespace rseq {

namespace detail {

// Evaluates f while recording the kink digest of its forward pass.
template <typename S, typename F>
std::pair<S, std::uint64_t> probe(const F& f) {
    KinkDigest digest;
    auto* prev = kink_digest();
    kink_digest() = &digest;
    try {
        const S v = f();
        kink_digest() = prev;
        return {v, digest.value};
    } catch (...) {
        kink_digest() = prev;
        throw;
    }
}

// Central difference for one coordinate. When x +- h lands on a different
// side of any relu kink than x itself, the step is cut tenfold (at most
// three times) so both probes stay on the smooth piece around x.
template <typename S, typename F>
S central_difference(const F& f, S& coord, S step, std::uint64_t base) {
    const S orig = coord;
    S h = step;
    for (int attempt = 0;; ++attempt) {
        coord = orig + h;
        const auto [up, d_up] = probe<S>(f);
        coord = orig - h;
        const auto [down, d_down] = probe<S>(f);
        coord = orig;
        if ((d_up == base && d_down == base) || attempt == 3) return (up - down) / (S(2) * h);
        h /= S(10);
    }
}

}  // namespace detail

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
// coordinate of x. x is perturbed in place and restored afterwards; f is
// evaluated with tape recording disabled.
template <typename S>
Tensor<S> finite_diff_grad(const std::function<S(const Tensor<S>&)>& f, Tensor<S> x, S step) {
    if (!(step > S(0))) throw UsageError("finite_diff_grad: step must be positive");
    std::vector<S> g(x.size(), S(0));
    NoGradGuard guard;
    const auto eval = [&] { return f(x); };
    const auto base = detail::probe<S>(eval).second;
    auto xs = x.mutable_data();
    for (std::size_t i = 0; i < xs.size(); ++i) g[i] = detail::central_difference<S>(eval, xs[i], step, base);
    return Tensor<S>(x.shape(), std::move(g));
}

// Same estimate, restricted to the listed coordinates of a tensor that f
// reads implicitly (e.g. a model parameter).
template <typename S>
std::vector<S> finite_diff_coords(const std::function<S()>& f, Tensor<S> x, const std::vector<std::size_t>& coords,
                                  S step) {
    if (!(step > S(0))) throw UsageError("finite_diff_coords: step must be positive");
    std::vector<S> g;
    g.reserve(coords.size());
    NoGradGuard guard;
    const auto base = detail::probe<S>(f).second;
    auto xs = x.mutable_data();
    for (auto i : coords) g.push_back(detail::central_difference<S>(f, xs[i], step, base));
    return g;
}

// Relative disagreement between an analytic and a numeric derivative.
// The floor keeps coordinates whose true derivative is ~0 from turning
// round-off into a huge ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

// Up to `limit` distinct coordinates of an n-element tensor, in ascending
// order. All of them when n <= limit.
inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t limit, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n <= limit) return idx;
    for (std::size_t i = 0; i < limit; ++i) {
        const auto j = i + rng.uniform_int(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

struct TensorGradError {
    std::string name;
    double worst = 0.0;       // largest relative error over checked coordinates
    std::size_t checked = 0;  // coordinates compared
};

/// Compares backward() against central differences for named tensors that
/// `loss` reads. Up to `max_coords` coordinates per tensor are sampled
/// (all of them for small tensors). `loss` must be deterministic.
template <typename S>
std::vector<TensorGradError> gradient_errors(const std::vector<std::pair<std::string, Tensor<S>>>& tensors,
                                             const std::function<Tensor<S>()>& loss, std::size_t max_coords,
                                             Rng& rng, S step = S(1e-5)) {
    for (auto [name, t] : tensors) t.clear_grad();
    backward(loss());
    const std::function<S()> value = [&] { return loss().item(); };
    std::vector<TensorGradError> out;
    for (auto [name, t] : tensors) {
        const auto coords = sample_coords(t.size(), max_coords, rng);
        const auto numeric = finite_diff_coords<S>(value, t, coords, step);
        TensorGradError e{name, 0.0, coords.size()};
        for (std::size_t i = 0; i < coords.size(); ++i) {
            const double analytic = t.has_grad() ? double(t.grad()[coords[i]]) : 0.0;
            e.worst = std::max(e.worst, relative_error(analytic, double(numeric[i])));
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace rseq
