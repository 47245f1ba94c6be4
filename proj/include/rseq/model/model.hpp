#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rseq/data/batch.hpp"
#include "rseq/layers/layer.hpp"
#include "rseq/model/config.hpp"

namespace rseq {

/// Input embedding (or projection), a stack of identical layers and an
/// output head.
template <typename S>
class RTransformer {
public:
    RTransformer() = default;

    static RTransformer create(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        RTransformer m;
        m.cfg_ = cfg;
        if (cfg.token_inputs()) {
            m.embed_ = init_weight<S>(cfg.vocab_size, cfg.d_model, rng);
        } else {
            m.in_W_ = init_weight<S>(cfg.input_dim, cfg.d_model, rng);
            m.in_b_ = init_const<S>(cfg.d_model, S(0));
        }
        for (std::size_t i = 0; i < cfg.num_layers; ++i) {
            m.layers_.push_back(
                LayerParams<S>::create(cfg.d_model, cfg.num_heads, cfg.d_ff, cfg.window, cfg.cell, rng));
        }
        if (!cfg.tie_embeddings) m.head_W_ = init_weight<S>(cfg.d_model, cfg.output_size(), rng);
        m.head_b_ = init_const<S>(cfg.output_size(), S(0));
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<LayerParams<S>>& layers() const { return layers_; }

    /// Logits for a batch: [B x T x vocab] for next_step (position t scores
    /// the token at t+1), [B x num_classes] for seq_classify (read from the
    /// last position of the top layer).
    Tensor<S> forward(const Batch& batch, bool training, Rng& rng) const {
        batch.validate();
        if (batch.task != cfg_.task) throw DataError("forward: batch task does not match the model");
        const auto B = batch.batch_size, T = batch.seq_len;
        auto x = embed(batch);
        for (const auto& layer : layers_) x = layer_forward(layer, x, T, cfg_.dropout, training, rng);
        if (cfg_.task == TaskKind::next_step) return reshape(head(x), {B, T, cfg_.output_size()});
        std::vector<std::int64_t> last(B);
        for (std::size_t b = 0; b < B; ++b) last[b] = static_cast<std::int64_t>(b * T + T - 1);
        return head(gather_rows(x, std::move(last)));
    }

    // Fixed order: input, layers bottom-up, head.
    std::vector<NamedTensor<S>> named_parameters() const {
        std::vector<NamedTensor<S>> out;
        if (cfg_.token_inputs()) {
            out.emplace_back("embed", embed_);
        } else {
            out.emplace_back("input.W", in_W_);
            out.emplace_back("input.b", in_b_);
        }
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            auto named = layers_[i].named_parameters("layers." + std::to_string(i) + ".");
            out.insert(out.end(), named.begin(), named.end());
        }
        if (!cfg_.tie_embeddings) out.emplace_back("head.W", head_W_);
        out.emplace_back("head.b", head_b_);
        return out;
    }

    std::vector<Tensor<S>> parameters() const {
        std::vector<Tensor<S>> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    // Learnable scalars, optionally only those whose name starts with prefix.
    std::size_t param_count(const std::string& prefix = "") const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_parameters()) {
            if (name.rfind(prefix, 0) == 0) n += t.size();
        }
        return n;
    }

private:
    Tensor<S> embed(const Batch& batch) const {
        const auto n = batch.batch_size * batch.seq_len;
        if (cfg_.token_inputs()) {
            if (!batch.token_inputs()) throw DataError("forward: model expects token inputs");
            std::vector<std::int64_t> ids(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto tok = batch.tokens[i];
                if (tok < 0 || static_cast<std::size_t>(tok) >= cfg_.vocab_size) {
                    throw DataError("forward: token " + std::to_string(tok) + " at index " + std::to_string(i) +
                                    " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
                }
                ids[i] = tok;
            }
            return gather_rows(embed_, std::move(ids));
        }
        if (batch.token_inputs() || batch.feature_dim != cfg_.input_dim) {
            throw DataError("forward: model expects " + std::to_string(cfg_.input_dim) + "-wide real inputs");
        }
        std::vector<S> feats(batch.features.begin(), batch.features.end());
        Tensor<S> x({n, cfg_.input_dim}, std::move(feats));
        return add_bias(matmul(x, in_W_), in_b_);
    }

    Tensor<S> head(const Tensor<S>& x) const {
        if (cfg_.tie_embeddings) return add_bias(matmul_nt(x, embed_), head_b_);
        return add_bias(matmul(x, head_W_), head_b_);
    }

    ModelConfig cfg_;
    Tensor<S> embed_, in_W_, in_b_;
    std::vector<LayerParams<S>> layers_;
    Tensor<S> head_W_, head_b_;
};

}  // namespace rseq
