#pragma once

#include <cstddef>
#include <string>

#include "rseq/data/batch.hpp"
#include "rseq/errors.hpp"
#include "rseq/kv_text.hpp"
#include "rseq/layers/params.hpp"

namespace rseq {

// Architecture of a model. Token inputs when vocab_size > 0, otherwise
// real-valued inputs of width input_dim.
struct ModelConfig {
    std::size_t num_layers = 2;
    std::size_t d_model = 64;
    std::size_t num_heads = 4;
    std::size_t d_ff = 256;
    std::size_t window = 7;
    CellKind cell = CellKind::gru;
    std::size_t vocab_size = 0;
    std::size_t input_dim = 0;
    TaskKind task = TaskKind::next_step;
    std::size_t num_classes = 0;
    double dropout = 0.1;
    bool tie_embeddings = false;

    bool token_inputs() const { return vocab_size > 0; }

    std::size_t output_size() const { return task == TaskKind::next_step ? vocab_size : num_classes; }

    std::size_t d_head() const { return d_model / num_heads; }

    void validate() const {
        if (num_layers == 0 || d_model == 0 || num_heads == 0 || d_ff == 0) {
            throw ConfigError("model: num_layers, d_model, num_heads and d_ff must be positive");
        }
        if (d_model % num_heads != 0) {
            throw ConfigError("model: num_heads " + std::to_string(num_heads) + " does not divide d_model " +
                              std::to_string(d_model));
        }
        if (window == 0) throw ConfigError("model: window must be at least 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
        if (vocab_size == 0 && input_dim == 0) throw ConfigError("model: need vocab_size or input_dim");
        if (vocab_size > 0 && input_dim > 0) throw ConfigError("model: vocab_size and input_dim are exclusive");
        if (task == TaskKind::next_step && vocab_size == 0) {
            throw ConfigError("model: next_step prediction needs token inputs (vocab_size)");
        }
        if (task == TaskKind::seq_classify && num_classes == 0) {
            throw ConfigError("model: seq_classify needs num_classes");
        }
        if (tie_embeddings && (task != TaskKind::next_step || vocab_size == 0)) {
            throw ConfigError("model: tie_embeddings requires a next_step token model");
        }
    }

    kv::Entries to_entries() const {
        return {{"num_layers", std::to_string(num_layers)},
                {"d_model", std::to_string(d_model)},
                {"num_heads", std::to_string(num_heads)},
                {"d_ff", std::to_string(d_ff)},
                {"window", std::to_string(window)},
                {"cell", to_string(cell)},
                {"vocab_size", std::to_string(vocab_size)},
                {"input_dim", std::to_string(input_dim)},
                {"task", to_string(task)},
                {"num_classes", std::to_string(num_classes)},
                {"dropout", kv::fmt_double(dropout)},
                {"tie_embeddings", tie_embeddings ? "true" : "false"}};
    }

    // Applies one key; returns false when the key is not a model field.
    bool set(const std::string& key, const std::string& v) {
        if (key == "num_layers") num_layers = kv::to_uint(key, v);
        else if (key == "d_model") d_model = kv::to_uint(key, v);
        else if (key == "num_heads") num_heads = kv::to_uint(key, v);
        else if (key == "d_ff") d_ff = kv::to_uint(key, v);
        else if (key == "window") window = kv::to_uint(key, v);
        else if (key == "cell") cell = parse_cell_kind(v);
        else if (key == "vocab_size") vocab_size = kv::to_uint(key, v);
        else if (key == "input_dim") input_dim = kv::to_uint(key, v);
        else if (key == "task") task = parse_task_kind(v);
        else if (key == "num_classes") num_classes = kv::to_uint(key, v);
        else if (key == "dropout") dropout = kv::to_double(key, v);
        else if (key == "tie_embeddings") tie_embeddings = kv::to_bool(key, v);
        else return false;
        return true;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace rseq
