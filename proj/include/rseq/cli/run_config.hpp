#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rseq/data/text_corpus.hpp"
#include "rseq/kv_text.hpp"
#include "rseq/model/config.hpp"
#include "rseq/training/state.hpp"
#include "rseq/training/trainer.hpp"

namespace rseq::cli {

/// Everything a command needs: architecture, optimizer, data source and
/// run settings. Merged from defaults, then a config file, then flags and
/// key=value overrides (later sources win).
struct RunConfig {
    ModelConfig model;
    OptimizerConfig optim;

    // data = text | copy | pixels | synth_digits | none
    std::string data = "text";
    std::string data_path;
    TextLevel text_level = TextLevel::chars;
    std::size_t batch_size = 32;
    std::size_t seq_len = 64;
    std::size_t eval_batch_size = 0;  // 0: same as batch_size

    std::size_t copy_symbols = 8;
    std::size_t copy_payload = 10;
    std::size_t copy_blank = 40;
    std::size_t steps_per_epoch = 100;
    std::size_t eval_sequences = 256;
    std::size_t synth_count = 2000;

    MetricKind metric = MetricKind::nll;
    // Stop early once the validation metric reaches this value (0 = off).
    double target_metric = 0;

    std::uint64_t seed = 1;
    std::size_t threads = 0;
    std::string precision = "f32";
    std::string out = "runs/latest";

    std::size_t gc_seeds = 10;
    std::size_t gc_coords = 24;
    std::size_t gc_batch = 2;
    double gc_step = 1e-5;
    std::string gc_corrupt_op;  // test fixture: scale this op's backward rule
    double gc_corrupt_scale = 1.5;

    std::size_t eval_batch() const { return eval_batch_size ? eval_batch_size : batch_size; }

    bool set(const std::string& key, const std::string& v) {
        if (model.set(key, v) || optim.set(key, v)) return true;
        if (key == "data") data = v;
        else if (key == "data_path") data_path = v;
        else if (key == "text_level") text_level = parse_text_level(v);
        else if (key == "batch_size") batch_size = kv::to_uint(key, v);
        else if (key == "seq_len") seq_len = kv::to_uint(key, v);
        else if (key == "eval_batch_size") eval_batch_size = kv::to_uint(key, v);
        else if (key == "copy_symbols") copy_symbols = kv::to_uint(key, v);
        else if (key == "copy_payload") copy_payload = kv::to_uint(key, v);
        else if (key == "copy_blank") copy_blank = kv::to_uint(key, v);
        else if (key == "steps_per_epoch") steps_per_epoch = kv::to_uint(key, v);
        else if (key == "eval_sequences") eval_sequences = kv::to_uint(key, v);
        else if (key == "synth_count") synth_count = kv::to_uint(key, v);
        else if (key == "metric") metric = parse_metric_kind(v);
        else if (key == "target_metric") target_metric = kv::to_double(key, v);
        else if (key == "seed") seed = kv::to_uint(key, v);
        else if (key == "threads") threads = kv::to_uint(key, v);
        else if (key == "precision") precision = v;
        else if (key == "out") out = v;
        else if (key == "gc_seeds") gc_seeds = kv::to_uint(key, v);
        else if (key == "gc_coords") gc_coords = kv::to_uint(key, v);
        else if (key == "gc_batch") gc_batch = kv::to_uint(key, v);
        else if (key == "gc_step") gc_step = kv::to_double(key, v);
        else if (key == "gc_corrupt_op") gc_corrupt_op = v;
        else if (key == "gc_corrupt_scale") gc_corrupt_scale = kv::to_double(key, v);
        else return false;
        return true;
    }

    void apply(const kv::Entries& entries, const std::string& origin) {
        for (const auto& [k, v] : entries) {
            if (!set(k, v)) throw ConfigError(origin + ": unknown key '" + k + "'");
        }
    }

    kv::Entries to_entries() const {
        kv::Entries e = model.to_entries();
        const auto o = optim.to_entries();
        e.insert(e.end(), o.begin(), o.end());
        e.insert(e.end(), {{"data", data},
                           {"data_path", data_path},
                           {"text_level", text_level == TextLevel::chars ? "char" : "word"},
                           {"batch_size", std::to_string(batch_size)},
                           {"seq_len", std::to_string(seq_len)},
                           {"eval_batch_size", std::to_string(eval_batch_size)},
                           {"copy_symbols", std::to_string(copy_symbols)},
                           {"copy_payload", std::to_string(copy_payload)},
                           {"copy_blank", std::to_string(copy_blank)},
                           {"steps_per_epoch", std::to_string(steps_per_epoch)},
                           {"eval_sequences", std::to_string(eval_sequences)},
                           {"synth_count", std::to_string(synth_count)},
                           {"metric", to_string(metric)},
                           {"target_metric", kv::fmt_double(target_metric)},
                           {"seed", std::to_string(seed)},
                           {"threads", std::to_string(threads)},
                           {"precision", precision},
                           {"out", out},
                           {"gc_seeds", std::to_string(gc_seeds)},
                           {"gc_coords", std::to_string(gc_coords)},
                           {"gc_batch", std::to_string(gc_batch)},
                           {"gc_step", kv::fmt_double(gc_step)},
                           {"gc_corrupt_op", gc_corrupt_op},
                           {"gc_corrupt_scale", kv::fmt_double(gc_corrupt_scale)}});
        return e;
    }

    void validate() const {
        optim.validate();
        if (precision != "f32" && precision != "f64") {
            throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
        }
        if (batch_size == 0 || seq_len == 0) throw ConfigError("batch_size and seq_len must be positive");
        if (data != "text" && data != "copy" && data != "pixels" && data != "synth_digits" && data != "none") {
            throw ConfigError("unknown data source '" + data + "' (expected text, copy, pixels, synth_digits or none)");
        }
        if ((data == "text" || data == "pixels") && data_path.empty()) {
            throw ConfigError("data = " + data + " needs data_path");
        }
        if (data == "copy" && steps_per_epoch == 0) throw ConfigError("steps_per_epoch must be positive");
        if (dropout_out_of_range()) throw ConfigError("dropout must lie in [0, 1)");
    }

private:
    bool dropout_out_of_range() const { return !(model.dropout >= 0.0 && model.dropout < 1.0); }
};

inline kv::Entries read_config_file(const std::filesystem::path& path) {
    return kv::parse(detail::read_file(path));
}

}  // namespace rseq::cli
