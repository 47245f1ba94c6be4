#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rseq/cli/run_config.hpp"
#include "rseq/data/batchify.hpp"
#include "rseq/data/copy_task.hpp"
#include "rseq/data/pixels.hpp"
#include "rseq/numerics/gradcheck.hpp"
#include "rseq/training/checkpoint.hpp"

namespace rseq::cli {

enum ExitCode : int { kOk = 0, kFailed = 1, kInvalid = 2, kNumeric = 3 };

struct Options {
    std::optional<std::string> config_path;
    std::vector<std::pair<std::string, std::string>> overrides;  // applied in order, after the file
    std::optional<std::string> checkpoint;
    std::string split = "val";
};

inline RunConfig gradcheck_defaults() {
    RunConfig r;
    r.model.num_layers = 2;
    r.model.d_model = 16;
    r.model.num_heads = 2;
    r.model.d_ff = 32;
    r.model.window = 3;
    r.model.vocab_size = 7;
    r.model.dropout = 0.0;
    r.seq_len = 5;
    r.data = "none";
    return r;
}

inline RunConfig resolve_config(const Options& opt, RunConfig base = {}) {
    if (opt.config_path) base.apply(read_config_file(*opt.config_path), *opt.config_path);
    base.apply(opt.overrides, "command line");
    return base;
}

/// Batches for one run. `train` is called once per epoch with the run's
/// state rng, so sampling and shuffling stay on the checkpointed stream.
struct DataSource {
    std::function<std::vector<Batch>(Rng&)> train;
    std::vector<Batch> val, test;

    const std::vector<Batch>& split(const std::string& name) const {
        if (name == "val" || name == "valid") return val;
        if (name == "test") return test;
        throw ConfigError("eval split must be val or test, got '" + name + "'");
    }
};

namespace detail {

inline void require_match(std::size_t& field, std::size_t value, const std::string& key) {
    if (field != 0 && field != value) {
        throw ConfigError(key + " = " + std::to_string(field) + " but the data implies " + std::to_string(value));
    }
    field = value;
}

}  // namespace detail

/// Builds the data source and fills data-dependent model fields
/// (vocab_size, input_dim, num_classes, task).
inline DataSource prepare_data(RunConfig& rc) {
    DataSource ds;
    const auto B = rc.batch_size, EB = rc.eval_batch();
    if (rc.data == "text") {
        auto corpus = std::make_shared<TextCorpus>(load_text_corpus(rc.data_path, rc.text_level));
        rc.model.task = TaskKind::next_step;
        rseq::cli::detail::require_match(rc.model.vocab_size, corpus->vocab.size(), "vocab_size");
        auto train = std::make_shared<std::vector<Batch>>(batchify(corpus->train, B, rc.seq_len));
        ds.train = [train](Rng&) { return *train; };
        ds.val = batchify(corpus->valid, EB, rc.seq_len);
        ds.test = batchify(corpus->test, EB, rc.seq_len);
    } else if (rc.data == "copy") {
        const CopyTaskSpec spec{rc.copy_symbols, rc.copy_payload, rc.copy_blank};
        rc.model.task = TaskKind::next_step;
        rseq::cli::detail::require_match(rc.model.vocab_size, spec.vocab_size(), "vocab_size");
        ds.train = [spec, B, n = rc.steps_per_epoch](Rng& rng) {
            std::vector<Batch> out;
            for (std::size_t i = 0; i < n; ++i) out.push_back(gen_copy_task(rng, B, spec));
            return out;
        };
        const auto held_out = [&](std::uint64_t salt) {
            Rng rng(rc.seed * 1000003 + salt);
            std::vector<Batch> out;
            for (std::size_t left = rc.eval_sequences; left > 0; left -= std::min(left, EB)) {
                out.push_back(gen_copy_task(rng, std::min(left, EB), spec));
            }
            return out;
        };
        ds.val = held_out(1);
        ds.test = held_out(2);
    } else if (rc.data == "pixels" || rc.data == "synth_digits") {
        std::shared_ptr<PixelDataset> train;
        PixelDataset val, test;
        if (rc.data == "pixels") {
            train = std::make_shared<PixelDataset>(load_pixel_split(rc.data_path, "train"));
            val = load_pixel_split(rc.data_path, "val");
            test = load_pixel_split(rc.data_path, "test");
        } else {
            const auto make = [](std::uint64_t seed, std::size_t n) {
                Rng rng(seed);
                auto [px, lb] = synth_digits(rng, n);
                PixelDataset d;
                d.height = d.width = 8;
                for (auto p : px) d.pixels.push_back(p / 255.0);
                d.labels.assign(lb.begin(), lb.end());
                return d;
            };
            train = std::make_shared<PixelDataset>(make(rc.seed * 7919 + 1, rc.synth_count));
            val = make(rc.seed * 7919 + 2, rc.synth_count / 4);
            test = make(rc.seed * 7919 + 3, rc.synth_count / 4);
        }
        rc.model.task = TaskKind::seq_classify;
        rc.model.vocab_size = 0;
        rseq::cli::detail::require_match(rc.model.input_dim, 1, "input_dim");
        if (rc.model.num_classes == 0) rc.model.num_classes = 10;
        ds.train = [train, B](Rng& rng) { return pixel_batches(*train, B, &rng); };
        ds.val = pixel_batches(val, EB);
        ds.test = pixel_batches(test, EB);
    } else {
        throw ConfigError("data = " + rc.data + " has no batches to train or evaluate on");
    }
    if (ds.val.empty()) throw DataError("validation split yields no batches at batch size " + std::to_string(EB));
    return ds;
}

inline std::string log_line(std::uint64_t step, std::uint64_t epoch, const std::string& split, double loss,
                            double metric, double lr, std::int64_t wall_ms) {
    return "step=" + std::to_string(step) + " epoch=" + std::to_string(epoch) + " split=" + split +
           " loss=" + kv::fmt_double(loss) + " metric=" + kv::fmt_double(metric) + " lr=" + kv::fmt_double(lr) +
           " wall_ms=" + std::to_string(wall_ms);
}

inline double train_metric(MetricKind kind, double mean_loss, double accuracy) {
    switch (kind) {
        case MetricKind::nll: return mean_loss;
        case MetricKind::bpc: return bits_per_symbol(mean_loss);
        case MetricKind::ppl: return perplexity(mean_loss);
        case MetricKind::accuracy: return accuracy;
    }
    return mean_loss;
}

inline bool target_reached(const RunConfig& rc, double metric) {
    if (rc.target_metric <= 0) return false;
    return rc.metric == MetricKind::accuracy ? metric >= rc.target_metric : metric <= rc.target_metric;
}

inline void set_threads(std::size_t n) {
    if (n > 0) Eigen::setNbThreads(static_cast<int>(n));
}

template <typename S>
int run_train(RunConfig rc, const Options& opt, std::ostream& out) {
    namespace fs = std::filesystem;
    auto data = prepare_data(rc);
    rc.validate();
    set_threads(rc.threads);
    fs::create_directories(rc.out);
    {
        std::ofstream cfg(fs::path(rc.out) / "config.cfg");
        cfg << kv::format(rc.to_entries());
    }

    RTransformer<S> model;
    TrainState<S> state;
    if (opt.checkpoint) {
        auto ck = load_checkpoint<S>(*opt.checkpoint);
        if (!(ck.model.config() == rc.model)) throw ConfigError("checkpoint model does not match the run config");
        model = std::move(ck.model);
        state = std::move(ck.state);
    } else {
        Rng init(rc.seed);
        model = RTransformer<S>::create(rc.model, init);
        state = TrainState<S>::start(rc.optim, rc.seed ^ 0x5DEECE66DULL);
    }

    const auto ckpt = fs::path(rc.out) / "checkpoint.bin";
    std::ofstream log(fs::path(rc.out) / "metrics.log", opt.checkpoint ? std::ios::app : std::ios::trunc);
    const auto emit = [&](const std::string& line) {
        log << line << '\n';
        log.flush();
        out << line << '\n';
    };
    out << "params=" << model.param_count() << '\n';
    if (!opt.checkpoint) save_checkpoint(model, state, ckpt);

    while (state.epoch < rc.optim.max_epochs && !state.lr_exhausted(rc.optim)) {
        const double lr = state.lr;
        const auto batches = data.train(state.rng);
        EpochMetrics em;
        try {
            em = train_epoch(model, batches, state, rc.optim);
        } catch (const NumericFault& e) {
            out << "numeric fault in op '" << e.op() << "' at step " << state.step
                << "; last checkpoint left untouched\n";
            return kNumeric;
        }
        // Accuracy tasks report the final batch of the epoch, scored after its update.
        double train_acc = 0;
        if (rc.metric == MetricKind::accuracy) train_acc = evaluate(model, {batches.back()}, rc.metric).metric;
        emit(log_line(state.step, state.epoch, "train", em.mean_loss, train_metric(rc.metric, em.mean_loss, train_acc),
                      lr, em.wall_ms));
        const auto t0 = std::chrono::steady_clock::now();
        const auto v = evaluate(model, data.val, rc.metric);
        const auto ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
        emit(log_line(state.step, state.epoch, "val", v.loss, v.metric, lr, ms));
        lr_on_plateau(state, v.loss, rc.optim);
        save_checkpoint(model, state, ckpt);
        if (target_reached(rc, v.metric)) break;
    }
    return kOk;
}

template <typename S>
int run_eval(RunConfig rc, const Options& opt, std::ostream& out) {
    if (!opt.checkpoint) throw ConfigError("eval needs --checkpoint");
    auto data = prepare_data(rc);
    set_threads(rc.threads);
    const auto ck = load_checkpoint<S>(*opt.checkpoint);
    if (!(ck.model.config() == rc.model)) {
        throw ConfigError("checkpoint model config does not match the run config (" +
                          kv::format(ck.model.config().to_entries()) + ")");
    }
    const auto r = evaluate(ck.model, data.split(opt.split), rc.metric);
    out << "metric=nll value=" << kv::fmt_double(r.loss) << '\n';
    if (rc.metric != MetricKind::nll) out << "metric=" << to_string(rc.metric) << " value=" << kv::fmt_double(r.metric) << '\n';
    return kOk;
}

inline int run_gradcheck(const RunConfig& rc, std::ostream& out) {
    constexpr double kTolerance = 1e-4;
    std::map<std::string, TensorGradError> groups;
    std::vector<std::string> order;
    const auto note = [&](const TensorGradError& e) {
        const auto g = parameter_group(e.name);
        auto [it, fresh] = groups.try_emplace(g, TensorGradError{g, 0.0, 0});
        if (fresh) order.push_back(g);
        it->second.worst = std::max(it->second.worst, e.worst);
        it->second.checked += e.checked;
    };
    std::optional<ScopedBackwardFault> fault;
    if (!rc.gc_corrupt_op.empty()) fault.emplace(rc.gc_corrupt_op, rc.gc_corrupt_scale);

    for (auto cell : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
        for (std::size_t s = 0; s < rc.gc_seeds; ++s) {
            auto mc = rc.model;
            mc.cell = cell;
            mc.dropout = 0.0;
            if (mc.vocab_size == 0 && mc.input_dim == 0) mc.vocab_size = 7;
            Rng rng(rc.seed * 1000 + s);
            const auto model = RTransformer<double>::create(mc, rng);
            // Nonzero biases and non-unit gains so every path carries signal.
            for (auto& [name, t] : model.named_parameters()) {
                if (t.rank() != 1) continue;
                const bool gain = name.find("gain") != std::string::npos;
                for (auto& v : t.mutable_data()) v = gain ? rng.uniform(0.5, 1.5) : rng.uniform(-0.3, 0.3);
            }
            Batch b;
            b.task = mc.task;
            b.batch_size = rc.gc_batch;
            b.seq_len = rc.seq_len;
            const auto n = b.batch_size * b.seq_len;
            if (mc.token_inputs()) {
                for (std::size_t i = 0; i < n; ++i) b.tokens.push_back(static_cast<std::int32_t>(rng.uniform_int(mc.vocab_size)));
            } else {
                b.feature_dim = mc.input_dim;
                for (std::size_t i = 0; i < n * mc.input_dim; ++i) b.features.push_back(rng.uniform(-1, 1));
            }
            const auto n_targets = mc.task == TaskKind::next_step ? n : b.batch_size;
            for (std::size_t i = 0; i < n_targets; ++i) {
                b.targets.push_back(static_cast<std::int32_t>(rng.uniform_int(mc.output_size())));
            }
            Rng unused(0);
            const std::function<Tensor<double>()> loss = [&] {
                return cross_entropy_loss(model.forward(b, false, unused), b.targets);
            };
            for (const auto& e : gradient_errors<double>(model.named_parameters(), loss, rc.gc_coords, rng, rc.gc_step)) note(e);
        }
    }

    std::vector<std::string> offenders;
    double worst = 0;
    for (const auto& g : order) {
        const auto& e = groups.at(g);
        const bool ok = e.worst < kTolerance;
        if (!ok) offenders.push_back(g);
        worst = std::max(worst, e.worst);
        out << "group=" << g << " worst_rel_err=" << kv::fmt_double(e.worst) << " checked=" << e.checked
            << " status=" << (ok ? "ok" : "FAIL") << '\n';
    }
    if (offenders.empty()) {
        out << "gradcheck: PASS worst_rel_err=" << kv::fmt_double(worst) << '\n';
        return kOk;
    }
    out << "gradcheck: FAIL offenders=";
    for (std::size_t i = 0; i < offenders.size(); ++i) out << (i ? "," : "") << offenders[i];
    out << '\n';
    return kFailed;
}

/// Runs one command and maps failures to exit codes: 2 for bad
/// configuration, data or checkpoints, 3 for numeric faults.
inline int run_command(const std::string& command, const Options& opt, std::ostream& out, std::ostream& err) {
    try {
        if (command == "gradcheck") {
            auto rc = resolve_config(opt, gradcheck_defaults());
            set_threads(rc.threads);
            return run_gradcheck(rc, out);
        }
        auto effective = opt;
        if (command == "eval" && !effective.config_path && effective.checkpoint) {
            // Default to the config echoed next to the checkpoint by train.
            const auto beside = std::filesystem::path(*effective.checkpoint).parent_path() / "config.cfg";
            if (std::filesystem::exists(beside)) effective.config_path = beside.string();
        }
        auto rc = resolve_config(effective);
        if (rc.precision != "f32" && rc.precision != "f64") throw ConfigError("precision must be f32 or f64");
        const bool wide = rc.precision == "f64";
        if (command == "train") return wide ? run_train<double>(rc, opt, out) : run_train<float>(rc, opt, out);
        if (command == "eval") return wide ? run_eval<double>(rc, effective, out) : run_eval<float>(rc, effective, out);
        throw ConfigError("unknown command '" + command + "' (expected train, eval or gradcheck)");
    } catch (const NumericFault& e) {
        err << "error: " << e.what() << '\n';
        return kNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kInvalid;
    }
}

}  // namespace rseq::cli
