#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

#include "rseq/model/model.hpp"
#include "rseq/training/state.hpp"

namespace rseq {

// Checkpoint layout, little-endian throughout:
//   "RSEQCKPT" | u32 version | u64 header length | header (key = value text)
//   u64 tensor count | per tensor: u32 name length, name, u32 rank,
//   rank x u64 extents, data
// Data is f32, or f64 when the header says precision = f64. Adam moments are
// stored as "opt.m/<param>" and "opt.v/<param>".
inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
    RTransformer<S> model;
    TrainState<S> state;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void put_bytes(std::string_view s) { buf_.append(s); }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

    template <typename T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    std::string get_bytes(std::size_t n) { return std::string(take(n), n); }
    bool done() const { return pos_ == data_.size(); }

private:
    const char* take(std::size_t n) {
        if (n > data_.size() - pos_) {
            throw CheckpointTruncatedError(origin_ + ": truncated at byte " + std::to_string(data_.size()) +
                                           " (needed " + std::to_string(n) + " more)");
        }
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::string data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

template <typename S>
constexpr const char* precision_name() {
    return std::is_same_v<S, float> ? "f32" : "f64";
}

template <typename S>
void put_tensor(ByteWriter& w, const std::string& name, const Tensor<S>& t) {
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.put(static_cast<std::uint64_t>(e));
    for (auto x : t.data()) w.put(x);
}

struct RawTensor {
    Shape shape;
    std::vector<double> data;
};

}  // namespace detail

template <typename S>
void save_checkpoint(const RTransformer<S>& model, const TrainState<S>& state, const std::filesystem::path& path) {
    kv::Entries header{{"precision", detail::precision_name<S>()}};
    for (auto& [k, v] : model.config().to_entries()) header.emplace_back("model." + k, v);
    header.insert(header.end(), {{"state.step", std::to_string(state.step)},
                                 {"state.epoch", std::to_string(state.epoch)},
                                 {"state.lr", kv::fmt_double(state.lr)},
                                 {"state.initial_lr", kv::fmt_double(state.initial_lr)},
                                 {"state.best_val", kv::fmt_double(state.best_val)},
                                 {"state.plateau_counter", std::to_string(state.plateau_counter)},
                                 {"state.rng", state.rng.serialize()}});
    const auto header_text = kv::format(header);

    const auto named = model.named_parameters();
    if (!state.m.empty() && (state.m.size() != named.size() || state.v.size() != named.size())) {
        throw UsageError("save_checkpoint: optimizer moments do not match the model's parameters");
    }
    detail::ByteWriter w;
    w.put_bytes(std::string_view(kCheckpointMagic, 8));
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint64_t>(header_text.size()));
    w.put_bytes(header_text);
    w.put(static_cast<std::uint64_t>(named.size() * (state.m.empty() ? 1 : 3)));
    for (const auto& [name, t] : named) detail::put_tensor(w, name, t);
    for (std::size_t i = 0; i < state.m.size(); ++i) detail::put_tensor(w, "opt.m/" + named[i].first, state.m[i]);
    for (std::size_t i = 0; i < state.v.size(); ++i) detail::put_tensor(w, "opt.v/" + named[i].first, state.v[i]);

    // Write-then-rename so an interrupted save never clobbers the previous file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw CheckpointError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    detail::ByteReader r(ss.str(), path.string());

    if (r.get_bytes(8) != std::string_view(kCheckpointMagic, 8)) {
        throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointVersionError(path.string() + ": format version " + std::to_string(version) +
                                     ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    const auto header_len = r.get<std::uint64_t>();
    const auto header = kv::parse(r.get_bytes(header_len));

    std::string precision = "f32";
    ModelConfig cfg;
    Checkpoint<S> ck;
    for (const auto& [k, v] : header) {
        if (k == "precision") precision = v;
        else if (k.rfind("model.", 0) == 0) {
            if (!cfg.set(k.substr(6), v)) throw CheckpointError(path.string() + ": unknown header key " + k);
        } else if (k == "state.step") ck.state.step = kv::to_uint(k, v);
        else if (k == "state.epoch") ck.state.epoch = kv::to_uint(k, v);
        else if (k == "state.lr") ck.state.lr = kv::to_double(k, v);
        else if (k == "state.initial_lr") ck.state.initial_lr = kv::to_double(k, v);
        else if (k == "state.best_val") ck.state.best_val = kv::to_double(k, v);
        else if (k == "state.plateau_counter") ck.state.plateau_counter = kv::to_uint(k, v);
        else if (k == "state.rng") ck.state.rng = Rng::deserialize(v);
        else throw CheckpointError(path.string() + ": unknown header key " + k);
    }
    if (precision != "f32" && precision != "f64") throw CheckpointError(path.string() + ": unknown precision " + precision);
    const bool wide = precision == "f64";

    std::map<std::string, detail::RawTensor> tensors;
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name = r.get_bytes(r.get<std::uint32_t>());
        detail::RawTensor t;
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t a = 0; a < rank; ++a) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        const auto n = shape_size(t.shape);
        t.data.resize(n);
        for (std::size_t j = 0; j < n; ++j) t.data[j] = wide ? r.get<double>() : double(r.get<float>());
        tensors[name] = std::move(t);
    }
    if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after the last tensor");

    Rng init(0);
    ck.model = RTransformer<S>::create(cfg, init);
    const auto fill = [&](const std::string& name, Tensor<S>& dst) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw CheckpointShapeError(path.string() + ": missing tensor " + name);
        if (it->second.shape != dst.shape()) {
            throw CheckpointShapeError(path.string() + ": tensor " + name + " has shape " +
                                       shape_str(it->second.shape) + ", model expects " + shape_str(dst.shape()));
        }
        auto out = dst.mutable_data();
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<S>(it->second.data[j]);
        tensors.erase(it);
    };
    auto named = ck.model.named_parameters();
    for (auto& [name, t] : named) fill(name, t);
    if (tensors.count("opt.m/" + named.front().first)) {
        for (auto& [name, t] : named) {
            ck.state.m.push_back(Tensor<S>::zeros(t.shape()));
            ck.state.v.push_back(Tensor<S>::zeros(t.shape()));
            fill("opt.m/" + name, ck.state.m.back());
            fill("opt.v/" + name, ck.state.v.back());
        }
    }
    if (!tensors.empty()) {
        throw CheckpointShapeError(path.string() + ": unexpected tensor " + tensors.begin()->first);
    }
    return ck;
}

}  // namespace rseq
