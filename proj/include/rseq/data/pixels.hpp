#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "rseq/data/batch.hpp"
#include "rseq/errors.hpp"
#include "rseq/numerics/rng.hpp"

namespace rseq {

// Raw pixel format, all integers little-endian:
//   images: u64 count, u64 height, u64 width, count*height*width u8 pixels (row-major)
//   labels: u64 count, count u8 labels
struct PixelDataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;  // [count x height*width], scaled to [0,1]
    std::vector<std::int32_t> labels;

    std::size_t count() const { return labels.size(); }
    std::size_t seq_len() const { return height * width; }
};

namespace detail {

inline std::uint64_t read_u64_le(std::istream& in, const std::string& origin) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw IngestionError(origin + ": truncated header");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::vector<unsigned char> read_bytes(std::istream& in, std::size_t n, const std::string& origin) {
    std::vector<unsigned char> buf(n);
    if (n && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
        throw IngestionError(origin + ": expected " + std::to_string(n) + " payload bytes, file is short");
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IngestionError(origin + ": trailing bytes after payload");
    return buf;
}

}  // namespace detail

inline PixelDataset load_pixel_sequences(const std::filesystem::path& images, const std::filesystem::path& labels) {
    std::ifstream im(images, std::ios::binary);
    if (!im) throw IngestionError("cannot open " + images.string());
    std::ifstream lb(labels, std::ios::binary);
    if (!lb) throw IngestionError("cannot open " + labels.string());

    const auto count = detail::read_u64_le(im, images.string());
    const auto h = detail::read_u64_le(im, images.string());
    const auto w = detail::read_u64_le(im, images.string());
    const auto label_count = detail::read_u64_le(lb, labels.string());
    if (label_count != count) {
        throw IngestionError("pixel data: " + std::to_string(count) + " images but " + std::to_string(label_count) +
                             " labels");
    }
    if (h == 0 || w == 0) throw IngestionError(images.string() + ": zero image dimension");

    const auto raw = detail::read_bytes(im, count * h * w, images.string());
    const auto raw_labels = detail::read_bytes(lb, count, labels.string());

    PixelDataset ds;
    ds.height = h;
    ds.width = w;
    ds.pixels.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) ds.pixels[i] = raw[i] / 255.0;
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    return ds;
}

// Convenience for the conventional <dir>/{split}-images.bin, {split}-labels.bin layout.
inline PixelDataset load_pixel_split(const std::filesystem::path& dir, const std::string& split) {
    return load_pixel_sequences(dir / (split + "-images.bin"), dir / (split + "-labels.bin"));
}

inline void write_pixel_files(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::size_t height, std::size_t width, const std::vector<std::uint8_t>& pixels,
                              const std::vector<std::uint8_t>& label_bytes) {
    if (pixels.size() != label_bytes.size() * height * width) {
        throw DataError("write_pixel_files: pixel buffer does not match count*height*width");
    }
    std::ofstream im(images, std::ios::binary);
    std::ofstream lb(labels, std::ios::binary);
    if (!im || !lb) throw IngestionError("cannot write pixel files next to " + images.string());
    detail::write_u64_le(im, label_bytes.size());
    detail::write_u64_le(im, height);
    detail::write_u64_le(im, width);
    im.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    detail::write_u64_le(lb, label_bytes.size());
    lb.write(reinterpret_cast<const char*>(label_bytes.data()), static_cast<std::streamsize>(label_bytes.size()));
}

/// Groups the dataset into seq_classify batches of `batch_size` images
/// (the trailing partial batch is dropped). Order is shuffled with `rng`
/// when given, else kept.
inline std::vector<Batch> pixel_batches(const PixelDataset& ds, std::size_t batch_size, Rng* rng = nullptr) {
    if (batch_size == 0) throw DataError("pixel_batches: batch size must be positive");
    std::vector<std::size_t> order(ds.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (rng) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng->uniform_int(i)]);
    }
    const auto T = ds.seq_len();
    std::vector<Batch> out;
    for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
        Batch b;
        b.task = TaskKind::seq_classify;
        b.batch_size = batch_size;
        b.seq_len = T;
        b.feature_dim = 1;
        b.features.reserve(batch_size * T);
        for (std::size_t k = 0; k < batch_size; ++k) {
            const auto idx = order[start + k];
            b.features.insert(b.features.end(), ds.pixels.begin() + idx * T, ds.pixels.begin() + (idx + 1) * T);
            b.targets.push_back(ds.labels[idx]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

// 8x8 bitmap glyphs for the ten digits, one row per byte, MSB = leftmost.
inline constexpr std::array<std::array<std::uint8_t, 8>, 10> kDigitGlyphs = {{
    {0x3C, 0x66, 0x6E, 0x76, 0x66, 0x66, 0x3C, 0x00},
    {0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x7E, 0x00},
    {0x3C, 0x66, 0x06, 0x0C, 0x30, 0x60, 0x7E, 0x00},
    {0x3C, 0x66, 0x06, 0x1C, 0x06, 0x66, 0x3C, 0x00},
    {0x0C, 0x1C, 0x3C, 0x6C, 0x7E, 0x0C, 0x0C, 0x00},
    {0x7E, 0x60, 0x7C, 0x06, 0x06, 0x66, 0x3C, 0x00},
    {0x3C, 0x60, 0x7C, 0x66, 0x66, 0x66, 0x3C, 0x00},
    {0x7E, 0x06, 0x0C, 0x18, 0x30, 0x30, 0x30, 0x00},
    {0x3C, 0x66, 0x66, 0x3C, 0x66, 0x66, 0x3C, 0x00},
    {0x3C, 0x66, 0x66, 0x3E, 0x06, 0x0C, 0x38, 0x00},
}};

/// Noisy 8x8 digits: each glyph is shifted by up to one pixel, its ink
/// intensity jittered and pixels flipped with probability `flip`.
/// Returns (pixels, labels) ready for write_pixel_files.
inline std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> synth_digits(Rng& rng, std::size_t count,
                                                                                  double flip = 0.03) {
    std::vector<std::uint8_t> pixels(count * 64, 0);
    std::vector<std::uint8_t> labels(count);
    for (std::size_t n = 0; n < count; ++n) {
        const auto digit = rng.uniform_int(10);
        labels[n] = static_cast<std::uint8_t>(digit);
        const int dr = static_cast<int>(rng.uniform_int(2));
        const int dc = static_cast<int>(rng.uniform_int(3)) - 1;
        const auto ink = static_cast<std::uint8_t>(160 + rng.uniform_int(96));
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                const int sr = r - dr, sc = c - dc;
                bool on = sr >= 0 && sr < 8 && sc >= 0 && sc < 8 && ((kDigitGlyphs[digit][sr] >> (7 - sc)) & 1);
                if (rng.bernoulli(flip)) on = !on;
                pixels[n * 64 + r * 8 + c] = on ? ink : static_cast<std::uint8_t>(rng.uniform_int(40));
            }
        }
    }
    return {std::move(pixels), std::move(labels)};
}

}  // namespace rseq
