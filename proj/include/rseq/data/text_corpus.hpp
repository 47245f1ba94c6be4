#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rseq/errors.hpp"

namespace rseq {

enum class TextLevel { chars, words };

inline TextLevel parse_text_level(const std::string& s) {
    if (s == "char" || s == "chars") return TextLevel::chars;
    if (s == "word" || s == "words") return TextLevel::words;
    throw ConfigError("unknown text level '" + s + "' (expected char or word)");
}

// Symbol <-> id bijection. Ids 0 and 1 are reserved for padding and
// unknown symbols; corpus symbols follow in lexicographic order.
class Vocab {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;
    static constexpr std::int32_t kFirstSymbol = 2;

    Vocab() = default;

    static Vocab from_symbols(const std::set<std::string>& symbols) {
        Vocab v;
        v.symbols_ = {"<pad>", "<unk>"};
        for (const auto& s : symbols) {
            v.ids_[s] = static_cast<std::int32_t>(v.symbols_.size());
            v.symbols_.push_back(s);
        }
        return v;
    }

    std::size_t size() const { return symbols_.size(); }

    std::int32_t id(const std::string& symbol) const {
        const auto it = ids_.find(symbol);
        return it == ids_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& symbol) const { return ids_.count(symbol) != 0; }

    const std::string& symbol(std::int32_t id) const { return symbols_.at(static_cast<std::size_t>(id)); }

private:
    std::vector<std::string> symbols_;
    std::map<std::string, std::int32_t> ids_;
};

namespace detail {

// Splits UTF-8 text into code points, rejecting malformed sequences.
inline std::vector<std::string> utf8_chars(const std::string& text, const std::string& origin) {
    std::vector<std::string> out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 0;
        if (c < 0x80) len = 1;
        else if ((c & 0xE0) == 0xC0 && c >= 0xC2) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0 && c <= 0xF4) len = 4;
        if (len == 0 || i + len > text.size()) {
            throw IngestionError(origin + ": invalid UTF-8 at byte " + std::to_string(i));
        }
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
                throw IngestionError(origin + ": invalid UTF-8 at byte " + std::to_string(i + k));
            }
        }
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

inline std::vector<std::string> tokenize(const std::string& text, TextLevel level, const std::string& origin) {
    auto chars = utf8_chars(text, origin);  // validates the encoding for both levels
    if (level == TextLevel::chars) return chars;
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

struct TextCorpus {
    Vocab vocab;
    std::vector<std::int32_t> train, valid, test;

    const std::vector<std::int32_t>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val" || name == "valid") return valid;
        if (name == "test") return test;
        throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
    }
};

/// Reads train.txt, valid.txt and test.txt from `dir`. The vocabulary is
/// built from the training split only; unseen symbols in the other splits
/// map to Vocab::kUnk.
inline TextCorpus load_text_corpus(const std::filesystem::path& dir, TextLevel level) {
    const auto train_text = detail::read_file(dir / "train.txt");
    const auto valid_text = detail::read_file(dir / "valid.txt");
    const auto test_text = detail::read_file(dir / "test.txt");
    const auto train_syms = detail::tokenize(train_text, level, (dir / "train.txt").string());
    if (train_syms.empty()) throw IngestionError((dir / "train.txt").string() + ": empty corpus");

    TextCorpus c;
    c.vocab = Vocab::from_symbols(std::set<std::string>(train_syms.begin(), train_syms.end()));
    const auto encode = [&](const std::vector<std::string>& syms) {
        std::vector<std::int32_t> ids;
        ids.reserve(syms.size());
        for (const auto& s : syms) ids.push_back(c.vocab.id(s));
        return ids;
    };
    c.train = encode(train_syms);
    c.valid = encode(detail::tokenize(valid_text, level, (dir / "valid.txt").string()));
    c.test = encode(detail::tokenize(test_text, level, (dir / "test.txt").string()));
    return c;
}

// Negative log-likelihood (nats per symbol) of `eval` under add-one
// smoothed unigram frequencies estimated on `train`.
inline double unigram_nll(const std::vector<std::int32_t>& train, const std::vector<std::int32_t>& eval,
                          std::size_t vocab_size) {
    std::vector<double> counts(vocab_size, 1.0);
    for (auto id : train) counts[static_cast<std::size_t>(id)] += 1.0;
    const double total = static_cast<double>(train.size() + vocab_size);
    double nll = 0;
    for (auto id : eval) nll -= std::log(counts[static_cast<std::size_t>(id)] / total);
    return eval.empty() ? 0.0 : nll / static_cast<double>(eval.size());
}

}  // namespace rseq
