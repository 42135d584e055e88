#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "absa/dataset.hpp"
#include "absa/error.hpp"
#include "absa/utf8.hpp"

namespace absa {

/// A token with its half-open code point span in the source text.
struct Token {
    std::string text;
    std::size_t begin = 0;
    std::size_t end = 0;

    friend bool operator==(const Token&, const Token&) = default;
};

namespace detail {

inline bool is_space(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f' || c == 0x85 ||
           c == 0xA0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
           c == 0x205F || c == 0x3000;
}

inline bool is_ascii_punct(char32_t c) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
}

}  // namespace detail

/// Lowercases ASCII letters, splits on whitespace and emits every ASCII
/// punctuation character as its own token.
inline std::vector<Token> tokenize(std::string_view text) {
    const auto cps = utf8::decode(text);
    std::vector<Token> out;
    std::u32string cur;
    std::size_t cur_begin = 0;
    auto flush = [&](std::size_t end) {
        if (!cur.empty()) out.push_back(Token{utf8::encode(cur), cur_begin, end});
        cur.clear();
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
        char32_t c = cps[i];
        if (detail::is_space(c)) {
            flush(i);
        } else if (detail::is_ascii_punct(c)) {
            flush(i);
            out.push_back(Token{std::string(1, static_cast<char>(c)), i, i + 1});
        } else {
            if (cur.empty()) cur_begin = i;
            if (c >= U'A' && c <= U'Z') c += 32;
            cur.push_back(c);
        }
    }
    flush(cps.size());
    return out;
}

inline std::vector<std::string> token_strings(std::string_view text) {
    std::vector<std::string> out;
    for (auto& t : tokenize(text)) out.push_back(std::move(t.text));
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
public:
    static constexpr std::size_t kPad = 0, kUnk = 1, kCls = 2, kSep = 3;
    static constexpr const char* kReserved[4] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    static constexpr const char* kHeader = "#absa-vocab v1";

    Vocab() {
        for (const char* r : kReserved) push(r);
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t min_freq() const { return min_freq_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    std::size_t id(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }
    bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    const std::string& token(std::size_t id) const {
        if (id >= tokens_.size()) throw LookupError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
        return tokens_[id];
    }

    std::size_t add(const std::string& token) {
        if (frozen_) throw ContractError("vocabulary is frozen");
        if (auto it = ids_.find(token); it != ids_.end()) return it->second;
        return push(token);
    }

    std::string serialize() const {
        std::ostringstream out;
        out << kHeader << " min_freq=" << min_freq_ << " size=" << size() << "\n";
        for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
        return out.str();
    }

    static Vocab parse(const std::string& text, const std::string& origin = "<vocab>") {
        std::istringstream in(text);
        std::string line;
        auto fail = [&](std::size_t line_no, const std::string& why) {
            return ParseError(origin + ":" + std::to_string(line_no) + ": " + why);
        };
        if (!std::getline(in, line) || line.rfind(kHeader, 0) != 0) throw fail(1, "missing '#absa-vocab v1' header");
        Vocab v;
        v.tokens_.clear();
        v.ids_.clear();
        std::size_t declared = 0;
        {
            std::istringstream hs(line.substr(std::string(kHeader).size()));
            for (std::string kv; hs >> kv;) {
                auto eq = kv.find('=');
                if (eq == std::string::npos) throw fail(1, "bad header field '" + kv + "'");
                const auto key = kv.substr(0, eq);
                const auto val = kv.substr(eq + 1);
                try {
                    if (key == "min_freq") v.min_freq_ = std::stoul(val);
                    else if (key == "size") declared = std::stoul(val);
                    else throw fail(1, "unknown header field '" + key + "'");
                } catch (const std::logic_error&) {
                    throw fail(1, "bad header value '" + kv + "'");
                }
            }
        }
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            const auto tab = line.find('\t');
            if (tab == std::string::npos || tab == 0) throw fail(line_no, "expected token<TAB>id");
            std::size_t id = 0;
            try {
                std::size_t used = 0;
                id = std::stoul(line.substr(tab + 1), &used);
                if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
            } catch (const std::logic_error&) {
                throw fail(line_no, "bad id");
            }
            if (id != v.tokens_.size()) throw fail(line_no, "ids must be dense and ascending");
            const auto tok = line.substr(0, tab);
            if (v.ids_.count(tok)) throw fail(line_no, "duplicate token '" + tok + "'");
            v.push(tok);
        }
        if (v.size() != declared) throw fail(line_no, "header declares " + std::to_string(declared) + " tokens, found " + std::to_string(v.size()));
        for (std::size_t i = 0; i < 4; ++i)
            if (v.size() <= i || v.tokens_[i] != kReserved[i]) throw fail(i + 2, std::string("reserved token ") + kReserved[i] + " missing");
        v.frozen_ = true;
        return v;
    }

    void save(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << serialize();
    }

    static Vocab load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_ && a.min_freq_ == b.min_freq_; }

private:
    template <class Texts>
    friend Vocab build_vocab(const Texts&, std::size_t);

    std::size_t push(const std::string& token) {
        ids_.emplace(token, tokens_.size());
        tokens_.push_back(token);
        return tokens_.size() - 1;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
    std::size_t min_freq_ = 1;
    bool frozen_ = false;
};

/// Tokens with frequency >= min_freq, ordered by frequency (descending) and
/// then lexicographically, after the four reserved ids.
template <class Texts>
Vocab build_vocab(const Texts& corpus, std::size_t min_freq) {
    if (std::empty(corpus)) throw ConfigError("cannot build a vocabulary from an empty corpus");
    if (min_freq == 0) throw ConfigError("min_freq must be at least 1");
    std::map<std::string, std::size_t> freq;
    for (const auto& text : corpus) {
        if constexpr (std::is_same_v<std::decay_t<decltype(text)>, Example>) {
            for (auto& t : tokenize(text.text)) ++freq[t.text];
        } else {
            for (auto& t : tokenize(text)) ++freq[t.text];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    v.min_freq_ = min_freq;
    for (const auto& [tok, n] : ranked)
        if (n >= min_freq) v.push(tok);
    v.frozen_ = true;
    return v;
}

inline Vocab build_vocab(std::initializer_list<std::string> corpus, std::size_t min_freq) {
    return build_vocab(std::vector<std::string>(corpus), min_freq);
}

// ---------------------------------------------------------------------------
// Pair encoding

/// [CLS] sentence [SEP] aspect [SEP] padding, all arrays of length L.
struct EncodedInput {
    std::vector<std::size_t> ids;
    std::vector<std::uint8_t> segment;
    std::vector<std::uint8_t> aspect_mask;
    std::vector<std::uint8_t> pad_mask;
    std::size_t sentence_len = 0;  // sentence tokens kept
    std::size_t aspect_len = 0;    // aspect-segment tokens kept

    std::size_t length() const { return ids.size(); }
    std::size_t first_sep() const { return 1 + sentence_len; }

    friend bool operator==(const EncodedInput&, const EncodedInput&) = default;
};

inline constexpr std::size_t kDefaultMaxLen = 64;

/// Truncation, when the pair does not fit in L: drop left context from the
/// front, then right context from the back, then the tail of the aspect
/// segment, then the tail of the in-sentence aspect. Each aspect copy keeps at
/// least one token; if that still does not fit the example is rejected.
inline EncodedInput encode(const Example& ex, const Vocab& vocab, std::size_t L = kDefaultMaxLen) {
    const auto sent = tokenize(ex.text);
    const auto asp = tokenize(ex.aspect);
    std::size_t a_first = sent.size(), a_last = 0;
    for (std::size_t i = 0; i < sent.size(); ++i) {
        if (sent[i].begin < ex.aspect_end && sent[i].end > ex.aspect_start) {
            a_first = std::min(a_first, i);
            a_last = i;
        }
    }
    if (a_first == sent.size() || asp.empty()) throw EncodingError("aspect '" + ex.aspect + "' has no tokens");

    std::size_t left = a_first;
    std::size_t in_aspect = a_last - a_first + 1;
    std::size_t right = sent.size() - a_last - 1;
    std::size_t seg = asp.size();
    if (L < 5) throw EncodingError("max length " + std::to_string(L) + " cannot hold an aspect pair");
    std::size_t excess = (left + in_aspect + right + seg + 3 > L) ? left + in_aspect + right + seg + 3 - L : 0;
    auto cut = [&](std::size_t& part, std::size_t keep) {
        const std::size_t d = std::min(excess, part - std::min(part, keep));
        part -= d;
        excess -= d;
    };
    const std::size_t left_full = left;
    cut(left, 0);
    cut(right, 0);
    cut(seg, 1);
    cut(in_aspect, 1);
    if (excess > 0) throw EncodingError("aspect truncated away at max length " + std::to_string(L));

    EncodedInput out;
    out.ids.assign(L, Vocab::kPad);
    out.segment.assign(L, 0);
    out.aspect_mask.assign(L, 0);
    out.pad_mask.assign(L, 0);
    std::size_t pos = 0;
    auto put = [&](std::size_t id, std::uint8_t segment, bool aspect) {
        out.ids[pos] = id;
        out.segment[pos] = segment;
        out.aspect_mask[pos] = aspect ? 1 : 0;
        out.pad_mask[pos] = 1;
        ++pos;
    };
    put(Vocab::kCls, 0, false);
    const std::size_t from = left_full - left;
    const std::size_t to = a_first + in_aspect + right;
    for (std::size_t i = from; i < to; ++i) {
        const bool is_aspect = i >= a_first && i < a_first + in_aspect;
        put(vocab.id(sent[i].text), 0, is_aspect);
    }
    out.sentence_len = to - from;
    put(Vocab::kSep, 0, false);
    for (std::size_t i = 0; i < seg; ++i) put(vocab.id(asp[i].text), 1, false);
    out.aspect_len = seg;
    put(Vocab::kSep, 1, false);
    return out;
}

inline std::vector<EncodedInput> encode_all(const std::vector<Example>& examples, const Vocab& vocab, std::size_t L) {
    std::vector<EncodedInput> out;
    out.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        try {
            out.push_back(encode(examples[i], vocab, L));
        } catch (const EncodingError& e) {
            throw EncodingError("example " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

struct DecodedInput {
    std::vector<std::string> sentence;
    std::vector<std::string> aspect;
};

inline DecodedInput decode(const EncodedInput& in, const Vocab& vocab) {
    DecodedInput out;
    for (std::size_t i = 0; i < in.sentence_len; ++i) out.sentence.push_back(vocab.token(in.ids[1 + i]));
    for (std::size_t i = 0; i < in.aspect_len; ++i) out.aspect.push_back(vocab.token(in.ids[2 + in.sentence_len + i]));
    return out;
}

}  // namespace absa
