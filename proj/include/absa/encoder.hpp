#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "absa/checkpoint.hpp"
#include "absa/error.hpp"
#include "absa/ops.hpp"
#include "absa/params.hpp"
#include "absa/tokenizer.hpp"

namespace absa {

/// Post-layer-norm transformer encoder settings.
struct EncoderConfig {
    std::string preset = "tiny";
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t hidden = 64;
    std::size_t ffn = 0;  // 0 means 4 * hidden
    std::size_t max_len = kDefaultMaxLen;
    std::size_t vocab_size = 0;
    double dropout = 0.1;
    double init_std = 0.02;

    std::size_t ffn_dim() const { return ffn ? ffn : 4 * hidden; }
    std::size_t head_dim() const { return hidden / heads; }

    void validate() const {
        if (layers < 1 || heads < 1 || hidden < 1 || max_len < 1 || vocab_size < 1)
            throw ConfigError("encoder: layers, heads, hidden, max_len and vocab_size must all be at least 1");
        if (hidden % heads != 0)
            throw ConfigError("encoder: hidden size " + std::to_string(hidden) + " is not divisible by " +
                              std::to_string(heads) + " heads");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
    }
};

/// Named presets. "covid-twitter-bert" uses 16 heads because 1024 is not
/// divisible by 12.
inline EncoderConfig encoder_preset(const std::string& name) {
    EncoderConfig c;
    c.preset = name;
    if (name == "tiny") {
        c.layers = 2, c.heads = 2, c.hidden = 64;
    } else if (name == "small") {
        c.layers = 4, c.heads = 4, c.hidden = 128;
    } else if (name == "bert-base") {
        c.layers = 12, c.heads = 12, c.hidden = 768;
    } else if (name == "covid-twitter-bert") {
        c.layers = 12, c.heads = 16, c.hidden = 1024;
    } else {
        throw ConfigError("unknown encoder preset '" + name + "' (tiny, small, bert-base, covid-twitter-bert)");
    }
    return c;
}

/// Every encoder parameter with its shape, in a fixed order.
inline std::vector<std::pair<std::string, Shape>> encoder_parameter_shapes(const EncoderConfig& c) {
    const std::size_t D = c.hidden, F = c.ffn_dim();
    std::vector<std::pair<std::string, Shape>> out{
        {"encoder/embeddings/word", {c.vocab_size, D}},
        {"encoder/embeddings/position", {c.max_len, D}},
        {"encoder/embeddings/segment", {2, D}},
        {"encoder/embeddings/ln/gamma", {D}},
        {"encoder/embeddings/ln/beta", {D}},
    };
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::string p = "encoder/layer" + std::to_string(l) + "/";
        for (const char* proj : {"query", "key", "value", "output"}) {
            out.emplace_back(p + "attention/" + proj + "/weight", Shape{D, D});
            out.emplace_back(p + "attention/" + proj + "/bias", Shape{D});
        }
        out.emplace_back(p + "attention/ln/gamma", Shape{D});
        out.emplace_back(p + "attention/ln/beta", Shape{D});
        out.emplace_back(p + "ffn/in/weight", Shape{F, D});
        out.emplace_back(p + "ffn/in/bias", Shape{F});
        out.emplace_back(p + "ffn/out/weight", Shape{D, F});
        out.emplace_back(p + "ffn/out/bias", Shape{D});
        out.emplace_back(p + "ffn/ln/gamma", Shape{D});
        out.emplace_back(p + "ffn/ln/beta", Shape{D});
    }
    return out;
}

inline std::size_t encoder_parameter_count(const EncoderConfig& c) {
    std::size_t n = 0;
    for (const auto& [name, shape] : encoder_parameter_shapes(c)) n += shape_size(shape);
    return n;
}

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Truncated normal for matrices, zeros for biases and betas, ones for gammas.
template <class T>
Tensor<T> init_tensor(const std::string& name, const Shape& shape, double std, std::mt19937_64& rng) {
    if (ends_with(name, "/gamma")) return Tensor<T>::filled(shape, T{1});
    if (ends_with(name, "/bias") || ends_with(name, "/beta")) return Tensor<T>(shape);
    return truncated_normal<T>(shape, std, rng);
}

template <class T>
void check_shapes(const ParameterStore<T>& params, const std::vector<std::pair<std::string, Shape>>& shapes) {
    for (const auto& [name, shape] : shapes) {
        if (!params.contains(name)) throw DimensionError("missing parameter " + name);
        const auto& have = params[name].shape;
        if (have != shape)
            throw DimensionError("parameter " + name + " is " + shape_str(have) + ", configuration expects " + shape_str(shape));
    }
}

}  // namespace detail

template <class T>
void init_encoder(ParameterStore<T>& params, const EncoderConfig& c, std::mt19937_64& rng) {
    c.validate();
    for (const auto& [name, shape] : encoder_parameter_shapes(c))
        params.add(name, detail::init_tensor<T>(name, shape, c.init_std, rng));
}

/// Optional capture of intermediate values for inspection.
template <class T>
struct EncoderTrace {
    std::vector<Tensor<T>> attention;  // per layer, [B*H x L x L]
};

/// Flattened per-batch index arrays shared by the encoder and the heads.
template <class T>
struct BatchMasks {
    std::size_t batch = 0;
    std::size_t len = 0;
    std::vector<std::size_t> ids, positions, segments;
    std::vector<T> pad, aspect;
};

template <class T>
BatchMasks<T> batch_masks(std::span<const EncodedInput> inputs) {
    if (inputs.empty()) throw ContractError("empty batch");
    BatchMasks<T> m;
    m.batch = inputs.size();
    m.len = inputs[0].length();
    for (const auto& in : inputs) {
        if (in.length() != m.len)
            throw DimensionError("batch mixes sequence lengths " + std::to_string(m.len) + " and " + std::to_string(in.length()));
        for (std::size_t l = 0; l < m.len; ++l) {
            m.ids.push_back(in.ids[l]);
            m.positions.push_back(l);
            m.segments.push_back(in.segment[l]);
            m.pad.push_back(static_cast<T>(in.pad_mask[l]));
            m.aspect.push_back(static_cast<T>(in.aspect_mask[l]));
        }
    }
    return m;
}

/// Hidden states [B x L x D] for a batch of equal-length encoded inputs.
/// Each layer: multi-head self-attention with padded keys masked out,
/// residual + layer norm, ReLU feed-forward, residual + layer norm.
template <class T>
Var<T> encode_batch(Tape<T>& tape, ParameterStore<T>& params, const EncoderConfig& c,
                    std::span<const EncodedInput> inputs, bool training, std::mt19937_64& rng,
                    EncoderTrace<T>* trace = nullptr) {
    c.validate();
    detail::check_shapes(params, encoder_parameter_shapes(c));
    const auto m = batch_masks<T>(inputs);
    const std::size_t B = m.batch, L = m.len, D = c.hidden, H = c.heads;
    if (L > c.max_len)
        throw DimensionError("sequence length " + std::to_string(L) + " exceeds encoder max_len " + std::to_string(c.max_len));
    auto P = [&](const std::string& name) { return tape.parameter(params[name]); };

    Var<T> x = add(add(embedding(P("encoder/embeddings/word"), std::span<const std::size_t>(m.ids)),
                       embedding(P("encoder/embeddings/position"), std::span<const std::size_t>(m.positions))),
                   embedding(P("encoder/embeddings/segment"), std::span<const std::size_t>(m.segments)));
    x = layer_norm(x, P("encoder/embeddings/ln/gamma"), P("encoder/embeddings/ln/beta"));
    x = dropout(x, c.dropout, training, rng);

    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(c.head_dim()));
    for (std::size_t l = 0; l < c.layers; ++l) {
        const std::string p = "encoder/layer" + std::to_string(l) + "/";
        auto proj = [&](const char* name, Var<T> in) {
            return linear(in, P(p + "attention/" + name + "/weight"), P(p + "attention/" + name + "/bias"));
        };
        Var<T> q = split_heads(proj("query", x), B, L, H);
        Var<T> k = split_heads(proj("key", x), B, L, H);
        Var<T> v = split_heads(proj("value", x), B, L, H);
        Var<T> probs = masked_softmax(scale(bmm(q, k, true), inv_sqrt), std::span<const T>(m.pad), H);
        if (trace) trace->attention.push_back(probs.value());
        Var<T> ctx = merge_heads(bmm(probs, v), B, H);
        Var<T> attn = dropout(proj("output", ctx), c.dropout, training, rng);
        x = layer_norm(add(x, attn), P(p + "attention/ln/gamma"), P(p + "attention/ln/beta"));

        Var<T> h = relu(linear(x, P(p + "ffn/in/weight"), P(p + "ffn/in/bias")));
        h = dropout(linear(h, P(p + "ffn/out/weight"), P(p + "ffn/out/bias")), c.dropout, training, rng);
        x = layer_norm(add(x, h), P(p + "ffn/ln/gamma"), P(p + "ffn/ln/beta"));
    }
    return reshape(x, Shape{B, L, D});
}

// ---------------------------------------------------------------------------
// Precomputed per-token features
//
// Container with one [L x D] tensor per example named "ex<index>", where
// <index> is the example's 0-based position in its split file, plus meta
// "kind precomputed-embeddings" and "dim <D>".

template <class T>
class PrecomputedEmbeddings {
public:
    PrecomputedEmbeddings(std::map<std::size_t, Tensor<T>> rows, std::size_t dim, std::size_t len)
        : rows_(std::move(rows)), dim_(dim), len_(len) {}

    std::size_t dim() const { return dim_; }
    std::size_t length() const { return len_; }
    std::size_t size() const { return rows_.size(); }

    const Tensor<T>& get(std::size_t index) const {
        auto it = rows_.find(index);
        if (it == rows_.end()) throw LookupError("no precomputed embedding for example id " + std::to_string(index));
        return it->second;
    }

    /// Stacked [B x L x D] features; callers wrap this in a tape constant, so
    /// no gradient ever reaches the stored features.
    Tensor<T> batch(std::span<const std::size_t> indices) const {
        Tensor<T> out({indices.size(), len_, dim_});
        for (std::size_t b = 0; b < indices.size(); ++b) {
            const auto& t = get(indices[b]);
            std::copy(t.values.begin(), t.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(b * len_ * dim_));
        }
        return out;
    }

    const std::map<std::size_t, Tensor<T>>& rows() const { return rows_; }

private:
    std::map<std::size_t, Tensor<T>> rows_;
    std::size_t dim_;
    std::size_t len_;
};

template <class T>
void export_precomputed(const std::filesystem::path& path, const std::map<std::size_t, Tensor<T>>& rows) {
    Checkpoint<T> ckpt;
    ckpt.meta["kind"] = "precomputed-embeddings";
    if (!rows.empty()) ckpt.meta["dim"] = std::to_string(rows.begin()->second.shape.back());
    for (const auto& [index, t] : rows) ckpt.tensors["ex" + std::to_string(index)] = Tensor<T>(t.shape, t.values);
    save_checkpoint(path, ckpt);
}

/// `expected_dim` 0 accepts the width recorded in the file.
template <class T>
PrecomputedEmbeddings<T> load_precomputed(const std::filesystem::path& path, std::size_t expected_dim = 0) {
    auto ckpt = load_checkpoint<T>(path);
    if (expected_dim == 0) {
        auto it = ckpt.meta.find("dim");
        if (it == ckpt.meta.end()) throw ParseError(path.string() + ": precomputed features lack a 'dim' entry");
        if (it->second.empty() || it->second.find_first_not_of("0123456789") != std::string::npos)
            throw ParseError(path.string() + ": malformed 'dim' entry '" + it->second + "'");
        expected_dim = std::stoull(it->second);
    }
    std::map<std::size_t, Tensor<T>> rows;
    std::size_t len = 0;
    for (auto& [name, t] : ckpt.tensors) {
        if (name.size() < 3 || name.compare(0, 2, "ex") != 0 ||
            name.find_first_not_of("0123456789", 2) != std::string::npos)
            throw ParseError(path.string() + ": tensor '" + name + "' is not named ex<index>");
        if (t.rank() != 2) throw DimensionError(path.string() + ": " + name + " is " + shape_str(t.shape) + ", expected [L x D]");
        if (t.shape[1] != expected_dim)
            throw DimensionError(path.string() + ": features have D=" + std::to_string(t.shape[1]) + ", expected D=" +
                                 std::to_string(expected_dim));
        if (len == 0) len = t.shape[0];
        if (t.shape[0] != len)
            throw DimensionError(path.string() + ": " + name + " has length " + std::to_string(t.shape[0]) + ", others " +
                                 std::to_string(len));
        rows.emplace(std::stoull(name.substr(2)), std::move(t));
    }
    return PrecomputedEmbeddings<T>(std::move(rows), expected_dim, len);
}

}  // namespace absa
